#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ratrec/util.hpp"

namespace ratrec::corpus {

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::string title;
  std::int64_t timestamp = 0;  // milliseconds since epoch

  bool operator==(const Interaction&) const = default;
};

/// Chronological interactions of one user, ordered by (timestamp, item_id)
/// with adjacent duplicates collapsed.
struct UserSequence {
  std::string user_id;
  std::vector<Interaction> items;

  bool operator==(const UserSequence&) const = default;
};

enum class Split { Train, Valid, Test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view s);

struct SplitExample {
  std::string user_id;
  std::vector<Interaction> history;
  Interaction target;
  Split split = Split::Train;

  bool operator==(const SplitExample&) const = default;
};

struct LeaveOneOut {
  SplitExample test;
  SplitExample valid;
  std::vector<SplitExample> train;
};

struct DatasetStats {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  double avg_history_len = 0.0;
};

struct IngestReport {
  std::vector<Interaction> interactions;
  std::size_t dropped_no_title = 0;
  std::size_t skipped_malformed = 0;          // review lines
  std::size_t skipped_metadata_malformed = 0;  // metadata lines
  std::vector<std::size_t> skipped_lines;     // 1-based review line numbers
};

inline constexpr std::size_t kDefaultMinLength = 3;
inline constexpr std::size_t kDefaultMaxItems = 20;
inline constexpr std::size_t kDefaultMaxTitleChars = 120;
inline constexpr std::string_view kEllipsis = "…";

/// Joins line-delimited review records with item metadata titles.
/// Throws IoError when either file is unreadable.
IngestReport ingest_reviews(const std::filesystem::path& reviews_path,
                            const std::filesystem::path& metadata_path);

/// One sequence per user with at least min_len interactions, ordered by user_id.
std::vector<UserSequence> build_sequences(std::span<const Interaction> interactions,
                                          std::size_t min_len = kDefaultMinLength);

/// Last item is test, second-to-last is valid, every earlier prefix of length >= 1
/// predicts its successor for training. Throws PreconditionError below length 3.
LeaveOneOut leave_one_out_split(const UserSequence& seq);

DatasetStats compute_stats(std::span<const UserSequence> sequences);

/// Keeps the most recent max_items; titles longer than max_title_chars code points
/// are cut and suffixed with a single ellipsis character.
std::vector<Interaction> truncate_history(std::span<const Interaction> history,
                                          std::size_t max_items = kDefaultMaxItems,
                                          std::size_t max_title_chars = kDefaultMaxTitleChars);

/// Distinct items across sequences sorted by item_id; the candidate-sampling vocabulary.
struct CatalogItem {
  std::string item_id;
  std::string title;
  bool operator==(const CatalogItem&) const = default;
};
std::vector<CatalogItem> catalog(std::span<const UserSequence> sequences);

// Serialization --------------------------------------------------------------

json to_json(const UserSequence& seq);
UserSequence sequence_from_json(const json& j);

json to_json(const SplitExample& ex);
SplitExample split_example_from_json(const json& j);

json to_json(const DatasetStats& stats, std::size_t dropped_no_title, std::size_t skipped_malformed);

std::vector<UserSequence> read_sequences(const std::filesystem::path& path);
void write_sequences(const std::filesystem::path& path, std::span<const UserSequence> sequences);

std::vector<SplitExample> read_split(const std::filesystem::path& path);
void write_split(const std::filesystem::path& path, std::span<const SplitExample> examples);

/// Split rows for every sequence: per user test, valid, then train in prefix order.
std::vector<SplitExample> split_all(std::span<const UserSequence> sequences);

std::vector<SplitExample> select(std::span<const SplitExample> examples, Split split);

}  // namespace ratrec::corpus
