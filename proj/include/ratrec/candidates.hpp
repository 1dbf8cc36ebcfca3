#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ratrec/corpus.hpp"

namespace ratrec::eval {

/// Ground truth plus sampled negatives, in presentation order.
struct CandidateSet {
  std::string user_id;
  std::vector<corpus::CatalogItem> candidates;
  std::size_t gt_index = 0;
  std::int64_t seed = 0;

  std::vector<std::string> titles() const;
  bool operator==(const CandidateSet&) const = default;
};

inline constexpr std::size_t kDefaultNegatives = 19;

/// Draws n_neg negatives uniformly without replacement from vocab minus history_ids
/// and the ground truth, then places the ground truth at a position drawn from the
/// same stream. The stream is keyed by (seed, stream_key); stream_key defaults to
/// user_id. Items whose normalized title collides with one already drawn are passed
/// over so the rendered list stays unambiguous. Throws SamplingError when too few
/// items are eligible.
CandidateSet sample_candidates(const corpus::CatalogItem& gt, std::span<const corpus::CatalogItem> vocab,
                               const std::set<std::string, std::less<>>& history_ids, std::size_t n_neg,
                               std::int64_t seed, std::string_view user_id, std::string_view stream_key = {});

/// One candidate set per example, in example order. Train examples share a user, so
/// with per_prefix_streams the stream key becomes "<user_id>#<history length>".
std::vector<CandidateSet> sample_for_examples(std::span<const corpus::SplitExample> examples,
                                              std::span<const corpus::CatalogItem> vocab, std::size_t n_neg,
                                              std::int64_t seed, bool per_prefix_streams = false);

json to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const json& j);

void write_candidates(const std::filesystem::path& path, std::span<const CandidateSet> sets);
std::vector<CandidateSet> read_candidates(const std::filesystem::path& path);

}  // namespace ratrec::eval
