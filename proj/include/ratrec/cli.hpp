#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ratrec/error.hpp"
#include "ratrec/llm_client.hpp"
#include "ratrec/util.hpp"

namespace ratrec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitUsage = 2;

/// Nonzero process status for each error category. Config errors map to 1.
int exit_code(Error::Category category);

struct Knobs {
  std::size_t n_neg = 19;
  std::vector<std::size_t> k_set{1, 5};
  std::size_t max_items = 20;
  std::size_t max_title_chars = 120;
  double jaccard_threshold = 0.6;
  std::string inference_mode = "ranked-list";
  std::size_t ranked_k = 5;
  std::size_t min_len = 3;
  std::size_t chunk_size = 256;
  bool store_responses = false;
};

struct JudgeDomain {
  std::string name;
  std::filesystem::path split;
  std::filesystem::path candidates;
};

struct JudgeSettings {
  std::optional<std::string> model;  // key into RunConfig::models
  std::size_t n_per_domain = 100;
  std::vector<JudgeDomain> domains;  // empty: the work dir itself, as domain "default"
};

struct VariantSpec {
  std::string label;
  std::string model;
  std::optional<std::string> train_corpus;
  std::optional<std::string> inference_mode;
};

struct RunConfig {
  json raw;  // effective config after flag overrides; this is what gets hashed
  std::filesystem::path base_dir;

  std::filesystem::path workdir;
  std::filesystem::path cache_dir;
  std::optional<std::filesystem::path> reviews;
  std::optional<std::filesystem::path> metadata;

  std::map<std::string, std::int64_t, std::less<>> seeds;
  Knobs knobs;

  std::optional<llm::EndpointConfig> annotator;
  std::optional<llm::EndpointConfig> judge;
  std::map<std::string, llm::EndpointConfig, std::less<>> models;
  std::vector<VariantSpec> variants;
  JudgeSettings judge_settings;

  /// Throws ConfigError("seeds.<name>") when the seed was not given.
  std::int64_t seed(std::string_view name) const;
  const llm::EndpointConfig& model(std::string_view name) const;
  std::string sha256() const;
};

/// Parses a config document. Relative paths resolve against base_dir; errors carry the field path.
RunConfig parse_config(json raw, const std::filesystem::path& base_dir);

/// Runs one subcommand. args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace ratrec::cli
