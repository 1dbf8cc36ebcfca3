#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ratrec/candidates.hpp"
#include "ratrec/corpus.hpp"
#include "ratrec/infer_parse.hpp"
#include "ratrec/llm_client.hpp"
#include "ratrec/metrics.hpp"
#include "ratrec/prompting.hpp"

namespace ratrec::eval {

struct AtK {
  double hr = 0.0;
  double ndcg = 0.0;
  bool operator==(const AtK&) const = default;
};

struct MetricReport {
  std::string model_name;
  std::string mode;  // prompting::mode_label
  std::map<std::size_t, AtK> at_k;
  std::size_t n_evaluated = 0;
  double invalid_output_rate = 0.0;
};

enum class OutputStatus { Ok, ParseError, NoMatch };

std::string_view to_string(OutputStatus status);

struct PerUserResult {
  std::string user_id;
  Rank rank;
  OutputStatus status = OutputStatus::Ok;
  std::string response_sha256;
  std::optional<std::string> response;  // only with EvalOptions::store_responses
};

struct EvalOptions {
  std::optional<std::filesystem::path> cache_dir;
  prompting::PromptOptions prompt;
  infer::MatchOptions match;
  bool store_responses = false;
  /// Completed per-user rows are appended here as chunks finish, and a rerun skips
  /// users already present. Removed once the evaluation completes.
  std::optional<std::filesystem::path> checkpoint_path;
  std::size_t chunk_size = 256;
};

struct EvalOutcome {
  MetricReport report;
  std::vector<PerUserResult> per_user;  // test-example order
};

/// Averages per-user metrics over every evaluated user, invalid outputs included as zeros.
MetricReport aggregate(std::span<const PerUserResult> rows, std::span<const std::size_t> k_set,
                       const std::string& model_name, const std::string& mode);

/// Ground-truth rank from a model response: 1 + position of gt_index in the
/// extracted ranking. Parse failures and empty rankings are invalid.
PerUserResult score_response(const std::string& user_id, const std::string& response, const CandidateSet& candidates,
                             const infer::MatchOptions& match = {}, bool store_response = false);

/// Leave-one-out evaluation of one endpoint in one inference mode. Throws
/// PreconditionError when a test example has no candidate set, and rethrows the
/// endpoint failure (TransportError / ProtocolError) after checkpointing finished users.
EvalOutcome evaluate(std::span<const corpus::SplitExample> tests, std::span<const CandidateSet> candidates,
                     const llm::ChatClient& client, const prompting::InferenceMode& mode,
                     std::span<const std::size_t> k_set, const EvalOptions& options = {});

json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const json& j);
json to_json(const PerUserResult& row);
PerUserResult per_user_from_json(const json& j);

// Variant runner -------------------------------------------------------------

enum class TrainCorpus { WithRationale, WithoutRationale };

std::string_view to_string(TrainCorpus corpus);
TrainCorpus train_corpus_from_string(std::string_view s);

/// A: trained with rationales, rationale-first inference.
/// B: trained with rationales, item-only inference.
/// C: trained without rationales, rationale-first inference.
struct VariantConfig {
  std::string label;
  TrainCorpus train_corpus = TrainCorpus::WithRationale;
  prompting::InferenceMode inference_mode = prompting::RationaleFirst{};
  llm::EndpointConfig endpoint;

  /// Throws ConfigError when the label's corpus/mode pairing is not the one above.
  void validate() const;
};

VariantConfig standard_variant(const std::string& label, llm::EndpointConfig endpoint);

struct VariantReport {
  VariantConfig config;
  EvalOutcome outcome;
};

using TransportFactory = std::function<std::shared_ptr<llm::Transport>(const llm::EndpointConfig&)>;

/// Evaluates every variant on the same test split and candidate sets.
std::vector<VariantReport> run_variants(std::span<const VariantConfig> configs,
                                        std::span<const corpus::SplitExample> tests,
                                        std::span<const CandidateSet> candidates, std::span<const std::size_t> k_set,
                                        const EvalOptions& options = {},
                                        const TransportFactory& make = llm::make_transport);

/// Per-variant metrics with deltas against variant A (or the first variant).
json comparison_json(std::span<const VariantReport> reports);
std::string comparison_table(std::span<const VariantReport> reports);

}  // namespace ratrec::eval
