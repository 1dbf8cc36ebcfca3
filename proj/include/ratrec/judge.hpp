#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ratrec/candidates.hpp"
#include "ratrec/corpus.hpp"
#include "ratrec/infer_parse.hpp"
#include "ratrec/llm_client.hpp"
#include "ratrec/prompting.hpp"

namespace ratrec::judge {

struct DomainSplit {
  std::string name;
  std::vector<corpus::SplitExample> tests;
};

struct EvalInstance {
  std::string domain;
  corpus::SplitExample example;
};

/// Seeded uniform sample of n_per_domain test users per domain, without replacement.
/// Throws SamplingError when a domain has fewer users than requested.
std::vector<EvalInstance> sample_eval_instances(std::span<const DomainSplit> domains, std::size_t n_per_domain,
                                                std::int64_t seed);

/// Index of the first item text that resolves to a candidate, if any.
std::optional<std::size_t> first_valid_match(const infer::ParsedOutput& parsed, std::span<const std::string> candidates,
                                             const infer::MatchOptions& match = {});

/// Step one: the output names at least one candidate (exact or fuzzy tier).
bool check_validity(const infer::ParsedOutput& parsed, std::span<const std::string> candidates,
                    const infer::MatchOptions& match = {});

/// Score from a judge reply whose last non-blank line is exactly "SCORE: <0-3>".
std::optional<int> extract_score(std::string_view reply);

struct ScoreOutcome {
  std::optional<int> score;  // nullopt: unparseable after the re-query
  std::string raw_judgment;
  bool requeried = false;
};

struct ScoreRequest {
  std::vector<corpus::Interaction> history;
  std::string rationale;
  std::string recommended_title;
};

llm::ChatRequest judge_request(const ScoreRequest& request, const prompting::PromptOptions& options = {});

/// Step two for a batch: asks the judge for a 0-3 score, re-querying once per
/// unreadable reply. Endpoint failures propagate as TransportError / ProtocolError.
std::vector<ScoreOutcome> score_rationales(std::span<const ScoreRequest> requests, const llm::ChatClient& judge,
                                           const std::optional<std::filesystem::path>& cache_dir,
                                           const prompting::PromptOptions& options = {});

ScoreOutcome score_rationale(std::span<const corpus::Interaction> history, std::string_view rationale,
                             std::string_view recommended_title, const llm::ChatClient& judge,
                             const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                             const prompting::PromptOptions& options = {});

struct JudgeVerdict {
  std::string user_id;
  std::string domain;
  bool valid = false;
  std::optional<int> score;  // set iff valid and the judge reply was readable
  bool unparseable = false;
  std::string judge_model;
  std::string raw_judgment;
};

struct QualityDistribution {
  bool defined = false;                    // false when no instance received a score
  std::array<double, 4> proportions{};     // over scored instances
  std::array<double, 4> invalid_as_zero{};  // invalid instances counted as score 0
  double invalid_rate = 0.0;               // over all instances
  std::size_t unparseable = 0;
  std::size_t n = 0;  // scored instances
  std::size_t n_instances = 0;
};

QualityDistribution quality_distribution(std::span<const JudgeVerdict> verdicts);

struct JudgeInput {
  EvalInstance instance;
  eval::CandidateSet candidates;
  std::string model_response;
};

/// Both protocol steps for each model response, in input order.
std::vector<JudgeVerdict> judge_responses(std::span<const JudgeInput> inputs, const llm::ChatClient& judge,
                                          const std::optional<std::filesystem::path>& cache_dir,
                                          const prompting::PromptOptions& options = {},
                                          const infer::MatchOptions& match = {});

/// Rationale-first generations from the model under evaluation, one per input.
/// Throws on endpoint failure.
std::vector<std::string> generate_responses(std::span<const EvalInstance> instances,
                                            std::span<const eval::CandidateSet> candidates,
                                            const llm::ChatClient& model,
                                            const std::optional<std::filesystem::path>& cache_dir,
                                            const prompting::PromptOptions& options = {});

json to_json(const JudgeVerdict& verdict);
json to_json(const QualityDistribution& dist);

}  // namespace ratrec::judge
