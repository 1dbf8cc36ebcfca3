#include "ratrec/judge.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "ratrec/error.hpp"
#include "ratrec/util.hpp"

namespace ratrec::judge {

namespace {

void rethrow(const llm::SlotError& err) {
  if (err.category == Error::Category::Protocol) throw ProtocolError(err.status, err.message);
  throw TransportError(err.status, err.message);
}

std::vector<llm::ChatExchange> complete_or_throw(const llm::ChatClient& client,
                                                 std::span<const llm::ChatRequest> requests,
                                                 const std::optional<std::filesystem::path>& cache_dir) {
  auto slots = client.batch_complete(requests, cache_dir);
  std::vector<llm::ChatExchange> out;
  out.reserve(slots.size());
  for (auto& s : slots) {
    if (!s.ok()) rethrow(*s.error);
    out.push_back(std::move(*s.exchange));
  }
  return out;
}

json proportions_json(const std::array<double, 4>& p, bool defined) {
  json out = json::object();
  for (int s = 0; s < 4; ++s) out[std::to_string(s)] = defined ? json(p[static_cast<std::size_t>(s)]) : json(nullptr);
  return out;
}

}  // namespace

std::vector<EvalInstance> sample_eval_instances(std::span<const DomainSplit> domains, std::size_t n_per_domain,
                                                std::int64_t seed) {
  std::vector<EvalInstance> out;
  for (const auto& d : domains) {
    if (d.tests.size() < n_per_domain) {
      throw SamplingError("domain " + d.name + ": need " + std::to_string(n_per_domain) + " test users but only " +
                          std::to_string(d.tests.size()) + " exist (short by " +
                          std::to_string(n_per_domain - d.tests.size()) + ")");
    }
    std::vector<std::size_t> order(d.tests.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededStream stream(seed, d.name);
    for (std::size_t i = 0; i < n_per_domain; ++i) {
      const std::size_t j = i + stream.below(order.size() - i);
      std::swap(order[i], order[j]);
      out.push_back({d.name, d.tests[order[i]]});
    }
  }
  return out;
}

std::optional<std::size_t> first_valid_match(const infer::ParsedOutput& parsed, std::span<const std::string> candidates,
                                             const infer::MatchOptions& match) {
  for (const auto& text : parsed.item_texts) {
    if (auto m = infer::match_item(text, candidates, match); m.candidate_index) return m.candidate_index;
  }
  return std::nullopt;
}

bool check_validity(const infer::ParsedOutput& parsed, std::span<const std::string> candidates,
                    const infer::MatchOptions& match) {
  return first_valid_match(parsed, candidates, match).has_value();
}

std::optional<int> extract_score(std::string_view reply) {
  std::string_view last;
  std::size_t end = reply.size();
  while (end > 0) {
    const auto start = reply.rfind('\n', end - 1);
    const auto line_start = start == std::string_view::npos ? 0 : start + 1;
    auto line = trim(reply.substr(line_start, end - line_start));
    if (!line.empty()) {
      last = line;
      break;
    }
    if (start == std::string_view::npos) break;
    end = start;
  }
  constexpr std::string_view kPrefix = "SCORE:";
  if (!last.starts_with(kPrefix)) return std::nullopt;
  auto digits = trim(last.substr(kPrefix.size()));
  if (digits.size() != 1 || digits[0] < '0' || digits[0] > '3') return std::nullopt;
  return digits[0] - '0';
}

llm::ChatRequest judge_request(const ScoreRequest& request, const prompting::PromptOptions& options) {
  auto text = prompting::fill_template(prompting::template_text("judge_prompt.v1"),
                                       {{"history", prompting::render_history(request.history, options)},
                                        {"rationale", request.rationale},
                                        {"item", request.recommended_title}});
  return {{{"user", std::move(text)}}, std::nullopt};
}

std::vector<ScoreOutcome> score_rationales(std::span<const ScoreRequest> requests, const llm::ChatClient& judge,
                                           const std::optional<std::filesystem::path>& cache_dir,
                                           const prompting::PromptOptions& options) {
  std::vector<llm::ChatRequest> first;
  first.reserve(requests.size());
  for (const auto& r : requests) first.push_back(judge_request(r, options));
  auto replies = complete_or_throw(judge, first, cache_dir);

  std::vector<ScoreOutcome> out(requests.size());
  std::vector<std::size_t> unreadable;
  for (std::size_t i = 0; i < replies.size(); ++i) {
    out[i].raw_judgment = replies[i].response_text;
    out[i].score = extract_score(replies[i].response_text);
    if (!out[i].score) unreadable.push_back(i);
  }
  if (unreadable.empty()) return out;

  std::vector<llm::ChatRequest> retries;
  for (auto i : unreadable) {
    auto retry = first[i];
    retry.messages.push_back({"assistant", replies[i].response_text});
    retry.messages.push_back({"user", std::string(prompting::template_text("judge_retry.v1"))});
    retries.push_back(std::move(retry));
  }
  auto second = complete_or_throw(judge, retries, cache_dir);
  for (std::size_t j = 0; j < unreadable.size(); ++j) {
    auto& o = out[unreadable[j]];
    o.requeried = true;
    o.raw_judgment = second[j].response_text;
    o.score = extract_score(second[j].response_text);
  }
  return out;
}

ScoreOutcome score_rationale(std::span<const corpus::Interaction> history, std::string_view rationale,
                             std::string_view recommended_title, const llm::ChatClient& judge,
                             const std::optional<std::filesystem::path>& cache_dir,
                             const prompting::PromptOptions& options) {
  const ScoreRequest request{{history.begin(), history.end()}, std::string(rationale), std::string(recommended_title)};
  return score_rationales(std::span(&request, 1), judge, cache_dir, options).front();
}

QualityDistribution quality_distribution(std::span<const JudgeVerdict> verdicts) {
  QualityDistribution d;
  d.n_instances = verdicts.size();
  std::array<std::size_t, 4> counts{};
  std::size_t invalid = 0;
  for (const auto& v : verdicts) {
    if (!v.valid) {
      ++invalid;
    } else if (!v.score) {
      ++d.unparseable;
    } else {
      ++counts.at(static_cast<std::size_t>(*v.score));
      ++d.n;
    }
  }
  d.invalid_rate = verdicts.empty() ? 0.0 : static_cast<double>(invalid) / static_cast<double>(verdicts.size());
  d.defined = d.n > 0;
  if (d.defined) {
    for (std::size_t s = 0; s < 4; ++s) d.proportions[s] = static_cast<double>(counts[s]) / static_cast<double>(d.n);
    const auto with_invalid = static_cast<double>(d.n + invalid);
    for (std::size_t s = 0; s < 4; ++s) {
      const auto c = counts[s] + (s == 0 ? invalid : 0);
      d.invalid_as_zero[s] = static_cast<double>(c) / with_invalid;
    }
  }
  return d;
}

std::vector<JudgeVerdict> judge_responses(std::span<const JudgeInput> inputs, const llm::ChatClient& judge,
                                          const std::optional<std::filesystem::path>& cache_dir,
                                          const prompting::PromptOptions& options, const infer::MatchOptions& match) {
  std::vector<JudgeVerdict> verdicts(inputs.size());
  std::vector<ScoreRequest> to_score;
  std::vector<std::size_t> scored_index;

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    auto& v = verdicts[i];
    v.user_id = in.instance.example.user_id;
    v.domain = in.instance.domain;
    v.judge_model = judge.config().model_name;

    auto parsed = infer::try_parse_tagged_output(in.model_response);
    if (!parsed) continue;
    const auto titles = in.candidates.titles();
    auto index = first_valid_match(*parsed, titles, match);
    if (!index) continue;
    v.valid = true;
    to_score.push_back({in.instance.example.history, parsed->rationale.value_or(""), titles[*index]});
    scored_index.push_back(i);
  }

  auto outcomes = score_rationales(to_score, judge, cache_dir, options);
  for (std::size_t j = 0; j < outcomes.size(); ++j) {
    auto& v = verdicts[scored_index[j]];
    v.score = outcomes[j].score;
    v.unparseable = !outcomes[j].score.has_value();
    v.raw_judgment = std::move(outcomes[j].raw_judgment);
  }
  const auto unparseable = std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.unparseable; });
  if (unparseable > 0) spdlog::warn("judge: {} replies had no readable score and are excluded", unparseable);
  return verdicts;
}

std::vector<std::string> generate_responses(std::span<const EvalInstance> instances,
                                            std::span<const eval::CandidateSet> candidates,
                                            const llm::ChatClient& model,
                                            const std::optional<std::filesystem::path>& cache_dir,
                                            const prompting::PromptOptions& options) {
  std::unordered_map<std::string, const eval::CandidateSet*> by_user;
  for (const auto& c : candidates) by_user.emplace(c.user_id, &c);
  std::vector<llm::ChatRequest> requests;
  requests.reserve(instances.size());
  for (const auto& inst : instances) {
    auto it = by_user.find(inst.example.user_id);
    if (it == by_user.end()) throw PreconditionError("no candidate set for user " + inst.example.user_id);
    const auto titles = it->second->titles();
    auto prompt = prompting::render_task_prompt(inst.example.history, titles, prompting::RationaleFirst{}, options);
    requests.push_back({{{"user", std::move(prompt.text)}}, std::nullopt});
  }
  auto exchanges = complete_or_throw(model, requests, cache_dir);
  std::vector<std::string> out;
  out.reserve(exchanges.size());
  for (auto& e : exchanges) out.push_back(std::move(e.response_text));
  return out;
}

json to_json(const JudgeVerdict& v) {
  return {{"user_id", v.user_id},
          {"domain", v.domain},
          {"valid", v.valid},
          {"score", v.score ? json(*v.score) : json(nullptr)},
          {"unparseable", v.unparseable},
          {"judge_model", v.judge_model}};
}

json to_json(const QualityDistribution& d) {
  return {{"proportions", proportions_json(d.proportions, d.defined)},
          {"proportions_invalid_as_zero", proportions_json(d.invalid_as_zero, d.defined)},
          {"invalid_rate", d.invalid_rate},
          {"unparseable", d.unparseable},
          {"n", d.n},
          {"n_instances", d.n_instances},
          {"defined", d.defined}};
}

}  // namespace ratrec::judge
