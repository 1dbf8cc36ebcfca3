#include "ratrec/eval.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ratrec/error.hpp"

namespace ratrec::eval {

namespace {

std::string k_key(std::size_t k) { return std::to_string(k); }

void append_rows(const std::filesystem::path& path, std::span<const PerUserResult> rows) {
  if (rows.empty()) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to checkpoint " + path.string());
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

std::unordered_map<std::string, PerUserResult> load_checkpoint(const std::filesystem::path& path) {
  std::unordered_map<std::string, PerUserResult> done;
  if (!std::filesystem::exists(path)) return done;
  for_each_line(path, [&](std::size_t, std::string_view line) {
    json j = json::parse(line, nullptr, false);
    // A torn final line from an interrupted run is simply redone.
    if (!j.is_object()) return;
    auto row = per_user_from_json(j);
    done.insert_or_assign(row.user_id, std::move(row));
  });
  return done;
}

void validate_k_set(std::span<const std::size_t> k_set) {
  if (k_set.empty()) throw PreconditionError("k_set must not be empty");
  for (auto k : k_set) {
    if (k == 0) throw PreconditionError("k values must be at least 1");
  }
}

}  // namespace

std::string_view to_string(OutputStatus status) {
  switch (status) {
    case OutputStatus::Ok: return "ok";
    case OutputStatus::ParseError: return "parse_error";
    case OutputStatus::NoMatch: return "no_match";
  }
  return "ok";
}

MetricReport aggregate(std::span<const PerUserResult> rows, std::span<const std::size_t> k_set,
                       const std::string& model_name, const std::string& mode) {
  validate_k_set(k_set);
  MetricReport report;
  report.model_name = model_name;
  report.mode = mode;
  report.n_evaluated = rows.size();
  for (auto k : k_set) report.at_k[k] = {};
  if (rows.empty()) return report;

  std::size_t invalid = 0;
  for (const auto& row : rows) {
    if (row.status != OutputStatus::Ok) ++invalid;
    for (auto& [k, m] : report.at_k) {
      m.hr += hr_at_k(row.rank, k);
      m.ndcg += ndcg_at_k(row.rank, k);
    }
  }
  const auto n = static_cast<double>(rows.size());
  for (auto& [k, m] : report.at_k) {
    m.hr /= n;
    m.ndcg /= n;
  }
  report.invalid_output_rate = static_cast<double>(invalid) / n;
  return report;
}

PerUserResult score_response(const std::string& user_id, const std::string& response, const CandidateSet& candidates,
                             const infer::MatchOptions& match, bool store_response) {
  PerUserResult row;
  row.user_id = user_id;
  row.response_sha256 = sha256_hex(response);
  if (store_response) row.response = response;

  auto parsed = infer::try_parse_tagged_output(response);
  if (!parsed) {
    row.status = OutputStatus::ParseError;
    return row;
  }
  const auto titles = candidates.titles();
  const auto ranking = infer::rank_from_output(*parsed, titles, match);
  if (ranking.empty()) {
    row.status = OutputStatus::NoMatch;
    return row;
  }
  if (auto it = std::find(ranking.begin(), ranking.end(), candidates.gt_index); it != ranking.end()) {
    row.rank = static_cast<std::size_t>(it - ranking.begin()) + 1;
  }
  return row;
}

EvalOutcome evaluate(std::span<const corpus::SplitExample> tests, std::span<const CandidateSet> candidates,
                     const llm::ChatClient& client, const prompting::InferenceMode& mode,
                     std::span<const std::size_t> k_set, const EvalOptions& options) {
  validate_k_set(k_set);
  std::unordered_map<std::string, const CandidateSet*> by_user;
  for (const auto& set : candidates) by_user.emplace(set.user_id, &set);
  std::vector<const CandidateSet*> sets;
  sets.reserve(tests.size());
  for (const auto& ex : tests) {
    auto it = by_user.find(ex.user_id);
    if (it == by_user.end()) throw PreconditionError("evaluate: no candidate set for user " + ex.user_id);
    sets.push_back(it->second);
  }

  std::unordered_map<std::string, PerUserResult> done;
  if (options.checkpoint_path) {
    done = load_checkpoint(*options.checkpoint_path);
    if (!done.empty()) spdlog::info("evaluate: resuming with {} users from checkpoint", done.size());
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    if (!done.contains(tests[i].user_id)) pending.push_back(i);
  }

  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  for (std::size_t begin = 0; begin < pending.size(); begin += chunk) {
    const std::size_t end = std::min(pending.size(), begin + chunk);
    std::vector<llm::ChatRequest> requests;
    for (std::size_t p = begin; p < end; ++p) {
      const auto i = pending[p];
      const auto titles = sets[i]->titles();
      auto prompt = prompting::render_task_prompt(tests[i].history, titles, mode, options.prompt);
      requests.push_back({{{"user", std::move(prompt.text)}}, std::move(prompt.prefill)});
    }
    auto slots = client.batch_complete(requests, options.cache_dir);

    std::vector<PerUserResult> finished;
    const llm::SlotError* failure = nullptr;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const auto i = pending[begin + s];
      if (!slots[s].ok()) {
        if (failure == nullptr) failure = &*slots[s].error;
        continue;
      }
      finished.push_back(score_response(tests[i].user_id, slots[s].exchange->response_text, *sets[i], options.match,
                                        options.store_responses));
    }
    if (options.checkpoint_path) append_rows(*options.checkpoint_path, finished);
    for (auto& row : finished) done.insert_or_assign(row.user_id, std::move(row));
    if (failure != nullptr) {
      spdlog::error("evaluate: endpoint failure after {} of {} users; progress kept in checkpoint", done.size(),
                    tests.size());
      if (failure->category == Error::Category::Protocol) throw ProtocolError(failure->status, failure->message);
      throw TransportError(failure->status, failure->message);
    }
  }

  EvalOutcome outcome;
  outcome.per_user.reserve(tests.size());
  for (const auto& ex : tests) outcome.per_user.push_back(done.at(ex.user_id));
  outcome.report = aggregate(outcome.per_user, k_set, client.config().model_name, prompting::mode_label(mode));
  if (options.checkpoint_path) std::filesystem::remove(*options.checkpoint_path);
  return outcome;
}

json to_json(const MetricReport& report) {
  json k = json::object();
  for (const auto& [cutoff, m] : report.at_k) k[k_key(cutoff)] = {{"hr", m.hr}, {"ndcg", m.ndcg}};
  return {{"model", report.model_name},
          {"mode", report.mode},
          {"k", std::move(k)},
          {"n_evaluated", report.n_evaluated},
          {"invalid_output_rate", report.invalid_output_rate}};
}

MetricReport metric_report_from_json(const json& j) {
  MetricReport r;
  r.model_name = j.at("model").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  for (const auto& [key, m] : j.at("k").items()) {
    r.at_k[std::stoul(key)] = {m.at("hr").get<double>(), m.at("ndcg").get<double>()};
  }
  r.n_evaluated = j.at("n_evaluated").get<std::size_t>();
  r.invalid_output_rate = j.at("invalid_output_rate").get<double>();
  return r;
}

json to_json(const PerUserResult& row) {
  json j = {{"user_id", row.user_id},
            {"rank", row.rank ? json(*row.rank) : json(nullptr)},
            {"status", to_string(row.status)},
            {"response_sha256", row.response_sha256}};
  if (row.response) j["response"] = *row.response;
  return j;
}

PerUserResult per_user_from_json(const json& j) {
  PerUserResult row;
  row.user_id = j.at("user_id").get<std::string>();
  if (!j.at("rank").is_null()) row.rank = j["rank"].get<std::size_t>();
  const auto status = j.at("status").get<std::string>();
  row.status = status == "ok" ? OutputStatus::Ok
               : status == "parse_error" ? OutputStatus::ParseError
                                         : OutputStatus::NoMatch;
  row.response_sha256 = j.at("response_sha256").get<std::string>();
  if (j.contains("response")) row.response = j["response"].get<std::string>();
  return row;
}

std::string_view to_string(TrainCorpus corpus) {
  return corpus == TrainCorpus::WithRationale ? "with_rationale" : "without_rationale";
}

TrainCorpus train_corpus_from_string(std::string_view s) {
  if (s == "with_rationale") return TrainCorpus::WithRationale;
  if (s == "without_rationale") return TrainCorpus::WithoutRationale;
  throw ConfigError("train_corpus", "expected with_rationale or without_rationale, got '" + std::string(s) + "'");
}

void VariantConfig::validate() const {
  const auto expected = [&]() -> std::optional<std::pair<TrainCorpus, prompting::InferenceMode>> {
    if (label == "A") return std::pair{TrainCorpus::WithRationale, prompting::InferenceMode{prompting::RationaleFirst{}}};
    if (label == "B") return std::pair{TrainCorpus::WithRationale, prompting::InferenceMode{prompting::ItemOnly{}}};
    if (label == "C") {
      return std::pair{TrainCorpus::WithoutRationale, prompting::InferenceMode{prompting::RationaleFirst{}}};
    }
    return std::nullopt;
  }();
  if (!expected) throw ConfigError("variants." + label, "label must be A, B or C");
  if (expected->first != train_corpus || expected->second != inference_mode) {
    throw ConfigError("variants." + label, "variant " + label + " must pair " + std::string(to_string(expected->first)) +
                                               " with " + prompting::mode_label(expected->second));
  }
  endpoint.validate("variants." + label + ".endpoint");
}

VariantConfig standard_variant(const std::string& label, llm::EndpointConfig endpoint) {
  VariantConfig v;
  v.label = label;
  v.endpoint = std::move(endpoint);
  if (label == "B") v.inference_mode = prompting::ItemOnly{};
  if (label == "C") v.train_corpus = TrainCorpus::WithoutRationale;
  v.validate();
  return v;
}

std::vector<VariantReport> run_variants(std::span<const VariantConfig> configs,
                                        std::span<const corpus::SplitExample> tests,
                                        std::span<const CandidateSet> candidates, std::span<const std::size_t> k_set,
                                        const EvalOptions& options, const TransportFactory& make) {
  std::set<std::string> labels;
  for (const auto& c : configs) {
    c.validate();
    if (!labels.insert(c.label).second) throw ConfigError("variants." + c.label, "duplicate variant label");
  }
  std::vector<VariantReport> reports;
  for (const auto& c : configs) {
    llm::ChatClient client(c.endpoint, make(c.endpoint));
    EvalOptions per_variant = options;
    if (options.checkpoint_path) {
      per_variant.checkpoint_path = *options.checkpoint_path;
      per_variant.checkpoint_path->replace_filename(options.checkpoint_path->filename().string() + "." + c.label);
    }
    spdlog::info("variant {}: {} / {} via {}", c.label, to_string(c.train_corpus), prompting::mode_label(c.inference_mode),
                 c.endpoint.model_name);
    reports.push_back({c, evaluate(tests, candidates, client, c.inference_mode, k_set, per_variant)});
  }
  return reports;
}

json comparison_json(std::span<const VariantReport> reports) {
  json out = json::object();
  if (reports.empty()) return out;
  const auto base_it = std::find_if(reports.begin(), reports.end(), [](const auto& r) { return r.config.label == "A"; });
  const auto& base = base_it != reports.end() ? *base_it : reports.front();
  out["baseline"] = base.config.label;
  json variants = json::array();
  for (const auto& r : reports) {
    json deltas = json::object();
    for (const auto& [k, m] : r.outcome.report.at_k) {
      const auto& b = base.outcome.report.at_k.at(k);
      deltas[k_key(k)] = {{"hr", m.hr - b.hr}, {"ndcg", m.ndcg - b.ndcg}};
    }
    variants.push_back({{"label", r.config.label},
                        {"train_corpus", to_string(r.config.train_corpus)},
                        {"report", to_json(r.outcome.report)},
                        {"delta_vs_baseline", std::move(deltas)}});
  }
  out["variants"] = std::move(variants);
  return out;
}

std::string comparison_table(std::span<const VariantReport> reports) {
  if (reports.empty()) return "(no variants)\n";
  const auto base_it = std::find_if(reports.begin(), reports.end(), [](const auto& r) { return r.config.label == "A"; });
  const auto& base = base_it != reports.end() ? *base_it : reports.front();

  std::string out = fmt::format("{:<7} {:<18} {:<16}", "variant", "trained", "inference");
  for (const auto& [k, m] : base.outcome.report.at_k) {
    out += fmt::format(" {:>8} {:>8}", fmt::format("HR@{}", k), fmt::format("N@{}", k));
  }
  out += fmt::format(" {:>8}\n", "invalid");
  for (const auto& r : reports) {
    const auto& rep = r.outcome.report;
    out += fmt::format("{:<7} {:<18} {:<16}", r.config.label, to_string(r.config.train_corpus), rep.mode);
    for (const auto& [k, m] : rep.at_k) out += fmt::format(" {:>8.4f} {:>8.4f}", m.hr, m.ndcg);
    out += fmt::format(" {:>8.4f}\n", rep.invalid_output_rate);
  }
  out += fmt::format("deltas vs {}\n", base.config.label);
  for (const auto& r : reports) {
    if (&r == &base) continue;
    out += fmt::format("{:<7} {:<18} {:<16}", r.config.label, "", "");
    for (const auto& [k, m] : r.outcome.report.at_k) {
      const auto& b = base.outcome.report.at_k.at(k);
      out += fmt::format(" {:>+8.4f} {:>+8.4f}", m.hr - b.hr, m.ndcg - b.ndcg);
    }
    out += "\n";
  }
  return out;
}

}  // namespace ratrec::eval
