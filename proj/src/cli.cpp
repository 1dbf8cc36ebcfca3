#include "ratrec/cli.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ratrec/annotate.hpp"
#include "ratrec/candidates.hpp"
#include "ratrec/corpus.hpp"
#include "ratrec/eval.hpp"
#include "ratrec/judge.hpp"
#include "ratrec/prompting.hpp"

#ifndef RATREC_VERSION
#define RATREC_VERSION "0.0.0"
#endif

namespace ratrec::cli {

namespace fs = std::filesystem;

int exit_code(Error::Category category) {
  switch (category) {
    case Error::Category::Config: return kExitConfig;
    case Error::Category::Precondition: return 3;
    case Error::Category::Io: return 4;
    case Error::Category::Format: return 5;
    case Error::Category::Transport: return 6;
    case Error::Category::Protocol: return 7;
    case Error::Category::Sampling: return 8;
  }
  return 10;
}

// Config ---------------------------------------------------------------------

namespace {

const json* find(const json& obj, std::string_view key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

const json& object_at(const json& obj, std::string_view key, const std::string& path) {
  static const json empty = json::object();
  const json* v = find(obj, key);
  if (!v) return empty;
  if (!v->is_object()) throw ConfigError(path, "expected an object");
  return *v;
}

std::string string_field(const json& obj, std::string_view key, const std::string& path, std::string fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(path, "expected a string");
  return v->get<std::string>();
}

std::size_t count_field(const json& obj, std::string_view key, const std::string& path, std::size_t fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer() || v->get<std::int64_t>() < 0) throw ConfigError(path, "must be a non-negative integer");
  return v->get<std::size_t>();
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

llm::EndpointConfig endpoint_block(const json& block, const std::string& path, double role_temperature,
                                   const fs::path& base_dir) {
  auto c = llm::endpoint_from_json(block, path);
  if (!find(block, "temperature")) c.temperature = role_temperature;
  constexpr std::string_view kMock = "mock://";
  if (c.base_url.starts_with(kMock)) {
    const fs::path fixture = c.base_url.substr(kMock.size());
    if (fixture.is_relative()) c.base_url = std::string(kMock) + (base_dir / fixture).string();
  }
  return c;
}

}  // namespace

std::int64_t RunConfig::seed(std::string_view name) const {
  auto it = seeds.find(name);
  if (it == seeds.end()) throw ConfigError("seeds." + std::string(name), "missing; seeds must be explicit integers");
  return it->second;
}

const llm::EndpointConfig& RunConfig::model(std::string_view name) const {
  auto it = models.find(name);
  if (it == models.end()) throw ConfigError("endpoints.models." + std::string(name), "no such model endpoint");
  return it->second;
}

std::string RunConfig::sha256() const { return sha256_hex(raw.dump()); }

RunConfig parse_config(json raw, const fs::path& base_dir) {
  if (!raw.is_object()) throw ConfigError("<root>", "expected an object");
  RunConfig c;
  c.raw = std::move(raw);
  c.base_dir = base_dir;
  const json& r = c.raw;

  const auto& paths = object_at(r, "paths", "paths");
  c.workdir = resolve(base_dir, string_field(paths, "workdir", "paths.workdir", "."));
  c.cache_dir = find(paths, "cache_dir") ? resolve(base_dir, string_field(paths, "cache_dir", "paths.cache_dir", ""))
                                         : c.workdir / "cache";
  if (find(paths, "reviews")) c.reviews = resolve(base_dir, string_field(paths, "reviews", "paths.reviews", ""));
  if (find(paths, "metadata")) c.metadata = resolve(base_dir, string_field(paths, "metadata", "paths.metadata", ""));

  for (const auto& [name, value] : object_at(r, "seeds", "seeds").items()) {
    if (!value.is_number_integer()) throw ConfigError("seeds." + name, "must be an integer");
    c.seeds.emplace(name, value.get<std::int64_t>());
  }

  const auto& knobs = object_at(r, "knobs", "knobs");
  auto& k = c.knobs;
  k.n_neg = count_field(knobs, "n_neg", "knobs.n_neg", k.n_neg);
  k.max_items = count_field(knobs, "max_items", "knobs.max_items", k.max_items);
  k.max_title_chars = count_field(knobs, "max_title_chars", "knobs.max_title_chars", k.max_title_chars);
  k.ranked_k = count_field(knobs, "ranked_k", "knobs.ranked_k", k.ranked_k);
  k.min_len = count_field(knobs, "min_len", "knobs.min_len", k.min_len);
  k.chunk_size = count_field(knobs, "chunk_size", "knobs.chunk_size", k.chunk_size);
  k.inference_mode = string_field(knobs, "inference_mode", "knobs.inference_mode", k.inference_mode);
  if (const json* v = find(knobs, "jaccard_threshold")) {
    if (!v->is_number() || v->get<double>() <= 0.0 || v->get<double>() > 1.0) {
      throw ConfigError("knobs.jaccard_threshold", "must be in (0, 1]");
    }
    k.jaccard_threshold = v->get<double>();
  }
  if (const json* v = find(knobs, "store_responses")) {
    if (!v->is_boolean()) throw ConfigError("knobs.store_responses", "expected a boolean");
    k.store_responses = v->get<bool>();
  }
  if (const json* v = find(knobs, "k_set")) {
    if (!v->is_array() || v->empty()) throw ConfigError("knobs.k_set", "expected a non-empty array");
    k.k_set.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      if (!e.is_number_integer() || e.get<std::int64_t>() < 1) {
        throw ConfigError("knobs.k_set[" + std::to_string(i) + "]", "must be a positive integer");
      }
      k.k_set.push_back(e.get<std::size_t>());
    }
  }
  if (k.min_len < corpus::kDefaultMinLength) throw ConfigError("knobs.min_len", "must be at least 3");
  if (k.n_neg == 0) throw ConfigError("knobs.n_neg", "must be positive");
  if (k.chunk_size == 0) throw ConfigError("knobs.chunk_size", "must be positive");
  try {
    (void)prompting::parse_mode(k.inference_mode, k.ranked_k);
  } catch (const Error& e) {
    throw ConfigError("knobs.inference_mode", e.what());
  }

  const auto& endpoints = object_at(r, "endpoints", "endpoints");
  if (const json* a = find(endpoints, "annotator")) {
    c.annotator = endpoint_block(*a, "endpoints.annotator", llm::kAnnotationTemperature, base_dir);
  }
  if (const json* j = find(endpoints, "judge")) {
    c.judge = endpoint_block(*j, "endpoints.judge", llm::kJudgeTemperature, base_dir);
  }
  for (const auto& [name, block] : object_at(endpoints, "models", "endpoints.models").items()) {
    c.models.emplace(name,
                     endpoint_block(block, "endpoints.models." + name, llm::kInferenceTemperature, base_dir));
  }

  if (const json* v = find(r, "variants")) {
    if (!v->is_array()) throw ConfigError("variants", "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = "variants[" + std::to_string(i) + "]";
      const auto& e = (*v)[i];
      if (!e.is_object()) throw ConfigError(p, "expected an object");
      VariantSpec s;
      s.label = string_field(e, "label", p + ".label", "");
      s.model = string_field(e, "model", p + ".model", "");
      if (s.label.empty()) throw ConfigError(p + ".label", "required");
      if (s.model.empty()) throw ConfigError(p + ".model", "required");
      if (!c.models.contains(s.model)) throw ConfigError(p + ".model", "unknown model " + s.model);
      if (find(e, "train_corpus")) s.train_corpus = string_field(e, "train_corpus", p + ".train_corpus", "");
      if (find(e, "inference_mode")) s.inference_mode = string_field(e, "inference_mode", p + ".inference_mode", "");
      c.variants.push_back(std::move(s));
    }
  }

  const auto& judge = object_at(r, "judge", "judge");
  if (find(judge, "model")) c.judge_settings.model = string_field(judge, "model", "judge.model", "");
  c.judge_settings.n_per_domain = count_field(judge, "n_per_domain", "judge.n_per_domain", 100);
  if (const json* v = find(judge, "domains")) {
    if (!v->is_array()) throw ConfigError("judge.domains", "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = "judge.domains[" + std::to_string(i) + "]";
      const auto& e = (*v)[i];
      if (!e.is_object()) throw ConfigError(p, "expected an object");
      JudgeDomain d;
      d.name = string_field(e, "name", p + ".name", "");
      if (d.name.empty()) throw ConfigError(p + ".name", "required");
      const auto dir = resolve(base_dir, string_field(e, "workdir", p + ".workdir", d.name));
      d.split = find(e, "split") ? resolve(base_dir, string_field(e, "split", p + ".split", "")) : dir / "split.jsonl";
      d.candidates = find(e, "candidates") ? resolve(base_dir, string_field(e, "candidates", p + ".candidates", ""))
                                           : dir / "candidates.jsonl";
      c.judge_settings.domains.push_back(std::move(d));
    }
  }
  return c;
}

// Stages ---------------------------------------------------------------------

namespace {

constexpr std::string_view kManifest = "run_manifest.json";

std::string safe_component(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '_';
    out.push_back(ok ? ch : '_');
  }
  return out.empty() ? "_" : out;
}

/// Records hashes of every input and output of one subcommand into run_manifest.json.
class Stage {
 public:
  Stage(const RunConfig& config, std::string key, json args)
      : config_(config), key_(std::move(key)), args_(std::move(args)) {}

  /// An input named by the config; missing files are config errors.
  fs::path config_input(const std::optional<fs::path>& path, const std::string& field) {
    if (!path) throw ConfigError(field, "required for this command");
    if (!fs::is_regular_file(*path)) throw ConfigError(field, "file not found: " + path->string());
    inputs_[display(*path)] = sha256_file(*path);
    return *path;
  }

  /// An input produced by an earlier subcommand.
  fs::path stage_input(const fs::path& path, std::string_view producer) {
    if (!fs::is_regular_file(path)) {
      throw PreconditionError(path.string() + " not found; run `ratrec " + std::string(producer) + "` first");
    }
    inputs_[display(path)] = sha256_file(path);
    return path;
  }

  fs::path out(const fs::path& rel) const { return config_.workdir / rel; }

  void wrote(const fs::path& path) { outputs_[display(path)] = sha256_file(path); }

  void write(const fs::path& rel, std::string_view contents) {
    write_file_atomic(out(rel), contents);
    wrote(out(rel));
  }

  void finish() {
    const auto path = config_.workdir / kManifest;
    json manifest = json::object();
    if (fs::exists(path)) {
      try {
        manifest = json::parse(read_file(path));
      } catch (const json::exception& e) {
        spdlog::warn("{}: unreadable ({}); starting a new manifest", path.string(), e.what());
        manifest = json::object();
      }
    }
    manifest["tool"] = "ratrec";
    manifest["tool_version"] = RATREC_VERSION;
    manifest["stages"][key_] = {{"config_sha256", config_.sha256()},
                                {"args", args_},
                                {"inputs", inputs_},
                                {"outputs", outputs_}};
    write_file_atomic(path, manifest.dump(2) + "\n");
  }

 private:
  std::string display(const fs::path& p) const {
    const auto rel = p.lexically_normal().lexically_relative(config_.workdir.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.lexically_normal().generic_string();
  }

  const RunConfig& config_;
  std::string key_;
  json args_;
  json inputs_ = json::object();
  json outputs_ = json::object();
};

prompting::PromptOptions prompt_options(const RunConfig& c) { return {c.knobs.max_items, c.knobs.max_title_chars}; }

infer::MatchOptions match_options(const RunConfig& c) { return {c.knobs.jaccard_threshold}; }

llm::ChatClient client_for(const llm::EndpointConfig& endpoint) {
  return llm::ChatClient(endpoint, llm::make_transport(endpoint));
}

std::string dump_line(const json& j) { return j.dump(2) + "\n"; }

void run_ingest(const RunConfig& c, std::ostream& out) {
  Stage stage(c, "ingest", {{"min_len", c.knobs.min_len}});
  const auto reviews = stage.config_input(c.reviews, "paths.reviews");
  const auto metadata = stage.config_input(c.metadata, "paths.metadata");
  auto report = corpus::ingest_reviews(reviews, metadata);
  const auto sequences = corpus::build_sequences(report.interactions, c.knobs.min_len);

  corpus::write_sequences(stage.out("sequences.jsonl"), sequences);
  stage.wrote(stage.out("sequences.jsonl"));
  stage.write("ingest.json", dump_line({{"interactions", report.interactions.size()},
                                        {"dropped_no_title", report.dropped_no_title},
                                        {"skipped_malformed", report.skipped_malformed},
                                        {"skipped_metadata_malformed", report.skipped_metadata_malformed},
                                        {"n_sequences", sequences.size()}}));
  stage.finish();
  out << fmt::format("ingested {} interactions into {} sequences ({} dropped without title, {} malformed)\n",
                     report.interactions.size(), sequences.size(), report.dropped_no_title,
                     report.skipped_malformed);
}

void run_split(const RunConfig& c, std::ostream& out) {
  Stage stage(c, "split", {{"seed", c.seed("split")}});
  const auto sequences = corpus::read_sequences(stage.stage_input(stage.out("sequences.jsonl"), "ingest"));
  const auto examples = corpus::split_all(sequences);
  corpus::write_split(stage.out("split.jsonl"), examples);
  stage.wrote(stage.out("split.jsonl"));
  stage.finish();
  out << fmt::format("{} examples from {} users\n", examples.size(), sequences.size());
}

void run_stats(const RunConfig& c, std::ostream& out) {
  Stage stage(c, "stats", json::object());
  const auto sequences = corpus::read_sequences(stage.stage_input(stage.out("sequences.jsonl"), "ingest"));
  const auto ingest = json::parse(read_file(stage.stage_input(stage.out("ingest.json"), "ingest")));
  const auto stats = corpus::compute_stats(sequences);
  const auto j = corpus::to_json(stats, ingest.value("dropped_no_title", std::size_t{0}),
                                 ingest.value("skipped_malformed", std::size_t{0}));
  stage.write("stats.json", dump_line(j));
  stage.finish();
  out << fmt::format("users {}  items {}  avg history {:.2f}\n", stats.n_users, stats.n_items,
                     stats.avg_history_len);
}

void run_annotate(const RunConfig& c, std::ostream& out) {
  if (!c.annotator) throw ConfigError("endpoints.annotator", "required for annotate");
  Stage stage(c, "annotate", {{"annotator", llm::to_json(*c.annotator)}});
  const auto split = corpus::read_split(stage.stage_input(stage.out("split.jsonl"), "split"));
  const auto train = corpus::select(split, corpus::Split::Train);
  const auto client = client_for(*c.annotator);
  const auto run = annotate::annotate_corpus(train, client, c.cache_dir, prompt_options(c));
  annotate::write_rationales(stage.out("rationales.jsonl"), run.results);
  stage.wrote(stage.out("rationales.jsonl"));
  stage.finish();
  const auto coherent = std::count_if(run.results.begin(), run.results.end(), [](const auto& r) { return r.coherent; });
  out << fmt::format("annotated {} examples: {} coherent, {} incoherent, {} unreadable\n", train.size(), coherent,
                     run.results.size() - static_cast<std::size_t>(coherent), run.dropped);
}

void run_emit_train(const RunConfig& c, bool with_rationale, bool without_rationale, std::ostream& out) {
  if (!with_rationale && !without_rationale) with_rationale = without_rationale = true;
  Stage stage(c, "emit-train",
              {{"with_rationale", with_rationale},
               {"without_rationale", without_rationale},
               {"seed", c.seed("candidates")},
               {"n_neg", c.knobs.n_neg}});
  const auto split = corpus::read_split(stage.stage_input(stage.out("split.jsonl"), "split"));
  const auto sequences = corpus::read_sequences(stage.stage_input(stage.out("sequences.jsonl"), "ingest"));
  const auto rows = annotate::read_rationales(stage.stage_input(stage.out("rationales.jsonl"), "annotate"));
  const auto train = corpus::select(split, corpus::Split::Train);
  const auto aligned = annotate::align_rationales(rows, train);
  const auto tuples = annotate::filter_incoherent(aligned, train);

  std::vector<corpus::SplitExample> kept;
  kept.reserve(tuples.size());
  for (const auto& t : tuples) {
    corpus::SplitExample ex;
    ex.user_id = t.user_id;
    for (const auto& h : t.history) ex.history.push_back({t.user_id, h.item_id, h.title, 0});
    ex.target = {t.user_id, t.target.item_id, t.target.title, 0};
    kept.push_back(std::move(ex));
  }
  const auto vocab = corpus::catalog(sequences);
  const auto sets = eval::sample_for_examples(kept, vocab, c.knobs.n_neg, c.seed("candidates"), true);

  const auto opts = prompt_options(c);
  std::vector<json> with_rows, without_rows;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const auto titles = sets[i].titles();
    if (with_rationale) {
      with_rows.push_back(prompting::render_training_record(kept[i].history, titles, tuples[i].rationale,
                                                            tuples[i].target.title, opts)
                              .to_json());
    }
    if (without_rationale) {
      without_rows.push_back(
          prompting::render_item_only_record(kept[i].history, titles, tuples[i].target.title, opts).to_json());
    }
  }
  if (with_rationale) stage.write("train.jsonl", to_jsonl(with_rows));
  if (without_rationale) stage.write("train_no_rationale.jsonl", to_jsonl(without_rows));
  stage.finish();
  out << fmt::format("emitted {} training records from {} annotated examples\n", tuples.size(), aligned.size());
}

void run_sample_candidates(const RunConfig& c, std::ostream& out) {
  Stage stage(c, "sample-candidates", {{"seed", c.seed("candidates")}, {"n_neg", c.knobs.n_neg}});
  const auto split = corpus::read_split(stage.stage_input(stage.out("split.jsonl"), "split"));
  const auto sequences = corpus::read_sequences(stage.stage_input(stage.out("sequences.jsonl"), "ingest"));
  const auto tests = corpus::select(split, corpus::Split::Test);
  const auto sets =
      eval::sample_for_examples(tests, corpus::catalog(sequences), c.knobs.n_neg, c.seed("candidates"), false);
  eval::write_candidates(stage.out("candidates.jsonl"), sets);
  stage.wrote(stage.out("candidates.jsonl"));
  stage.finish();
  out << fmt::format("sampled {} candidate sets of size {}\n", sets.size(), c.knobs.n_neg + 1);
}

eval::EvalOptions eval_options(const RunConfig& c, const fs::path& dir) {
  eval::EvalOptions o;
  o.cache_dir = c.cache_dir;
  o.prompt = prompt_options(c);
  o.match = match_options(c);
  o.store_responses = c.knobs.store_responses;
  o.checkpoint_path = dir / "checkpoint.jsonl";
  o.chunk_size = c.knobs.chunk_size;
  return o;
}

void write_outcome(Stage& stage, const fs::path& dir, const eval::EvalOutcome& outcome) {
  stage.write(dir / "report.json", dump_line(eval::to_json(outcome.report)));
  std::vector<json> rows;
  rows.reserve(outcome.per_user.size());
  for (const auto& r : outcome.per_user) rows.push_back(eval::to_json(r));
  stage.write(dir / "per_user.jsonl", to_jsonl(rows));
}

std::string report_row(const eval::MetricReport& r) {
  std::string s = fmt::format("{:<24} {:<16}", r.model_name, r.mode);
  for (const auto& [k, m] : r.at_k) s += fmt::format(" HR@{}={:.4f} NDCG@{}={:.4f}", k, m.hr, k, m.ndcg);
  s += fmt::format(" invalid={:.4f} n={}\n", r.invalid_output_rate, r.n_evaluated);
  return s;
}

std::string single_model_name(const RunConfig& c, std::string_view command) {
  if (c.models.size() == 1) return c.models.begin()->first;
  throw ConfigError("endpoints.models", fmt::format("{} needs --model when zero or several models are configured",
                                                    command));
}

void run_evaluate(const RunConfig& c, std::string model_name, std::string mode_label, std::ostream& out) {
  if (model_name.empty()) model_name = single_model_name(c, "evaluate");
  const auto& endpoint = c.model(model_name);
  if (mode_label.empty()) mode_label = c.knobs.inference_mode;
  const auto mode = prompting::parse_mode(mode_label, c.knobs.ranked_k);
  const auto label = prompting::mode_label(mode);
  const fs::path dir = fs::path("eval") / safe_component(model_name) / safe_component(label);

  Stage stage(c, "evaluate:" + model_name + ":" + label,
              {{"model", model_name}, {"mode", label}, {"endpoint", llm::to_json(endpoint)}, {"k_set", c.knobs.k_set}});
  const auto split = corpus::read_split(stage.stage_input(stage.out("split.jsonl"), "split"));
  const auto candidates =
      eval::read_candidates(stage.stage_input(stage.out("candidates.jsonl"), "sample-candidates"));
  const auto tests = corpus::select(split, corpus::Split::Test);
  const auto client = client_for(endpoint);
  const auto outcome = eval::evaluate(tests, candidates, client, mode, c.knobs.k_set, eval_options(c, stage.out(dir)));
  write_outcome(stage, dir, outcome);
  stage.finish();
  out << report_row(outcome.report);
}

void run_variants(const RunConfig& c, std::ostream& out) {
  if (c.variants.empty()) throw ConfigError("variants", "required for run-variants");
  std::vector<eval::VariantConfig> configs;
  json args = json::array();
  for (std::size_t i = 0; i < c.variants.size(); ++i) {
    const auto& v = c.variants[i];
    const std::string p = "variants[" + std::to_string(i) + "]";
    auto vc = eval::standard_variant(v.label, c.model(v.model));
    try {
      if (v.train_corpus) vc.train_corpus = eval::train_corpus_from_string(*v.train_corpus);
      if (v.inference_mode) vc.inference_mode = prompting::parse_mode(*v.inference_mode, c.knobs.ranked_k);
    } catch (const Error& e) {
      throw ConfigError(p, e.what());
    }
    args.push_back({{"label", v.label},
                    {"model", v.model},
                    {"train_corpus", eval::to_string(vc.train_corpus)},
                    {"inference_mode", prompting::mode_label(vc.inference_mode)}});
    configs.push_back(std::move(vc));
  }

  Stage stage(c, "run-variants", {{"variants", args}, {"k_set", c.knobs.k_set}});
  const auto split = corpus::read_split(stage.stage_input(stage.out("split.jsonl"), "split"));
  const auto candidates =
      eval::read_candidates(stage.stage_input(stage.out("candidates.jsonl"), "sample-candidates"));
  const auto tests = corpus::select(split, corpus::Split::Test);
  auto options = eval_options(c, stage.out("variants"));
  const auto reports = eval::run_variants(configs, tests, candidates, c.knobs.k_set, options);
  for (const auto& r : reports) write_outcome(stage, fs::path("variants") / safe_component(r.config.label), r.outcome);
  const auto table = eval::comparison_table(reports);
  stage.write("variants/comparison.json", dump_line(eval::comparison_json(reports)));
  stage.write("variants/comparison.txt", table);
  stage.finish();
  out << table;
}

void run_judge(const RunConfig& c, std::string model_name, std::ostream& out) {
  if (!c.judge) throw ConfigError("endpoints.judge", "required for judge");
  if (model_name.empty()) model_name = c.judge_settings.model.value_or("");
  if (model_name.empty()) model_name = single_model_name(c, "judge");
  const auto& candidate_endpoint = c.model(model_name);

  auto domains = c.judge_settings.domains;
  if (domains.empty()) domains.push_back({"default", c.workdir / "split.jsonl", c.workdir / "candidates.jsonl"});

  Stage stage(c, "judge",
              {{"model", model_name},
               {"judge", llm::to_json(*c.judge)},
               {"n_per_domain", c.judge_settings.n_per_domain},
               {"seed", c.seed("judge_sample")}});

  std::vector<judge::DomainSplit> splits;
  std::vector<std::vector<eval::CandidateSet>> domain_candidates;
  for (const auto& d : domains) {
    const auto split = corpus::read_split(stage.stage_input(d.split, "split"));
    splits.push_back({d.name, corpus::select(split, corpus::Split::Test)});
    domain_candidates.push_back(eval::read_candidates(stage.stage_input(d.candidates, "sample-candidates")));
  }
  const auto instances = judge::sample_eval_instances(splits, c.judge_settings.n_per_domain, c.seed("judge_sample"));

  const auto model = client_for(candidate_endpoint);
  const auto judge_client = client_for(*c.judge);
  const auto opts = prompt_options(c);
  std::vector<judge::JudgeInput> inputs;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    std::vector<judge::EvalInstance> mine;
    for (const auto& inst : instances) {
      if (inst.domain == domains[d].name) mine.push_back(inst);
    }
    auto responses = judge::generate_responses(mine, domain_candidates[d], model, c.cache_dir, opts);
    for (std::size_t i = 0; i < mine.size(); ++i) {
      const auto& sets = domain_candidates[d];
      auto it = std::find_if(sets.begin(), sets.end(), [&](const auto& s) { return s.user_id == mine[i].example.user_id; });
      inputs.push_back({mine[i], *it, std::move(responses[i])});
    }
  }
  const auto verdicts = judge::judge_responses(inputs, judge_client, c.cache_dir, opts, match_options(c));

  std::vector<json> rows;
  rows.reserve(verdicts.size());
  for (const auto& v : verdicts) rows.push_back(judge::to_json(v));
  auto quality = judge::to_json(judge::quality_distribution(verdicts));
  quality["model"] = model_name;
  quality["judge_model"] = c.judge->model_name;
  json per_domain = json::object();
  for (const auto& d : domains) {
    std::vector<judge::JudgeVerdict> mine;
    for (const auto& v : verdicts) {
      if (v.domain == d.name) mine.push_back(v);
    }
    per_domain[d.name] = judge::to_json(judge::quality_distribution(mine));
  }
  quality["per_domain"] = per_domain;
  stage.write("judge/judgments.jsonl", to_jsonl(rows));
  stage.write("judge/quality.json", dump_line(quality));
  stage.finish();

  const auto dist = judge::quality_distribution(verdicts);
  out << fmt::format("judged {} outputs: invalid {:.4f}, unparseable {}, scored {}\n", verdicts.size(),
                     dist.invalid_rate, dist.unparseable, dist.n);
}

std::string quality_table(const json& q) {
  std::string s = fmt::format("{:<24}", q.value("model", std::string("?")));
  for (int score = 0; score < 4; ++score) {
    const auto& p = q.at("proportions").at(std::to_string(score));
    s += p.is_null() ? fmt::format(" {}:{:>6}", score, "n/a") : fmt::format(" {}:{:.4f}", score, p.get<double>());
  }
  s += fmt::format(" invalid={:.4f} unparseable={} n={}\n", q.at("invalid_rate").get<double>(),
                   q.at("unparseable").get<std::size_t>(), q.at("n").get<std::size_t>());
  return s;
}

void run_report(const RunConfig& c, std::ostream& out) {
  Stage stage(c, "report", json::object());
  json summary = {{"evaluations", json::array()}};
  std::string text;

  std::vector<fs::path> reports;
  const auto eval_dir = c.workdir / "eval";
  if (fs::is_directory(eval_dir)) {
    for (const auto& e : fs::recursive_directory_iterator(eval_dir)) {
      if (e.is_regular_file() && e.path().filename() == "report.json") reports.push_back(e.path());
    }
  }
  std::sort(reports.begin(), reports.end());
  if (!reports.empty()) text += "evaluations\n";
  for (const auto& p : reports) {
    const auto j = json::parse(read_file(stage.stage_input(p, "evaluate")));
    text += report_row(eval::metric_report_from_json(j));
    summary["evaluations"].push_back(j);
  }

  const auto comparison = c.workdir / "variants" / "comparison.txt";
  if (fs::is_regular_file(comparison)) {
    text += "variants\n" + read_file(stage.stage_input(comparison, "run-variants"));
    summary["variants"] =
        json::parse(read_file(stage.stage_input(c.workdir / "variants" / "comparison.json", "run-variants")));
  }
  const auto quality = c.workdir / "judge" / "quality.json";
  if (fs::is_regular_file(quality)) {
    const auto q = json::parse(read_file(stage.stage_input(quality, "judge")));
    text += "rationale quality\n" + quality_table(q);
    summary["quality"] = q;
  }
  if (text.empty()) throw PreconditionError("nothing to report in " + c.workdir.string());

  stage.write("summary.txt", text);
  stage.write("summary.json", dump_line(summary));
  stage.finish();
  out << text;
}

RunConfig load(const std::string& config_path, const std::string& workdir, const std::optional<std::int64_t>& seed) {
  json raw = json::object();
  fs::path base = fs::current_path();
  if (!config_path.empty()) {
    if (!fs::is_regular_file(config_path)) throw ConfigError("--config", "file not found: " + config_path);
    try {
      raw = json::parse(read_file(config_path));
    } catch (const json::exception& e) {
      throw ConfigError("--config", std::string("not valid JSON: ") + e.what());
    }
    base = fs::absolute(config_path).parent_path();
  }
  if (!raw.is_object()) throw ConfigError("<root>", "expected an object");
  if (!workdir.empty()) raw["paths"]["workdir"] = fs::absolute(workdir).lexically_normal().string();
  if (seed) {
    for (const char* name : {"split", "candidates", "judge_sample"}) raw["seeds"][name] = *seed;
  }
  return parse_config(std::move(raw), base);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rationale-first sequential recommendation pipeline", "ratrec"};
  app.set_version_flag("--version", std::string(RATREC_VERSION));
  app.require_subcommand(1);

  std::string config_path, workdir, log_level = "info";
  std::optional<std::int64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--workdir", workdir, "Directory for stage outputs (overrides paths.workdir)");
  app.add_option("--seed", seed, "Overrides every seed in the config");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  auto* ingest = app.add_subcommand("ingest", "Reviews and metadata to per-user sequences");
  auto* split = app.add_subcommand("split", "Leave-one-out split of every sequence");
  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  auto* annotate = app.add_subcommand("annotate", "Teacher rationales for training examples");
  auto* emit = app.add_subcommand("emit-train", "Chat-format training corpora");
  bool with_rationale = false, without_rationale = false;
  emit->add_flag("--with-rationale", with_rationale, "Emit train.jsonl");
  emit->add_flag("--without-rationale", without_rationale, "Emit train_no_rationale.jsonl");
  auto* sample = app.add_subcommand("sample-candidates", "Candidate sets for test users");
  auto* evaluate = app.add_subcommand("evaluate", "HR@K / NDCG@K of one model endpoint");
  std::string model, mode;
  evaluate->add_option("--model", model, "Key under endpoints.models");
  evaluate->add_option("--mode", mode, "rationale-first, item-only or ranked-list[-k]");
  auto* variants = app.add_subcommand("run-variants", "Evaluate the configured A/B/C variants");
  auto* judge = app.add_subcommand("judge", "LLM-judged rationale quality");
  judge->add_option("--model", model, "Key under endpoints.models");
  auto* report = app.add_subcommand("report", "Summarize evaluation and judge outputs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    const auto config = load(config_path, workdir, seed);
    fs::create_directories(config.workdir);
    if (*ingest) run_ingest(config, out);
    else if (*split) run_split(config, out);
    else if (*stats) run_stats(config, out);
    else if (*annotate) run_annotate(config, out);
    else if (*emit) run_emit_train(config, with_rationale, without_rationale, out);
    else if (*sample) run_sample_candidates(config, out);
    else if (*evaluate) run_evaluate(config, model, mode, out);
    else if (*variants) run_variants(config, out);
    else if (*judge) run_judge(config, model, out);
    else if (*report) run_report(config, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 10;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace ratrec::cli
