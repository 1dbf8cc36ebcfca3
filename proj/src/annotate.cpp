#include "ratrec/annotate.hpp"

#include <map>

#include <spdlog/spdlog.h>

#include "ratrec/error.hpp"

namespace ratrec::annotate {

namespace {

/// End of the balanced {...} starting at open, honouring JSON string literals.
std::optional<std::size_t> balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::nullopt;
}

llm::ChatRequest annotation_request(const corpus::SplitExample& ex, const prompting::PromptOptions& options) {
  return {{{"user", prompting::render_annotation_prompt(ex.history, ex.target, options).text}}, std::nullopt};
}

llm::ChatRequest requery_request(const llm::ChatRequest& first, const std::string& bad_reply) {
  llm::ChatRequest retry = first;
  retry.messages.push_back({"assistant", bad_reply});
  retry.messages.push_back({"user", std::string(prompting::template_text("annotation_retry.v1"))});
  return retry;
}

/// batch_complete with one extra pass over failed slots; throws if any slot still fails.
std::vector<llm::ChatExchange> complete_all(const llm::ChatClient& client, std::span<const llm::ChatRequest> requests,
                                            const std::optional<std::filesystem::path>& cache_dir) {
  auto slots = client.batch_complete(requests, cache_dir);
  std::vector<std::size_t> failed;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].ok()) failed.push_back(i);
  }
  if (!failed.empty()) {
    spdlog::warn("annotator: {} of {} requests failed, retrying them once", failed.size(), slots.size());
    std::vector<llm::ChatRequest> again;
    for (auto i : failed) again.push_back(requests[i]);
    auto retried = client.batch_complete(again, cache_dir);
    for (std::size_t j = 0; j < failed.size(); ++j) {
      if (!retried[j].ok()) {
        const auto& err = *retried[j].error;
        if (err.category == Error::Category::Protocol) throw ProtocolError(err.status, err.message);
        throw TransportError(err.status, "annotator unreachable: " + err.message);
      }
      slots[failed[j]] = std::move(retried[j]);
    }
  }
  std::vector<llm::ChatExchange> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s.exchange));
  return out;
}

corpus::CatalogItem item_of(const corpus::Interaction& it) { return {it.item_id, it.title}; }

}  // namespace

Verdict parse_annotation(std::string_view raw) {
  for (std::size_t open = raw.find('{'); open != std::string_view::npos; open = raw.find('{', open + 1)) {
    const auto close = balanced_end(raw, open);
    if (!close) continue;
    json j = json::parse(raw.substr(open, *close - open + 1), nullptr, false);
    if (!j.is_object()) continue;
    auto rationale = j.find("rationale");
    auto coherent = j.find("coherent");
    if (rationale == j.end() || coherent == j.end()) {
      throw FormatError("annotation object lacks \"rationale\" or \"coherent\"");
    }
    if (!rationale->is_string()) throw FormatError("annotation \"rationale\" is not a string");
    if (!coherent->is_boolean()) throw FormatError("annotation \"coherent\" is not a boolean");
    Verdict v{rationale->get<std::string>(), coherent->get<bool>()};
    if (v.coherent && trim(v.rationale).empty()) throw FormatError("coherent annotation with empty rationale");
    return v;
  }
  throw FormatError("no JSON object found in annotator reply");
}

AnnotationRun annotate_corpus(std::span<const corpus::SplitExample> examples, const llm::ChatClient& client,
                              const std::optional<std::filesystem::path>& cache_dir,
                              const prompting::PromptOptions& options) {
  for (const auto& ex : examples) {
    if (ex.split != corpus::Split::Train) {
      throw PreconditionError("annotate_corpus: only train examples may be annotated (user " + ex.user_id + ")");
    }
  }

  std::vector<llm::ChatRequest> requests;
  requests.reserve(examples.size());
  for (const auto& ex : examples) requests.push_back(annotation_request(ex, options));
  auto exchanges = complete_all(client, requests, cache_dir);

  std::vector<std::optional<Verdict>> verdicts(examples.size());
  std::vector<std::size_t> unreadable;
  for (std::size_t i = 0; i < exchanges.size(); ++i) {
    try {
      verdicts[i] = parse_annotation(exchanges[i].response_text);
    } catch (const FormatError&) {
      unreadable.push_back(i);
    }
  }

  if (!unreadable.empty()) {
    std::vector<llm::ChatRequest> retries;
    for (auto i : unreadable) retries.push_back(requery_request(requests[i], exchanges[i].response_text));
    auto second = complete_all(client, retries, cache_dir);
    for (std::size_t j = 0; j < unreadable.size(); ++j) {
      try {
        verdicts[unreadable[j]] = parse_annotation(second[j].response_text);
        exchanges[unreadable[j]] = std::move(second[j]);
      } catch (const FormatError& e) {
        spdlog::debug("annotation for example {} dropped: {}", unreadable[j], e.what());
      }
    }
  }

  AnnotationRun run;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!verdicts[i]) {
      ++run.dropped;
      run.dropped_indices.push_back(i);
      continue;
    }
    run.results.push_back({i, examples[i].user_id, examples[i].target.item_id, std::move(verdicts[i]->rationale),
                           verdicts[i]->coherent, exchanges[i].response_text, client.config().model_name});
  }
  if (run.dropped > 0) spdlog::warn("annotator: {} examples dropped after an unreadable re-query", run.dropped);
  return run;
}

std::vector<RationaleTuple> filter_incoherent(std::span<const AnnotationResult> results,
                                              std::span<const corpus::SplitExample> examples) {
  std::vector<RationaleTuple> tuples;
  for (const auto& r : results) {
    if (!r.coherent) continue;
    if (r.example_index >= examples.size()) {
      throw PreconditionError("filter_incoherent: result refers to example " + std::to_string(r.example_index) +
                              " beyond the example list");
    }
    const auto& ex = examples[r.example_index];
    if (ex.user_id != r.user_id || ex.target.item_id != r.target_item_id) {
      throw PreconditionError("filter_incoherent: result for user " + r.user_id + " is not aligned with its example");
    }
    RationaleTuple t;
    t.user_id = ex.user_id;
    for (const auto& h : ex.history) t.history.push_back(item_of(h));
    t.target = item_of(ex.target);
    t.rationale = r.rationale;
    tuples.push_back(std::move(t));
  }
  if (tuples.empty()) {
    spdlog::warn("filter_incoherent: every one of {} annotations was flagged incoherent; the corpus is empty",
                 results.size());
  }
  return tuples;
}

json to_json(const AnnotationResult& r) {
  return {{"user_id", r.user_id},
          {"target_item_id", r.target_item_id},
          {"rationale", r.rationale},
          {"coherent", r.coherent},
          {"annotator_model", r.annotator_model}};
}

AnnotationResult annotation_from_json(const json& j) {
  AnnotationResult r;
  r.user_id = j.at("user_id").get<std::string>();
  r.target_item_id = j.at("target_item_id").get<std::string>();
  r.rationale = j.at("rationale").get<std::string>();
  r.coherent = j.at("coherent").get<bool>();
  r.annotator_model = j.at("annotator_model").get<std::string>();
  return r;
}

void write_rationales(const std::filesystem::path& path, std::span<const AnnotationResult> results) {
  std::vector<json> rows;
  rows.reserve(results.size());
  for (const auto& r : results) rows.push_back(to_json(r));
  write_file_atomic(path, to_jsonl(rows));
}

std::vector<AnnotationResult> read_rationales(const std::filesystem::path& path) {
  std::vector<AnnotationResult> out;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    try {
      out.push_back(annotation_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

std::vector<AnnotationResult> align_rationales(std::span<const AnnotationResult> rows,
                                               std::span<const corpus::SplitExample> examples) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> positions;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    positions[{examples[i].user_id, examples[i].target.item_id}].push_back(i);
  }
  std::map<std::pair<std::string, std::string>, std::size_t> used;
  std::vector<AnnotationResult> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const std::pair<std::string, std::string> key{row.user_id, row.target_item_id};
    auto it = positions.find(key);
    auto& n = used[key];
    if (it == positions.end() || n >= it->second.size()) {
      throw PreconditionError("rationale for user " + row.user_id + ", item " + row.target_item_id +
                              " has no matching train example");
    }
    AnnotationResult aligned = row;
    aligned.example_index = it->second[n++];
    out.push_back(std::move(aligned));
  }
  return out;
}

}  // namespace ratrec::annotate
