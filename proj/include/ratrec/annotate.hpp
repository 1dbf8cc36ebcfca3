#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ratrec/corpus.hpp"
#include "ratrec/llm_client.hpp"
#include "ratrec/prompting.hpp"

namespace ratrec::annotate {

struct AnnotationResult {
  std::size_t example_index = 0;  // position in the annotated example list
  std::string user_id;
  std::string target_item_id;
  std::string rationale;
  bool coherent = false;
  std::string raw_response;
  std::string annotator_model;
};

/// (S_u, i+, r_i+): a history, its next item and the rationale linking them.
struct RationaleTuple {
  std::string user_id;
  std::vector<corpus::CatalogItem> history;
  corpus::CatalogItem target;
  std::string rationale;
};

struct AnnotationRun {
  std::vector<AnnotationResult> results;  // input order, unparseable examples omitted
  std::size_t dropped = 0;
  std::vector<std::size_t> dropped_indices;
};

struct Verdict {
  std::string rationale;
  bool coherent = false;
};

/// First balanced {...} object in raw that carries a string "rationale" and a
/// boolean "coherent". Throws FormatError otherwise.
Verdict parse_annotation(std::string_view raw);

/// Calls the annotator once per train example (re-querying once on unreadable
/// replies). Throws PreconditionError for non-train examples and TransportError /
/// ProtocolError when the endpoint stays unreachable after one batch-level retry.
AnnotationRun annotate_corpus(std::span<const corpus::SplitExample> examples, const llm::ChatClient& client,
                              const std::optional<std::filesystem::path>& cache_dir,
                              const prompting::PromptOptions& options = {});

/// Coherent results joined with their examples. Logs a warning when nothing survives.
std::vector<RationaleTuple> filter_incoherent(std::span<const AnnotationResult> results,
                                              std::span<const corpus::SplitExample> examples);

json to_json(const AnnotationResult& result);

/// Parses a rationales.jsonl row; raw_response and example_index are not stored in the file.
AnnotationResult annotation_from_json(const json& j);

void write_rationales(const std::filesystem::path& path, std::span<const AnnotationResult> results);
std::vector<AnnotationResult> read_rationales(const std::filesystem::path& path);

/// Re-attaches rationales.jsonl rows to the train examples they came from, matching
/// (user_id, target_item_id) occurrences in order. Rows must follow example order.
std::vector<AnnotationResult> align_rationales(std::span<const AnnotationResult> rows,
                                               std::span<const corpus::SplitExample> examples);

}  // namespace ratrec::annotate
