#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ratrec/corpus.hpp"

namespace ratrec::prompting {

struct RationaleFirst {
  bool operator==(const RationaleFirst&) const = default;
};
struct ItemOnly {
  bool operator==(const ItemOnly&) const = default;
};
struct RankedList {
  std::size_t k = 5;  // >= 2
  bool operator==(const RankedList&) const = default;
};

using InferenceMode = std::variant<RationaleFirst, ItemOnly, RankedList>;

/// "rationale-first", "item-only", "ranked-list-<k>".
std::string mode_label(const InferenceMode& mode);

/// Accepts the labels produced by mode_label plus "ranked-list" (k = default_k).
InferenceMode parse_mode(std::string_view label, std::size_t default_k = 5);

struct Annotation {
  bool operator==(const Annotation&) const = default;
};

struct RenderedPrompt {
  std::string text;
  std::variant<InferenceMode, Annotation> kind;
  std::optional<std::string> prefill;
};

struct TrainingRecord {
  std::string user_text;
  std::string assistant_text;

  /// Single-string rendering with the #Output section, for completion-style tuning stacks.
  std::string flatten() const;

  /// {"messages": [{"role": "user", ...}, {"role": "assistant", ...}]}
  json to_json() const;
};

struct PromptOptions {
  std::size_t max_items = corpus::kDefaultMaxItems;
  std::size_t max_title_chars = corpus::kDefaultMaxTitleChars;
};

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kItemOpen = "<item>";
inline constexpr std::string_view kItemClose = "</item>";

/// Raw text of a bundled template resource, e.g. "task_prompt.v1".
/// Throws PreconditionError for unknown names.
std::string_view template_text(std::string_view name);
std::vector<std::string> template_names();

/// Replaces {name} placeholders in one pass; substituted values are never rescanned
/// and unknown placeholders are left verbatim.
std::string fill_template(std::string_view tpl, const std::map<std::string, std::string, std::less<>>& values);

/// "(1)Title: a (2)Title: b" over the truncated window.
std::string render_history(std::span<const corpus::Interaction> history, const PromptOptions& options = {});

/// "(1)a (2)b"
std::string render_candidates(std::span<const std::string> candidates);

RenderedPrompt render_annotation_prompt(std::span<const corpus::Interaction> history,
                                        const corpus::Interaction& target,
                                        const PromptOptions& options = {});

RenderedPrompt render_task_prompt(std::span<const corpus::Interaction> history,
                                  std::span<const std::string> candidates, const InferenceMode& mode,
                                  const PromptOptions& options = {});

/// "<think>r</think>\n<item>t</item>" with both payloads trimmed of ASCII whitespace.
/// Throws PreconditionError if either payload contains a closing tag.
std::string render_target(std::string_view rationale, std::string_view target_title);

/// Training pair for the rationale-first corpus. Throws PreconditionError if the
/// target title is not among the candidates.
TrainingRecord render_training_record(std::span<const corpus::Interaction> history,
                                      std::span<const std::string> candidates, std::string_view rationale,
                                      std::string_view target_title, const PromptOptions& options = {});

/// Training pair for the corpus without rationales: item-only instruction and
/// "<item>t</item>" as the assistant turn.
TrainingRecord render_item_only_record(std::span<const corpus::Interaction> history,
                                       std::span<const std::string> candidates, std::string_view target_title,
                                       const PromptOptions& options = {});

}  // namespace ratrec::prompting
