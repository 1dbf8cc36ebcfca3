#include "ratrec/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "ratrec/error.hpp"
#include "ratrec/infer_parse.hpp"

namespace ratrec::prompting {

namespace {

struct ModeFormat {
  std::string operator()(const RationaleFirst&) const {
    return std::string(template_text("format_rationale_first.v1"));
  }
  std::string operator()(const ItemOnly&) const { return std::string(template_text("format_item_only.v1")); }
  std::string operator()(const RankedList& r) const {
    return fill_template(template_text("format_ranked_list.v1"), {{"k", std::to_string(r.k)}});
  }
};

void require_distinct_candidates(std::span<const std::string> candidates) {
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    if (!seen.insert(infer::normalize_title(c)).second) {
      throw PreconditionError("candidate titles collide after normalization: '" + c + "'");
    }
  }
}

std::string task_text(std::span<const corpus::Interaction> history, std::span<const std::string> candidates,
                      const InferenceMode& mode, const PromptOptions& options) {
  if (candidates.empty()) throw PreconditionError("render_task_prompt: candidate list is empty");
  if (const auto* ranked = std::get_if<RankedList>(&mode); ranked && ranked->k < 2) {
    throw PreconditionError("RankedList mode needs k >= 2");
  }
  require_distinct_candidates(candidates);
  return fill_template(template_text("task_prompt.v1"),
                       {{"response_format", std::visit(ModeFormat{}, mode)},
                        {"history", render_history(history, options)},
                        {"candidates", render_candidates(candidates)}});
}

}  // namespace

std::string mode_label(const InferenceMode& mode) {
  if (std::holds_alternative<RationaleFirst>(mode)) return "rationale-first";
  if (std::holds_alternative<ItemOnly>(mode)) return "item-only";
  return "ranked-list-" + std::to_string(std::get<RankedList>(mode).k);
}

InferenceMode parse_mode(std::string_view label, std::size_t default_k) {
  if (label == "rationale-first") return RationaleFirst{};
  if (label == "item-only") return ItemOnly{};
  if (label == "ranked-list") {
    if (default_k < 2) throw PreconditionError("ranked-list k must be at least 2");
    return RankedList{default_k};
  }
  constexpr std::string_view kRanked = "ranked-list-";
  if (label.starts_with(kRanked)) {
    auto digits = label.substr(kRanked.size());
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(c); })) {
      const auto k = std::stoul(std::string(digits));
      if (k < 2) throw PreconditionError("ranked-list k must be at least 2");
      return RankedList{k};
    }
  }
  throw PreconditionError("unknown inference mode '" + std::string(label) + "'");
}

std::string TrainingRecord::flatten() const { return user_text + "\n#Output\n" + assistant_text; }

json TrainingRecord::to_json() const {
  return {{"messages", json::array({{{"role", "user"}, {"content", user_text}},
                                    {{"role", "assistant"}, {"content", assistant_text}}})}};
}

std::string fill_template(std::string_view tpl, const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const auto open = tpl.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = tpl.find('}', open + 1);
    if (close == std::string_view::npos) break;
    const auto name = tpl.substr(open + 1, close - open - 1);
    auto it = values.find(name);
    out.append(tpl.substr(pos, open - pos));
    if (it != values.end()) {
      out.append(it->second);
      pos = close + 1;
    } else {
      out.push_back('{');
      pos = open + 1;
    }
  }
  out.append(tpl.substr(pos));
  return out;
}

std::string render_history(std::span<const corpus::Interaction> history, const PromptOptions& options) {
  const auto window = corpus::truncate_history(history, options.max_items, options.max_title_chars);
  std::string out;
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += "(" + std::to_string(i + 1) + ")Title: " + window[i].title;
  }
  return out;
}

std::string render_candidates(std::span<const std::string> candidates) {
  std::string out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += "(" + std::to_string(i + 1) + ")" + candidates[i];
  }
  return out;
}

RenderedPrompt render_annotation_prompt(std::span<const corpus::Interaction> history,
                                        const corpus::Interaction& target, const PromptOptions& options) {
  if (history.empty()) throw PreconditionError("render_annotation_prompt: history is empty");
  RenderedPrompt prompt;
  prompt.text = fill_template(template_text("annotation_prompt.v1"),
                              {{"history", render_history(history, options)}, {"target", target.title}});
  prompt.kind = Annotation{};
  return prompt;
}

RenderedPrompt render_task_prompt(std::span<const corpus::Interaction> history,
                                  std::span<const std::string> candidates, const InferenceMode& mode,
                                  const PromptOptions& options) {
  RenderedPrompt prompt;
  prompt.text = task_text(history, candidates, mode, options);
  prompt.kind = mode;
  if (std::holds_alternative<ItemOnly>(mode)) prompt.prefill = std::string(kItemOpen);
  return prompt;
}

std::string render_target(std::string_view rationale, std::string_view target_title) {
  rationale = trim(rationale);
  target_title = trim(target_title);
  for (std::string_view payload : {rationale, target_title}) {
    if (payload.find(kThinkClose) != std::string_view::npos || payload.find(kItemClose) != std::string_view::npos) {
      throw PreconditionError("render_target: payload contains a closing tag");
    }
  }
  std::string out;
  out.reserve(rationale.size() + target_title.size() + 32);
  out.append(kThinkOpen).append(rationale).append(kThinkClose).push_back('\n');
  out.append(kItemOpen).append(target_title).append(kItemClose);
  return out;
}

TrainingRecord render_training_record(std::span<const corpus::Interaction> history,
                                      std::span<const std::string> candidates, std::string_view rationale,
                                      std::string_view target_title, const PromptOptions& options) {
  if (std::find(candidates.begin(), candidates.end(), target_title) == candidates.end()) {
    throw PreconditionError("render_training_record: target title is not among the candidates");
  }
  return {render_task_prompt(history, candidates, RationaleFirst{}, options).text,
          render_target(rationale, target_title)};
}

TrainingRecord render_item_only_record(std::span<const corpus::Interaction> history,
                                       std::span<const std::string> candidates, std::string_view target_title,
                                       const PromptOptions& options) {
  if (std::find(candidates.begin(), candidates.end(), target_title) == candidates.end()) {
    throw PreconditionError("render_item_only_record: target title is not among the candidates");
  }
  if (target_title.find(kItemClose) != std::string_view::npos) {
    throw PreconditionError("render_item_only_record: title contains a closing tag");
  }
  std::string assistant;
  assistant.append(kItemOpen).append(target_title).append(kItemClose);
  return {render_task_prompt(history, candidates, ItemOnly{}, options).text, std::move(assistant)};
}

}  // namespace ratrec::prompting
