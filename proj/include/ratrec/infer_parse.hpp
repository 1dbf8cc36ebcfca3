#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ratrec::infer {

/// Spans extracted from a tagged model response.
struct ParsedOutput {
  std::optional<std::string> rationale;  // first well-formed <think>...</think>
  std::vector<std::string> item_texts;   // every <item>...</item>, in order
  std::string raw;
};

enum class MatchTier { Exact, Fuzzy, None };

struct MatchResult {
  std::optional<std::size_t> candidate_index;
  MatchTier tier = MatchTier::None;
  double score = 0.0;
};

struct MatchOptions {
  double jaccard_threshold = 0.6;
};

/// Throws FormatError when the text holds no <item> opener at all. An unclosed
/// trailing <item> is salvaged as the rest of the text.
ParsedOutput parse_tagged_output(std::string_view text);

/// Same as parse_tagged_output, without throwing.
std::optional<ParsedOutput> try_parse_tagged_output(std::string_view text);

/// NFC, casefold, punctuation to spaces, whitespace collapsed and trimmed.
std::string normalize_title(std::string_view s);

/// Token-set Jaccard similarity of two normalized strings (0 when both are empty).
double token_jaccard(std::string_view normalized_a, std::string_view normalized_b);

MatchResult match_item(std::string_view item_text, std::span<const std::string> candidates,
                       const MatchOptions& options = {});

/// Candidate indices named by the output, in order, deduplicated; unmatched texts dropped.
std::vector<std::size_t> rank_from_output(const ParsedOutput& parsed, std::span<const std::string> candidates,
                                          const MatchOptions& options = {});

std::string_view to_string(MatchTier tier);

}  // namespace ratrec::infer
