#include "ratrec/infer_parse.hpp"

#include <algorithm>
#include <set>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "ratrec/error.hpp"
#include "ratrec/prompting.hpp"
#include "ratrec/util.hpp"

namespace ratrec::infer {

namespace {

using prompting::kItemClose;
using prompting::kItemOpen;
using prompting::kThinkClose;
using prompting::kThinkOpen;

std::set<std::string_view> tokens(std::string_view normalized) {
  std::set<std::string_view> out;
  std::size_t pos = 0;
  while (pos < normalized.size()) {
    auto end = normalized.find(' ', pos);
    if (end == std::string_view::npos) end = normalized.size();
    if (end > pos) out.insert(normalized.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

}  // namespace

std::optional<ParsedOutput> try_parse_tagged_output(std::string_view text) {
  ParsedOutput out;
  out.raw = std::string(text);
  bool saw_item_opener = false;

  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto think = text.find(kThinkOpen, pos);
    const auto item = text.find(kItemOpen, pos);
    if (think == std::string_view::npos && item == std::string_view::npos) break;

    if (think < item) {
      const auto body = think + kThinkOpen.size();
      const auto close = text.find(kThinkClose, body);
      if (close == std::string_view::npos) {
        // Unclosed think: skip the opener and keep scanning for items.
        pos = body;
        continue;
      }
      if (!out.rationale) out.rationale = std::string(trim(text.substr(body, close - body)));
      pos = close + kThinkClose.size();
      continue;
    }

    saw_item_opener = true;
    const auto body = item + kItemOpen.size();
    const auto close = text.find(kItemClose, body);
    if (close == std::string_view::npos) {
      out.item_texts.emplace_back(trim(text.substr(body)));
      break;
    }
    out.item_texts.emplace_back(trim(text.substr(body, close - body)));
    pos = close + kItemClose.size();
  }

  if (!saw_item_opener) return std::nullopt;
  return out;
}

ParsedOutput parse_tagged_output(std::string_view text) {
  auto parsed = try_parse_tagged_output(text);
  if (!parsed) throw FormatError("model output contains no <item> tag");
  return std::move(*parsed);
}

std::string normalize_title(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  icu::UnicodeString text =
      nfc->normalize(icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size()))),
                     status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalization failed");
  text.foldCase(U_FOLD_CASE_DEFAULT);

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < text.length();) {
    const UChar32 c = text.char32At(i);
    i += U16_LENGTH(c);
    if (u_ispunct(c) || u_isUWhiteSpace(c)) {
      pending_space = !collapsed.isEmpty();
      continue;
    }
    if (pending_space) {
      collapsed.append(static_cast<UChar>(u' '));
      pending_space = false;
    }
    collapsed.append(c);
  }
  std::string out;
  collapsed.toUTF8String(out);
  return out;
}

double token_jaccard(std::string_view normalized_a, std::string_view normalized_b) {
  const auto a = tokens(normalized_a);
  const auto b = tokens(normalized_b);
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : a) common += b.count(t);
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

MatchResult match_item(std::string_view item_text, std::span<const std::string> candidates,
                       const MatchOptions& options) {
  const auto query = normalize_title(item_text);
  MatchResult result;
  if (query.empty()) return result;

  std::vector<std::string> normalized;
  normalized.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    normalized.push_back(normalize_title(candidates[i]));
    if (normalized.back() == query) return {i, MatchTier::Exact, 1.0};
  }

  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const double score = token_jaccard(query, normalized[i]);
    if (!best || score > best_score) {
      best = i;
      best_score = score;
    }
  }
  result.score = best_score;
  if (best && best_score >= options.jaccard_threshold) {
    result.candidate_index = best;
    result.tier = MatchTier::Fuzzy;
  }
  return result;
}

std::vector<std::size_t> rank_from_output(const ParsedOutput& parsed, std::span<const std::string> candidates,
                                          const MatchOptions& options) {
  std::vector<std::size_t> ranking;
  for (const auto& text : parsed.item_texts) {
    const auto match = match_item(text, candidates, options);
    if (!match.candidate_index) continue;
    if (std::find(ranking.begin(), ranking.end(), *match.candidate_index) == ranking.end()) {
      ranking.push_back(*match.candidate_index);
    }
  }
  return ranking;
}

std::string_view to_string(MatchTier tier) {
  switch (tier) {
    case MatchTier::Exact: return "exact";
    case MatchTier::Fuzzy: return "fuzzy";
    case MatchTier::None: return "none";
  }
  return "none";
}

}  // namespace ratrec::infer
