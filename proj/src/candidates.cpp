#include "ratrec/candidates.hpp"

#include <numeric>

#include "ratrec/error.hpp"
#include "ratrec/infer_parse.hpp"
#include "ratrec/util.hpp"

namespace ratrec::eval {

std::vector<std::string> CandidateSet::titles() const {
  std::vector<std::string> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.title);
  return out;
}

CandidateSet sample_candidates(const corpus::CatalogItem& gt, std::span<const corpus::CatalogItem> vocab,
                               const std::set<std::string, std::less<>>& history_ids, std::size_t n_neg,
                               std::int64_t seed, std::string_view user_id, std::string_view stream_key) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto& item = vocab[i];
    if (item.item_id == gt.item_id || history_ids.contains(item.item_id)) continue;
    eligible.push_back(i);
  }
  if (eligible.size() < n_neg) {
    throw SamplingError("user " + std::string(user_id) + ": need " + std::to_string(n_neg) + " negatives but only " +
                        std::to_string(eligible.size()) + " items are eligible (short by " +
                        std::to_string(n_neg - eligible.size()) + ")");
  }

  SeededStream stream(seed, stream_key.empty() ? user_id : stream_key);
  std::set<std::string> seen_titles{infer::normalize_title(gt.title)};
  std::vector<corpus::CatalogItem> negatives;
  negatives.reserve(n_neg);

  // Partial Fisher-Yates over the eligible pool.
  for (std::size_t i = 0; i < eligible.size() && negatives.size() < n_neg; ++i) {
    const std::size_t j = i + stream.below(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    const auto& pick = vocab[eligible[i]];
    if (!seen_titles.insert(infer::normalize_title(pick.title)).second) continue;
    negatives.push_back(pick);
  }
  if (negatives.size() < n_neg) {
    throw SamplingError("user " + std::string(user_id) + ": need " + std::to_string(n_neg) +
                        " negatives with distinct titles but only " + std::to_string(negatives.size()) +
                        " exist (short by " + std::to_string(n_neg - negatives.size()) + ")");
  }

  CandidateSet set;
  set.user_id = std::string(user_id);
  set.seed = seed;
  set.gt_index = stream.below(n_neg + 1);
  set.candidates = std::move(negatives);
  set.candidates.insert(set.candidates.begin() + static_cast<std::ptrdiff_t>(set.gt_index), gt);
  return set;
}

std::vector<CandidateSet> sample_for_examples(std::span<const corpus::SplitExample> examples,
                                              std::span<const corpus::CatalogItem> vocab, std::size_t n_neg,
                                              std::int64_t seed, bool per_prefix_streams) {
  std::vector<CandidateSet> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    std::set<std::string, std::less<>> history_ids;
    for (const auto& h : ex.history) history_ids.insert(h.item_id);
    const std::string key =
        per_prefix_streams ? ex.user_id + "#" + std::to_string(ex.history.size()) : ex.user_id;
    out.push_back(sample_candidates({ex.target.item_id, ex.target.title}, vocab, history_ids, n_neg, seed,
                                    ex.user_id, key));
  }
  return out;
}

json to_json(const CandidateSet& set) {
  json candidates = json::array();
  for (const auto& c : set.candidates) candidates.push_back({{"item_id", c.item_id}, {"title", c.title}});
  return {{"user_id", set.user_id}, {"seed", set.seed}, {"gt_index", set.gt_index}, {"candidates", candidates}};
}

CandidateSet candidate_set_from_json(const json& j) {
  CandidateSet set;
  set.user_id = j.at("user_id").get<std::string>();
  set.seed = j.at("seed").get<std::int64_t>();
  set.gt_index = j.at("gt_index").get<std::size_t>();
  for (const auto& c : j.at("candidates")) {
    set.candidates.push_back({c.at("item_id").get<std::string>(), c.at("title").get<std::string>()});
  }
  if (set.gt_index >= set.candidates.size()) {
    throw FormatError("candidate set for user " + set.user_id + " has gt_index outside the list");
  }
  return set;
}

void write_candidates(const std::filesystem::path& path, std::span<const CandidateSet> sets) {
  std::vector<json> rows;
  rows.reserve(sets.size());
  for (const auto& s : sets) rows.push_back(to_json(s));
  write_file_atomic(path, to_jsonl(rows));
}

std::vector<CandidateSet> read_candidates(const std::filesystem::path& path) {
  std::vector<CandidateSet> out;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    try {
      out.push_back(candidate_set_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace ratrec::eval
