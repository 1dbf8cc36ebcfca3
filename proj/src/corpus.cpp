#include "ratrec/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "ratrec/error.hpp"

namespace ratrec::corpus {

namespace {

constexpr std::size_t kMaxLoggedSkips = 20;

std::optional<std::string> string_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

std::optional<Interaction> parse_review(std::string_view line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return std::nullopt;
  auto user = string_field(j, "user_id");
  auto item = string_field(j, "item_id");
  auto ts = j.find("timestamp");
  if (!user || !item || user->empty() || item->empty()) return std::nullopt;
  if (ts == j.end() || !ts->is_number_integer()) return std::nullopt;
  const auto timestamp = ts->get<std::int64_t>();
  if (timestamp < 0) return std::nullopt;
  return Interaction{*user, *item, {}, timestamp};
}

json item_json(const Interaction& it) { return json{{"item_id", it.item_id}, {"title", it.title}}; }

Interaction item_from_json(const json& j, const std::string& user_id) {
  Interaction it;
  it.user_id = user_id;
  it.item_id = j.at("item_id").get<std::string>();
  it.title = j.at("title").get<std::string>();
  if (auto ts = j.find("timestamp"); ts != j.end()) it.timestamp = ts->get<std::int64_t>();
  return it;
}

bool chronological(const Interaction& a, const Interaction& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.item_id < b.item_id;
}

SplitExample make_example(const UserSequence& seq, std::size_t target_index, Split split) {
  SplitExample ex;
  ex.user_id = seq.user_id;
  ex.history.assign(seq.items.begin(), seq.items.begin() + static_cast<std::ptrdiff_t>(target_index));
  ex.target = seq.items[target_index];
  ex.split = split;
  return ex;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw FormatError("unknown split label '" + std::string(s) + "'");
}

IngestReport ingest_reviews(const std::filesystem::path& reviews_path,
                            const std::filesystem::path& metadata_path) {
  IngestReport report;

  std::unordered_map<std::string, std::string> titles;
  for_each_line(metadata_path, [&](std::size_t line_no, std::string_view line) {
    json j = json::parse(line, nullptr, false);
    auto item = j.is_object() ? string_field(j, "item_id") : std::nullopt;
    if (!item || item->empty() || (j.contains("title") && !j["title"].is_string() && !j["title"].is_null())) {
      ++report.skipped_metadata_malformed;
      spdlog::warn("{}:{}: malformed metadata record skipped", metadata_path.string(), line_no);
      return;
    }
    auto title = string_field(j, "title").value_or("");
    auto trimmed = trim(title);
    if (!trimmed.empty()) titles.emplace(*item, std::string(trimmed));
  });

  for_each_line(reviews_path, [&](std::size_t line_no, std::string_view line) {
    auto parsed = parse_review(line);
    if (!parsed) {
      ++report.skipped_malformed;
      report.skipped_lines.push_back(line_no);
      if (report.skipped_malformed <= kMaxLoggedSkips) {
        spdlog::warn("{}:{}: malformed review record skipped", reviews_path.string(), line_no);
      }
      return;
    }
    auto it = titles.find(parsed->item_id);
    if (it == titles.end()) {
      ++report.dropped_no_title;
      return;
    }
    parsed->title = it->second;
    report.interactions.push_back(std::move(*parsed));
  });

  if (report.skipped_malformed > kMaxLoggedSkips) {
    spdlog::warn("{} malformed review records skipped in total", report.skipped_malformed);
  }
  return report;
}

std::vector<UserSequence> build_sequences(std::span<const Interaction> interactions,
                                          std::size_t min_len) {
  if (min_len < kDefaultMinLength) {
    throw PreconditionError("build_sequences: min_len must be at least 3");
  }
  std::map<std::string, std::vector<Interaction>> by_user;
  for (const auto& it : interactions) by_user[it.user_id].push_back(it);

  std::vector<UserSequence> out;
  for (auto& [user, items] : by_user) {
    std::stable_sort(items.begin(), items.end(), chronological);
    UserSequence seq{user, {}};
    for (auto& it : items) {
      if (!seq.items.empty() && seq.items.back().item_id == it.item_id) continue;
      seq.items.push_back(std::move(it));
    }
    if (seq.items.size() >= min_len) out.push_back(std::move(seq));
  }
  return out;
}

LeaveOneOut leave_one_out_split(const UserSequence& seq) {
  const std::size_t n = seq.items.size();
  if (n < 3) {
    throw PreconditionError("leave_one_out_split: user " + seq.user_id + " has " + std::to_string(n) +
                            " interactions, need at least 3");
  }
  LeaveOneOut out;
  out.test = make_example(seq, n - 1, Split::Test);
  out.valid = make_example(seq, n - 2, Split::Valid);
  for (std::size_t target = 1; target + 2 < n; ++target) {
    out.train.push_back(make_example(seq, target, Split::Train));
  }
  return out;
}

DatasetStats compute_stats(std::span<const UserSequence> sequences) {
  DatasetStats stats;
  if (sequences.empty()) return stats;
  std::set<std::string_view> items;
  std::size_t total = 0;
  for (const auto& seq : sequences) {
    total += seq.items.size();
    for (const auto& it : seq.items) items.insert(it.item_id);
  }
  stats.n_users = sequences.size();
  stats.n_items = items.size();
  stats.avg_history_len = static_cast<double>(total) / static_cast<double>(sequences.size());
  return stats;
}

std::vector<Interaction> truncate_history(std::span<const Interaction> history, std::size_t max_items,
                                          std::size_t max_title_chars) {
  if (max_items == 0) throw PreconditionError("truncate_history: max_items must be at least 1");
  const std::size_t keep = std::min(max_items, history.size());
  std::vector<Interaction> out(history.end() - static_cast<std::ptrdiff_t>(keep), history.end());
  for (auto& it : out) {
    if (utf8_length(it.title) > max_title_chars) {
      it.title = utf8_prefix(it.title, max_title_chars);
      it.title += kEllipsis;
    }
  }
  return out;
}

std::vector<CatalogItem> catalog(std::span<const UserSequence> sequences) {
  std::map<std::string, std::string> items;
  for (const auto& seq : sequences) {
    for (const auto& it : seq.items) items.emplace(it.item_id, it.title);
  }
  std::vector<CatalogItem> out;
  out.reserve(items.size());
  for (auto& [id, title] : items) out.push_back({id, title});
  return out;
}

json to_json(const UserSequence& seq) {
  json items = json::array();
  for (const auto& it : seq.items) {
    items.push_back({{"item_id", it.item_id}, {"title", it.title}, {"timestamp", it.timestamp}});
  }
  return {{"user_id", seq.user_id}, {"items", std::move(items)}};
}

UserSequence sequence_from_json(const json& j) {
  UserSequence seq;
  seq.user_id = j.at("user_id").get<std::string>();
  for (const auto& it : j.at("items")) seq.items.push_back(item_from_json(it, seq.user_id));
  return seq;
}

json to_json(const SplitExample& ex) {
  json history = json::array();
  for (const auto& it : ex.history) history.push_back(item_json(it));
  return {{"user_id", ex.user_id},
          {"history", std::move(history)},
          {"target", item_json(ex.target)},
          {"split", to_string(ex.split)}};
}

SplitExample split_example_from_json(const json& j) {
  SplitExample ex;
  ex.user_id = j.at("user_id").get<std::string>();
  for (const auto& it : j.at("history")) ex.history.push_back(item_from_json(it, ex.user_id));
  ex.target = item_from_json(j.at("target"), ex.user_id);
  ex.split = split_from_string(j.at("split").get<std::string>());
  return ex;
}

json to_json(const DatasetStats& stats, std::size_t dropped_no_title, std::size_t skipped_malformed) {
  return {{"n_users", stats.n_users},
          {"n_items", stats.n_items},
          {"avg_history_len", stats.avg_history_len},
          {"dropped_no_title", dropped_no_title},
          {"skipped_malformed", skipped_malformed}};
}

std::vector<UserSequence> read_sequences(const std::filesystem::path& path) {
  std::vector<UserSequence> out;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    try {
      out.push_back(sequence_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

void write_sequences(const std::filesystem::path& path, std::span<const UserSequence> sequences) {
  std::vector<json> rows;
  rows.reserve(sequences.size());
  for (const auto& seq : sequences) rows.push_back(to_json(seq));
  write_file_atomic(path, to_jsonl(rows));
}

std::vector<SplitExample> read_split(const std::filesystem::path& path) {
  std::vector<SplitExample> out;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    try {
      out.push_back(split_example_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

void write_split(const std::filesystem::path& path, std::span<const SplitExample> examples) {
  std::vector<json> rows;
  rows.reserve(examples.size());
  for (const auto& ex : examples) rows.push_back(to_json(ex));
  write_file_atomic(path, to_jsonl(rows));
}

std::vector<SplitExample> split_all(std::span<const UserSequence> sequences) {
  std::vector<SplitExample> out;
  for (const auto& seq : sequences) {
    auto loo = leave_one_out_split(seq);
    out.push_back(std::move(loo.test));
    out.push_back(std::move(loo.valid));
    for (auto& ex : loo.train) out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SplitExample> select(std::span<const SplitExample> examples, Split split) {
  std::vector<SplitExample> out;
  for (const auto& ex : examples) {
    if (ex.split == split) out.push_back(ex);
  }
  return out;
}

}  // namespace ratrec::corpus
