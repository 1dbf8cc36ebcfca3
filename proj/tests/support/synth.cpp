#include "synth.hpp"

#include <atomic>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "ratrec/prompting.hpp"

namespace ratrec::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() / fmt::format("ratrec-test-{:08x}-{}", rd(), counter++);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<corpus::CatalogItem> make_catalog(std::size_t n) {
  static constexpr std::string_view kColors[] = {"amber", "blue", "coral", "denim", "ebony", "fern", "gold", "hazel"};
  static constexpr std::string_view kKinds[] = {"beanie", "backpack", "joggers", "scarf", "mug", "kettle", "lamp",
                                                "notebook", "sandals", "tote"};
  std::vector<corpus::CatalogItem> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({fmt::format("i{:04}", i),
                   fmt::format("{} {} model {}", kColors[i % std::size(kColors)],
                               kKinds[(i / std::size(kColors)) % std::size(kKinds)], i)});
  }
  return out;
}

std::vector<corpus::UserSequence> make_sequences(std::uint64_t seed, std::size_t n_users, std::size_t min_len,
                                                 std::size_t max_len, std::span<const corpus::CatalogItem> catalog) {
  if (catalog.size() < 2) throw std::invalid_argument("catalog too small");
  std::mt19937_64 rng(seed);
  std::vector<corpus::UserSequence> out;
  for (std::size_t u = 0; u < n_users; ++u) {
    corpus::UserSequence seq;
    seq.user_id = fmt::format("u{:05}", u);
    const std::size_t len = std::uniform_int_distribution<std::size_t>(min_len, max_len)(rng);
    std::size_t prev = u % catalog.size();
    std::int64_t t = 1000;
    seq.items.push_back({seq.user_id, catalog[prev].item_id, catalog[prev].title, t});
    while (seq.items.size() < len) {
      std::size_t next = std::uniform_int_distribution<std::size_t>(0, catalog.size() - 1)(rng);
      if (next == prev) continue;
      t += std::uniform_int_distribution<std::int64_t>(1, 10'000)(rng);
      seq.items.push_back({seq.user_id, catalog[next].item_id, catalog[next].title, t});
      prev = next;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::string first_user_content(const json& body) {
  for (const auto& m : body.at("messages")) {
    if (m.at("role") == "user") return m.at("content").get<std::string>();
  }
  return {};
}

std::string history_section(const json& body) {
  const std::string content = first_user_content(body);
  constexpr std::string_view kLabel = "[Purchase History] ";
  const auto start = content.rfind(kLabel);
  if (start == std::string::npos) return {};
  const auto from = start + kLabel.size();
  const auto end = content.find('\n', from);
  return content.substr(from, end == std::string::npos ? std::string::npos : end - from);
}

bool has_prefill(const json& body) {
  const auto& messages = body.at("messages");
  return !messages.empty() && messages.back().at("role") == "assistant";
}

PlantedCorpus make_planted_corpus(std::size_t n_users, std::uint64_t seed, std::size_t min_len, std::size_t max_len,
                                  std::size_t n_catalog) {
  PlantedCorpus c;
  c.catalog = make_catalog(n_catalog);
  c.sequences = make_sequences(seed, n_users, min_len, max_len, c.catalog);
  c.split = corpus::split_all(c.sequences);
  c.tests = corpus::select(c.split, corpus::Split::Test);
  c.train = corpus::select(c.split, corpus::Split::Train);
  c.candidates = eval::sample_for_examples(c.tests, c.catalog, 19, static_cast<std::int64_t>(seed),
                                           false);
  return c;
}

llm::ScriptedMock::Handler planted_model(const PlantedCorpus& corpus, std::vector<Answer> plan, bool ranked) {
  if (plan.size() != corpus.tests.size()) throw std::invalid_argument("plan size differs from the test split");
  struct Entry {
    std::string user_id;
    std::vector<std::string> titles;
    std::size_t gt = 0;
    Answer answer = Answer::Truth;
  };
  std::map<std::string, Entry> by_history;
  for (std::size_t i = 0; i < corpus.tests.size(); ++i) {
    const auto& ex = corpus.tests[i];
    const auto& set = corpus.candidates[i];
    auto [it, fresh] = by_history.emplace(prompting::render_history(ex.history),
                                          Entry{ex.user_id, set.titles(), set.gt_index, plan[i]});
    if (!fresh) throw std::invalid_argument("two test users share a rendered history");
  }
  return [by_history = std::move(by_history), ranked](const json& body) -> llm::MockReply {
    auto it = by_history.find(history_section(body));
    if (it == by_history.end()) return {400, "unknown history", 0.0};
    const auto& e = it->second;
    const std::size_t wrong = e.gt == 0 ? 1 : 0;
    std::string item_block;
    switch (e.answer) {
      case Answer::Garbage: return {200, "I cannot decide on a single product.", 0.0};
      case Answer::Truth: item_block = fmt::format("<item>{}</item>", e.titles[e.gt]); break;
      case Answer::Wrong: item_block = fmt::format("<item>{}</item>", e.titles[wrong]); break;
    }
    if (ranked) {
      std::size_t added = 0;
      for (std::size_t j = 0; j < e.titles.size() && added < 4; ++j) {
        if (j == e.gt || (e.answer == Answer::Wrong && j == wrong)) continue;
        item_block += fmt::format("<item>{}</item>", e.titles[j]);
        ++added;
      }
    }
    if (has_prefill(body)) return {200, item_block.substr(std::string_view("<item>").size()), 0.0};
    return {200, fmt::format("<think>grounded in [[{}]]</think>\n{}", e.user_id, item_block), 0.0};
  };
}

llm::ScriptedMock::Handler planted_annotator(const PlantedCorpus& corpus, std::vector<Annotation> plan) {
  if (plan.size() != corpus.train.size()) throw std::invalid_argument("plan size differs from the train split");
  std::map<std::string, std::pair<std::string, Annotation>> by_key;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    const auto& ex = corpus.train[i];
    const auto key = prompting::render_history(ex.history) + "|" + ex.target.title;
    by_key.emplace(key, std::pair{fmt::format("{} follows from [[{}]] step {}", ex.target.title, ex.user_id,
                                              ex.history.size()),
                                  plan[i]});
  }
  return [by_key = std::move(by_key)](const json& body) -> llm::MockReply {
    const std::string content = first_user_content(body);
    constexpr std::string_view kNext = "[Next Item] Title: ";
    const auto at = content.find(kNext);
    if (at == std::string::npos) return {400, "not an annotation prompt", 0.0};
    const auto from = at + kNext.size();
    const auto end = content.find('\n', from);
    const auto target = content.substr(from, end == std::string::npos ? std::string::npos : end - from);
    auto it = by_key.find(history_section(body) + "|" + target);
    if (it == by_key.end()) return {400, "unknown example", 0.0};
    const auto& [rationale, kind] = it->second;
    switch (kind) {
      case Annotation::Malformed: return {200, "{\"rationale\": \"unterminated", 0.0};
      case Annotation::Coherent: return {200, json{{"rationale", rationale}, {"coherent", true}}.dump(), 0.0};
      case Annotation::Incoherent: return {200, json{{"rationale", rationale}, {"coherent", false}}.dump(), 0.0};
    }
    return {500, "unreachable", 0.0};
  };
}

llm::ScriptedMock::Handler planted_judge(std::map<std::string, std::string> reply_by_user) {
  return [reply_by_user = std::move(reply_by_user)](const json& body) -> llm::MockReply {
    const std::string content = first_user_content(body);
    const auto open = content.find("[[");
    const auto close = content.find("]]", open == std::string::npos ? 0 : open);
    if (open == std::string::npos || close == std::string::npos) return {400, "no user marker", 0.0};
    auto it = reply_by_user.find(content.substr(open + 2, close - open - 2));
    if (it == reply_by_user.end()) return {400, "unscripted user", 0.0};
    return {200, it->second, 0.0};
  };
}

llm::EndpointConfig mock_endpoint(std::string model_name, std::size_t max_in_flight) {
  llm::EndpointConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.model_name = std::move(model_name);
  c.max_in_flight = max_in_flight;
  c.backoff_base_s = 0.0;
  return c;
}

llm::ChatClient mock_client(const llm::EndpointConfig& config, std::shared_ptr<llm::ScriptedMock> mock) {
  llm::ChatClient client(config, std::make_shared<llm::MockTransport>(std::move(mock)));
  client.set_sleeper([](std::chrono::duration<double>) {});
  return client;
}

}  // namespace ratrec::testing
