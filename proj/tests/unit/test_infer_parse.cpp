#include <doctest.h>

#include <random>
#include <set>

#include "ratrec/error.hpp"
#include "ratrec/infer_parse.hpp"
#include "ratrec/prompting.hpp"
#include "ratrec/util.hpp"

using namespace ratrec;
using namespace ratrec::infer;

namespace {

const std::string kJoggers = "Oalka women's joggers high waist yoga pockets sweatpants sport workout pants";

std::vector<std::string> fashion() {
  return {"Classic fuzzy ribbed knit beanie hat", "Hotstyle bestie mini backpack purse", kJoggers,
          "Leather belt", "Wool scarf"};
}

std::string random_soup(std::mt19937_64& rng, std::size_t pieces) {
  static const std::vector<std::string> parts{"<think>", "</think>", "<item>", "</item>", "<", ">", "/", "think",
                                              "item",    " ",        "\n",     "abc",    "é", "<thi", "</ite", "\xFF"};
  std::string out;
  for (std::size_t i = 0; i < pieces; ++i) out += parts[rng() % parts.size()];
  return out;
}

}  // namespace

TEST_CASE("parse_tagged_output examples") {
  SUBCASE("reference block") {
    const auto text = read_file(std::filesystem::path(RATREC_FIXTURE_DIR) / "reference_output_block.txt");
    const auto p = parse_tagged_output(text);
    REQUIRE(p.rationale);
    CHECK(p.rationale->starts_with("Based on the customer\xE2\x80\x99s history"));
    CHECK(p.rationale->ends_with("recommends...(truncated)"));
    CHECK(p.item_texts == std::vector<std::string>{kJoggers});
    CHECK(p.raw == text);
  }
  SUBCASE("items only") {
    const auto p = parse_tagged_output("<item>A</item><item>B</item>");
    CHECK_FALSE(p.rationale);
    CHECK(p.item_texts == std::vector<std::string>{"A", "B"});
  }
  SUBCASE("truncated item is salvaged") {
    const auto p = parse_tagged_output("<think>r</think><item>A");
    CHECK(p.rationale == "r");
    CHECK(p.item_texts == std::vector<std::string>{"A"});
  }
  SUBCASE("no item tag") {
    CHECK_THROWS_AS(parse_tagged_output("<think>only thoughts</think>"), FormatError);
    CHECK_FALSE(try_parse_tagged_output("plain text"));
  }
  SUBCASE("second think block ignored, unclosed think skipped") {
    const auto p = parse_tagged_output("<think>a</think><think>b</think><item>x</item>");
    CHECK(p.rationale == "a");
    const auto q = parse_tagged_output("<think>never closed <item>x</item>");
    CHECK_FALSE(q.rationale);
    CHECK(q.item_texts == std::vector<std::string>{"x"});
  }
  SUBCASE("tags inside payloads") {
    const auto p = parse_tagged_output(prompting::render_target("compare <item> with <think>", "a <think> b"));
    CHECK(p.rationale == "compare <item> with <think>");
    CHECK(p.item_texts == std::vector<std::string>{"a <think> b"});
  }
}

TEST_CASE("normalize_title") {
  CHECK(normalize_title("Hotstyle  BESTIE Mini-Backpack Purse,") == "hotstyle bestie mini backpack purse");
  CHECK(normalize_title("") == "");
  CHECK(normalize_title("hotstyle bestie mini backpack purse") == "hotstyle bestie mini backpack purse");
  CHECK(normalize_title("Cafe\xCC\x81 STRASSE") == normalize_title("Caf\xC3\xA9 stra\xC3\x9F" "e"));
  CHECK(normalize_title("  ...  ") == "");
}

TEST_CASE("match_item tiers") {
  const auto c = fashion();
  SUBCASE("exact") {
    const auto m = match_item("Leather belt", c);
    CHECK(m.candidate_index == 3);
    CHECK(m.tier == MatchTier::Exact);
    CHECK(m.score == 1.0);
    CHECK(match_item("  LEATHER belt!", c).tier == MatchTier::Exact);
  }
  SUBCASE("fuzzy") {
    const auto m = match_item("Oalka womens joggers high-waist yoga pockets sweatpants sport workout pants", c);
    CHECK(m.candidate_index == 2);
    CHECK(m.tier == MatchTier::Fuzzy);
    // {oalka womens joggers high waist yoga pockets sweatpants sport workout pants} vs the same
    // with "women s": 10 shared tokens over a 13-token union.
    CHECK(m.score == doctest::Approx(10.0 / 13.0).epsilon(1e-12));
  }
  SUBCASE("unrelated") {
    const auto m = match_item("completely unrelated text", c);
    CHECK_FALSE(m.candidate_index);
    CHECK(m.tier == MatchTier::None);
    CHECK(m.score < 0.6);
  }
  SUBCASE("jaccard 0.4 is below the threshold") {
    const std::vector<std::string> one{"alpha beta gamma delta epsilon"};
    const auto m = match_item("alpha beta", one);
    CHECK(m.score == doctest::Approx(0.4));
    CHECK(m.tier == MatchTier::None);
    CHECK(match_item("alpha beta", one, {0.4}).tier == MatchTier::Fuzzy);
  }
  SUBCASE("ties go to the lowest index; empty queries never match") {
    const std::vector<std::string> twins{"red mug large", "red mug small"};
    CHECK(match_item("red mug", twins, {0.5}).candidate_index == 0);
    CHECK(match_item("", twins).tier == MatchTier::None);
    CHECK(match_item("!!!", twins).tier == MatchTier::None);
  }
}

TEST_CASE("rank_from_output") {
  const std::vector<std::string> c{"a0", "b1", "c2", "d3", "e4"};
  CHECK(rank_from_output(parse_tagged_output("<item>e4</item><item>b1</item><item>e4</item>"), c) ==
        std::vector<std::size_t>{4, 1});
  CHECK(rank_from_output(parse_tagged_output("<item>zzz</item><item>qqq</item>"), c).empty());
  CHECK(rank_from_output(parse_tagged_output("<item>a0</item>"), c) == std::vector<std::size_t>{0});
}

TEST_CASE("property: match_item is invariant under normalize_title") {
  const auto c = fashion();
  std::mt19937_64 rng(3);
  const std::vector<std::string> queries{"Leather  BELT", "wool-scarf!!", "oalka joggers yoga pants sport",
                                         "Mini Backpack, Purse (Hotstyle bestie)", "beanie", "", "Cafe\xCC\x81"};
  for (const auto& q : queries) {
    const auto a = match_item(q, c);
    const auto b = match_item(normalize_title(q), c);
    CHECK(a.candidate_index == b.candidate_index);
    CHECK(a.tier == b.tier);
    CHECK(normalize_title(normalize_title(q)) == normalize_title(q));
  }
  for (int trial = 0; trial < 300; ++trial) {
    std::string q;
    for (int w = 0; w < 4; ++w) {
      const auto& title = c[rng() % c.size()];
      q += title.substr(rng() % title.size(), 6);
      q += (rng() % 2) ? "-" : "  ";
    }
    const auto a = match_item(q, c);
    const auto b = match_item(normalize_title(q), c);
    CHECK(a.candidate_index == b.candidate_index);
    CHECK(a.tier == b.tier);
  }
}

TEST_CASE("property: random tag soup never crashes and ranks stay in range") {
  const std::vector<std::string> c{"abc", "item think", "é", "abc abc"};
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 5000; ++trial) {
    const auto text = random_soup(rng, rng() % 40);
    std::optional<ParsedOutput> p;
    CHECK_NOTHROW(p = try_parse_tagged_output(text));
    if (!p) continue;
    const auto ranking = rank_from_output(*p, c);
    std::set<std::size_t> seen(ranking.begin(), ranking.end());
    CHECK(seen.size() == ranking.size());
    for (auto i : ranking) CHECK(i < c.size());
  }
}

TEST_CASE("property: render/parse round trip on random payloads") {
  std::mt19937_64 rng(5);
  const std::string alphabet = "abcXYZ 019.,;:'\"!?()[]{}<>/\\-_\n\t";
  const std::vector<std::string> wide{"\xC3\xA9", "\xE2\x80\x99", "\xF0\x9F\x91\x9C", "<think>", "<item>", "</thi"};
  auto payload = [&] {
    std::string s;
    const std::size_t n = rng() % 60;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng() % 8 == 0) s += wide[rng() % wide.size()];
      else s.push_back(alphabet[rng() % alphabet.size()]);
    }
    return std::string(trim(s));
  };
  for (int trial = 0; trial < 2000; ++trial) {
    const auto r = payload();
    const auto t = payload();
    if (r.find("</think>") != std::string::npos || r.find("</item>") != std::string::npos) continue;
    if (t.find("</think>") != std::string::npos || t.find("</item>") != std::string::npos) continue;
    const auto p = parse_tagged_output(prompting::render_target(r, t));
    REQUIRE(p.rationale == r);
    REQUIRE(p.item_texts == std::vector<std::string>{t});
  }
}
