#include <doctest.h>

#include <numeric>
#include <random>

#include "ratrec/error.hpp"
#include "ratrec/infer_parse.hpp"
#include "ratrec/prompting.hpp"
#include "synth.hpp"

using namespace ratrec;
using namespace ratrec::prompting;

namespace {

std::vector<corpus::Interaction> titled(std::vector<std::string> titles) {
  std::vector<corpus::Interaction> out;
  for (std::size_t i = 0; i < titles.size(); ++i) out.push_back({"u", "i" + std::to_string(i), titles[i], 0});
  return out;
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

std::string candidate_section(const std::string& text) {
  constexpr std::string_view kLabel = "[Candidate List]: ";
  return text.substr(text.find(kLabel) + kLabel.size());
}

}  // namespace

TEST_CASE("templates are bundled without trailing newlines") {
  const auto names = template_names();
  CHECK(names.size() == 8);
  for (const auto& n : names) {
    const auto text = template_text(n);
    CHECK_FALSE(text.empty());
    CHECK(text.back() != '\n');
  }
  CHECK_THROWS_AS(template_text("nope.v1"), PreconditionError);
}

TEST_CASE("fill_template substitutes once and keeps unknown placeholders") {
  CHECK(fill_template("a {x} b {y} {z}", {{"x", "{y}"}, {"y", "2"}}) == "a {y} b 2 {z}");
  CHECK(fill_template("{unterminated", {}) == "{unterminated");
}

TEST_CASE("task prompt layout") {
  const auto history = titled({"Classic fuzzy ribbed knit beanie hat", "Hotstyle bestie mini backpack purse"});
  const std::vector<std::string> candidates{"Oalka joggers", "Ceramic mug"};
  const auto p = render_task_prompt(history, candidates, RationaleFirst{});
  CHECK(p.text ==
        "#Instruction\n"
        "Based on [Purchase History], use your logical reasoning process to identify the most suitable item for "
        "this customer from the [Candidate List].\n"
        "Then, include your reasoning inside the <think></think> tag and the recommended item inside the "
        "<item></item> tag.\n"
        "#Input\n"
        "[Purchase History] (1)Title: Classic fuzzy ribbed knit beanie hat (2)Title: Hotstyle bestie mini backpack "
        "purse\n"
        "[Candidate List]: (1)Oalka joggers (2)Ceramic mug");
  CHECK_FALSE(p.prefill);
  CHECK(std::get<InferenceMode>(p.kind) == InferenceMode{RationaleFirst{}});
}

TEST_CASE("mode-specific instructions") {
  const auto history = titled({"beanie"});
  const std::vector<std::string> candidates{"a", "b", "c"};
  SUBCASE("item-only") {
    const auto p = render_task_prompt(history, candidates, ItemOnly{});
    CHECK(count(p.text, "<think>") == 0);
    CHECK(count(p.text, "<item></item>") == 1);
    CHECK(p.prefill == "<item>");
  }
  SUBCASE("ranked list") {
    const auto p = render_task_prompt(history, candidates, RankedList{5});
    CHECK(p.text.find("the 5 most suitable items") != std::string::npos);
    CHECK(p.text.find("<item></item>") != std::string::npos);
    CHECK_THROWS_AS(render_task_prompt(history, candidates, RankedList{1}), PreconditionError);
  }
  SUBCASE("labels") {
    CHECK(mode_label(RankedList{7}) == "ranked-list-7");
    CHECK(parse_mode("ranked-list", 4) == InferenceMode{RankedList{4}});
    CHECK(parse_mode("ranked-list-9") == InferenceMode{RankedList{9}});
    CHECK(parse_mode("item-only") == InferenceMode{ItemOnly{}});
    CHECK_THROWS(parse_mode("ranked-list-x"));
    CHECK_THROWS(parse_mode("best"));
  }
}

TEST_CASE("task prompt preconditions") {
  const auto history = titled({"beanie"});
  std::vector<std::string> none;
  CHECK_THROWS_AS(render_task_prompt(history, none, RationaleFirst{}), PreconditionError);
  std::vector<std::string> clash{"Red Mug", "red  MUG!"};
  CHECK_THROWS_AS(render_task_prompt(history, clash, RationaleFirst{}), PreconditionError);
}

TEST_CASE("annotation prompt") {
  const auto p = render_annotation_prompt(titled({"Classic fuzzy ribbed knit beanie hat", "Mini backpack"}),
                                          {"u", "j", "Joggers with \"pockets\"", 0});
  CHECK(p.text.find("(1)Title: Classic fuzzy ribbed knit beanie hat") != std::string::npos);
  CHECK(p.text.find(R"({"rationale": string, "coherent": boolean})") != std::string::npos);
  CHECK(p.text.find("[Next Item] Title: Joggers with \"pockets\"") != std::string::npos);
  CHECK(std::holds_alternative<Annotation>(p.kind));

  std::vector<std::string> many;
  for (int i = 0; i < 25; ++i) many.push_back("item " + std::to_string(i));
  const auto truncated = render_annotation_prompt(titled(many), {"u", "t", "t", 0});
  CHECK(count(truncated.text, "Title: item") == 20);
  CHECK(truncated.text.find("(1)Title: item 5 ") != std::string::npos);
  CHECK(truncated.text.find("(20)Title: item 24\n") != std::string::npos);
  CHECK_THROWS_AS(render_annotation_prompt({}, {"u", "t", "t", 0}), PreconditionError);
}

TEST_CASE("render_target") {
  CHECK(render_target("r", "t") == "<think>r</think>\n<item>t</item>");
  CHECK(render_target("  r \n", "\tt ") == "<think>r</think>\n<item>t</item>");
  CHECK_THROWS_AS(render_target("see </item>", "t"), PreconditionError);
  CHECK_THROWS_AS(render_target("r", "a </think> b"), PreconditionError);
}

TEST_CASE("reference output block round trip") {
  const std::string rationale =
      "Based on the customer\xE2\x80\x99s history of purchasing fashion accessories like the classic fuzzy ribbed "
      "knit beanie, the system recommends...(truncated)";
  const std::string title = "Oalka women's joggers high waist yoga pockets sweatpants sport workout pants";
  const std::vector<std::string> candidates{"Ceramic mug", title};
  const auto rec = render_training_record(titled({"Classic fuzzy ribbed knit beanie hat"}), candidates, rationale,
                                          title);
  const auto parsed = infer::parse_tagged_output(rec.assistant_text);
  CHECK(parsed.rationale == rationale);
  CHECK(parsed.item_texts == std::vector<std::string>{title});
  CHECK(rec.flatten() == rec.user_text + "\n#Output\n" + rec.assistant_text);

  const auto j = rec.to_json();
  REQUIRE(j.at("messages").size() == 2);
  CHECK(j["messages"][0]["role"] == "user");
  CHECK(j["messages"][0]["content"] == rec.user_text);
  CHECK(j["messages"][1]["role"] == "assistant");
  CHECK(j["messages"][1]["content"] == rec.assistant_text);

  CHECK_THROWS_AS(render_training_record(titled({"x"}), candidates, rationale, "absent"), PreconditionError);
}

TEST_CASE("item-only training record") {
  const std::vector<std::string> candidates{"a", "b"};
  const auto rec = render_item_only_record(titled({"x"}), candidates, "b");
  CHECK(rec.assistant_text == "<item>b</item>");
  CHECK(rec.user_text.find("<think>") == std::string::npos);
  CHECK_THROWS_AS(render_item_only_record(titled({"x"}), candidates, "c"), PreconditionError);
}

TEST_CASE("property: every candidate appears exactly once in the candidate list") {
  const auto catalog = testing::make_catalog(200);
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> titles;
    std::vector<std::size_t> idx(catalog.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    for (std::size_t i = 0; i < n; ++i) titles.push_back(catalog[idx[i]].title);
    for (const InferenceMode& mode : {InferenceMode{RationaleFirst{}}, InferenceMode{ItemOnly{}},
                                      InferenceMode{RankedList{5}}}) {
      const auto text = render_task_prompt(titled({"h"}), titles, mode).text;
      CHECK(text == render_task_prompt(titled({"h"}), titles, mode).text);
      const auto section = candidate_section(text);
      for (std::size_t i = 0; i < n; ++i) {
        const auto entry = "(" + std::to_string(i + 1) + ")" + titles[i];
        CHECK(count(section, entry + (i + 1 < n ? " (" : "")) == 1);
        std::size_t as_entry = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const auto other = "(" + std::to_string(j + 1) + ")" + titles[i];
          as_entry += count(section, other + (j + 1 < n ? " (" : ""));
        }
        CHECK(as_entry == 1);
      }
      if (std::holds_alternative<ItemOnly>(mode)) CHECK(count(text, "<think>") == 0);
    }
  }
}
