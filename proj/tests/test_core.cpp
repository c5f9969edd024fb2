#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "miprompt/core.hpp"
#include "miprompt/sha256.hpp"

#include <cmath>
#include <random>
#include <unordered_set>

using namespace miprompt;

TEST_CASE("closed label space keeps order and rejects bad labels") {
  const auto space = LabelSpace::closed({"True", "False"});
  REQUIRE(space.mode() == LabelMode::closed);
  REQUIRE(space.size() == 2);
  REQUIRE(space.label(0) == "True");
  REQUIRE(space.index_of("False") == 1);
  REQUIRE_FALSE(space.index_of("Maybe").has_value());

  REQUIRE_THROWS_AS(LabelSpace::closed({"1", "2", "1"}), DuplicateLabelsError);
  REQUIRE_THROWS_AS(LabelSpace::closed({"a", ""}), DuplicateLabelsError);
  REQUIRE_THROWS_AS(LabelSpace::closed({}), DuplicateLabelsError);
}

TEST_CASE("open label space starts empty") {
  const auto space = LabelSpace::open();
  REQUIRE(space.mode() == LabelMode::open);
  REQUIRE(space.size() == 0);

  const auto observed = LabelSpace::observed({"bob", "cat"});
  REQUIRE(observed.mode() == LabelMode::open);
  REQUIRE(observed.size() == 2);
}

TEST_CASE("label distribution validates probabilities") {
  const auto space = testutil::binary_space();
  REQUIRE_NOTHROW(LabelDistribution(space, {0.5, 0.5}));
  REQUIRE_NOTHROW(LabelDistribution(space, {1.0, 0.0}));

  // Off-by-more-than-tolerance sums and negative entries are rejected.
  REQUIRE_THROWS_AS(LabelDistribution(space, {0.6, 0.6}), ConfigError);
  REQUIRE_THROWS_AS(LabelDistribution(space, {-0.1, 1.1}), ConfigError);
  REQUIRE_THROWS_AS(LabelDistribution(space, {1.0}), ConfigError);

  // Within tolerance passes.
  REQUIRE_NOTHROW(LabelDistribution(space, {0.5 + 4e-10, 0.5 + 4e-10}));
}

TEST_CASE("normalized constructor rescales and rejects zero mass") {
  const auto space = testutil::binary_space();
  const auto d = LabelDistribution::normalized(space, {0.6, 0.3});
  REQUIRE(d.prob(0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(d.prob(1) == Catch::Approx(1.0 / 3.0).margin(1e-15));
  REQUIRE_THROWS_AS(LabelDistribution::normalized(space, {0.0, 0.0}),
                    ZeroMassError);
}

TEST_CASE("argmax breaks ties toward the first label") {
  const auto space = testutil::space_of({"a", "b", "c"});
  REQUIRE(LabelDistribution(space, {0.2, 0.4, 0.4}).argmax_label() == "b");
  const LabelDistribution tied(space, {0.4, 0.4, 0.2});
  REQUIRE(tied.argmax() == 0);
  REQUIRE(tied.argmax_label() == "a");
}

TEST_CASE("token top-k validates entries") {
  REQUIRE_NOTHROW(testutil::topk({{"yes", 0.9}, {"no", 0.1}}));

  // duplicate token
  REQUIRE_THROWS_AS(TokenTopK({{"a", -1.0}, {"a", -2.0}}, "h"),
                    MalformedResponseError);
  // positive logprob means exp > 1
  REQUIRE_THROWS_AS(TokenTopK({{"a", 0.5}}, "h"), MalformedResponseError);
  // non-finite logprob
  REQUIRE_THROWS_AS(TokenTopK({{"a", -std::numeric_limits<double>::infinity()}},
                              "h"),
                    MalformedResponseError);
  // logprob of exactly 0 (probability 1) is legal
  REQUIRE_NOTHROW(TokenTopK({{"a", 0.0}}, "h"));
}

TEST_CASE("extract_placeholders finds names in order") {
  const auto names = extract_placeholders("Passage: {passage}\nQ: {q}\nA:");
  REQUIRE(names == std::vector<std::string>{"passage", "q"});
  REQUIRE(extract_placeholders("no slots here").empty());
  // Braces that do not form a placeholder are literal text.
  REQUIRE(extract_placeholders("json {} and {1bad} stay").empty());
  REQUIRE(extract_placeholders("{x}{x}") ==
          std::vector<std::string>{"x", "x"});
}

TEST_CASE("run config validation accepts the minimal legal config") {
  const auto space = testutil::binary_space();
  RunConfig cfg;
  TemplateSpec tpl;
  tpl.id = 1;
  tpl.scaffold = "Q: {q}\nA:";
  tpl.collapsing_map = CollapsingMap{{"yes", {"yes"}}, {"no", {"no"}}};
  cfg.templates = {tpl};
  cfg.n = 1;
  cfg.ensemble_p = 1;
  REQUIRE_NOTHROW(validate_run_config(cfg, *space));
}

TEST_CASE("run config validation rejects contract violations") {
  const auto space = testutil::binary_space();
  TemplateSpec tpl;
  tpl.id = 1;
  tpl.scaffold = "Q: {q}\nA:";
  tpl.collapsing_map = CollapsingMap{{"yes", {"yes"}}, {"no", {"no"}}};

  SECTION("empty template list") {
    RunConfig cfg;
    REQUIRE_THROWS_AS(validate_run_config(cfg, *space), EmptyTemplatesError);
  }
  SECTION("ensemble_p exceeding K") {
    RunConfig cfg;
    for (int i = 1; i <= 5; ++i) {
      TemplateSpec t = tpl;
      t.id = i;
      cfg.templates.push_back(t);
    }
    cfg.ensemble_p = 6;
    REQUIRE_THROWS_AS(validate_run_config(cfg, *space),
                      EnsembleTooLargeError);
  }
  SECTION("duplicate ids") {
    RunConfig cfg;
    cfg.templates = {tpl, tpl};
    REQUIRE_THROWS_AS(validate_run_config(cfg, *space), ConfigError);
  }
  SECTION("placeholder repeated in one scaffold") {
    RunConfig cfg;
    TemplateSpec t = tpl;
    t.scaffold = "{q} and {q}";
    cfg.templates = {t};
    REQUIRE_THROWS_AS(validate_run_config(cfg, *space), ConfigError);
  }
  SECTION("closed mode requires full label coverage") {
    RunConfig cfg;
    TemplateSpec t = tpl;
    t.collapsing_map = CollapsingMap{{"yes", {"yes"}}};
    cfg.templates = {t};
    REQUIRE_THROWS_AS(validate_run_config(cfg, *space), ConfigError);
  }
  SECTION("open mode forbids a map") {
    RunConfig cfg;
    cfg.templates = {tpl};
    const auto open = make_space(LabelSpace::open());
    REQUIRE_THROWS_AS(validate_run_config(cfg, *open), ConfigError);
  }
}

TEST_CASE("failed playground flag trips past half skipped") {
  TemplateStats stats;
  stats.n = 6;
  stats.skipped = 2;  // 2 of 8 attempted
  REQUIRE_FALSE(stats.failed_playground());
  stats.n = 3;
  stats.skipped = 5;  // 5 of 8 attempted
  REQUIRE(stats.failed_playground());
  stats.n = 4;
  stats.skipped = 4;  // exactly half does not trip
  REQUIRE_FALSE(stats.failed_playground());
}

TEST_CASE("sha256 matches published vectors") {
  REQUIRE(detail::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  REQUIRE(detail::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  REQUIRE(detail::sha256_hex(
              "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("prompt digests stay distinct over a million prompts") {
  std::unordered_set<std::string> seen;
  seen.reserve(2000000);
  std::string prompt;
  for (int i = 0; i < 1000000; ++i) {
    prompt = "prompt #" + std::to_string(i);
    seen.insert(detail::sha256_hex(prompt));
  }
  REQUIRE(seen.size() == 1000000);
}
