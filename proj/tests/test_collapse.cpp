#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "miprompt/collapse.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

using namespace miprompt;

namespace {

const CollapsingMap kBoolMap{{"True", {"yes"}}, {"False", {"no"}}};
const auto kBoolSpace = testutil::space_of({"True", "False"});

}  // namespace

TEST_CASE("normalize_token lowercases and strips surrounding whitespace") {
  REQUIRE(normalize_token(" Yes") == "yes");
  REQUIRE(normalize_token("YES") == "yes");
  REQUIRE(normalize_token("no") == "no");
  REQUIRE(normalize_token("\t Maybe So \n") == "maybe so");
  REQUIRE(normalize_token("   ") == "");
  REQUIRE(normalize_token("") == "");
}

TEST_CASE("normalize_token handles unicode whitespace and latin-1 case") {
  REQUIRE(normalize_token(" yes ") == "yes");        // nbsp
  REQUIRE(normalize_token(" true ") == "true");      // em space
  REQUIRE(normalize_token("　ja　") == "ja");          // ideographic
  REQUIRE(normalize_token(" x ") == "x");            // line seps
  REQUIRE(normalize_token("État") == "état");        // E-acute
  // Interior whitespace is preserved.
  REQUIRE(normalize_token(" a b ") == "a b");
}

TEST_CASE("matches_answer uses non-empty prefix semantics") {
  REQUIRE(matches_answer("ye", "yes"));
  REQUIRE(matches_answer("Yes", "yes"));
  REQUIRE_FALSE(matches_answer("no", "yes"));
  REQUIRE_FALSE(matches_answer("", "yes"));
  REQUIRE_FALSE(matches_answer("  ", "yes"));
  REQUIRE_FALSE(matches_answer("yess", "yes"));  // longer than the answer
  REQUIRE(matches_answer(" YES ", "yes"));
}

TEST_CASE("closed collapse sums matched mass and renormalizes") {
  const auto topk =
      testutil::topk({{"Yes", 0.6}, {" no", 0.3}, {"I", 0.1}});
  const auto dist = collapse(topk, kBoolMap, kBoolSpace);
  REQUIRE(dist.size() == 2);
  REQUIRE(dist.prob(0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
  REQUIRE(dist.prob(1) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("collapse with nothing matched raises zero mass") {
  const auto topk = testutil::topk({{"I", 1.0}});
  REQUIRE_THROWS_AS(collapse(topk, kBoolMap, kBoolSpace), ZeroMassError);
}

TEST_CASE("open collapse merges normalized duplicates") {
  const auto topk =
      testutil::topk({{"Bob", 0.5}, {" bob", 0.25}, {"cat", 0.25}});
  const auto open = make_space(LabelSpace::open());
  const auto dist = collapse(topk, std::nullopt, open);
  REQUIRE(dist.size() == 2);
  REQUIRE(dist.space().label(0) == "bob");
  REQUIRE(dist.space().label(1) == "cat");
  REQUIRE(dist.prob(0) == Catch::Approx(0.75).margin(1e-12));
  REQUIRE(dist.prob(1) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("open collapse drops tokens that normalize to nothing") {
  const auto topk = testutil::topk({{"  ", 0.5}, {"dog", 0.25}});
  const auto open = make_space(LabelSpace::open());
  const auto dist = collapse(topk, std::nullopt, open);
  REQUIRE(dist.size() == 1);
  REQUIRE(dist.prob(0) == 1.0);

  const auto blank = testutil::topk({{" ", 0.5}, {"\t", 0.25}});
  REQUIRE_THROWS_AS(collapse(blank, std::nullopt, open), ZeroMassError);
}

TEST_CASE("a token prefixing two labels is a hard error") {
  // "ye" prefixes both "yes" (True) and "yellow" (False).
  const CollapsingMap map{{"True", {"yes"}}, {"False", {"yellow"}}};
  const auto topk = testutil::topk({{"ye", 0.5}, {"no", 0.2}});
  REQUIRE_THROWS_AS(collapse(topk, map, kBoolSpace), AmbiguousTokenError);
}

TEST_CASE("a token matching several variants of one label counts once") {
  const CollapsingMap map{{"True", {"yes", "yeah"}}, {"False", {"no"}}};
  const auto topk = testutil::topk({{"y", 0.5}, {"no", 0.5}});
  const auto dist = collapse(topk, map, kBoolSpace);
  REQUIRE(dist.prob(0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(dist.prob(1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("collapse is invariant to case and surrounding whitespace") {
  std::mt19937_64 rng(42);
  const CollapsingMap map{{"True", {"yes", "certainly"}},
                          {"False", {"no", "never"}}};
  const std::vector<std::string> base = {" yes", "No", " cert", "nev",
                                         "the", "I"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenEntry> plain;
    std::vector<TokenEntry> noisy;
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double logprob = -0.5 - static_cast<double>(i) * 0.3;
      plain.push_back({base[i], logprob});

      std::string perturbed;
      for (char c : base[i]) {
        if (std::isalpha(static_cast<unsigned char>(c)) && rng() % 2 == 0) {
          perturbed.push_back(static_cast<char>(
              std::isupper(static_cast<unsigned char>(c)) ? std::tolower(c)
                                                          : std::toupper(c)));
        } else {
          perturbed.push_back(c);
        }
      }
      // Random plain-space prefix plus an index-sized nbsp suffix; the
      // suffix keeps perturbed tokens pairwise distinct.
      perturbed.insert(0, rng() % 4, ' ');
      for (std::size_t k = 0; k < i; ++k) perturbed += " ";
      noisy.push_back({std::move(perturbed), logprob});
    }
    const TokenTopK plain_topk(plain, "h");
    const TokenTopK noisy_topk(noisy, "h");
    REQUIRE(collapse(plain_topk, map, kBoolSpace) ==
            collapse(noisy_topk, map, kBoolSpace));
  }
}

TEST_CASE("collapse is invariant to scaling all masses by a constant") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const double c = 0.05 + 0.95 * static_cast<double>(rng() % 1000) / 1000.0;
    std::vector<TokenEntry> plain;
    std::vector<TokenEntry> scaled;
    const std::vector<std::pair<std::string, double>> tokens = {
        {"yes", 0.4}, {"no", 0.3}, {"the", 0.2}};
    for (const auto& [token, p] : tokens) {
      plain.push_back({token, std::log(p)});
      scaled.push_back({token, std::log(p * c)});
    }
    const auto a = collapse(TokenTopK(plain, "h"), kBoolMap, kBoolSpace);
    const auto b = collapse(TokenTopK(scaled, "h"), kBoolMap, kBoolSpace);
    REQUIRE(a.prob(0) == Catch::Approx(b.prob(0)).margin(1e-12));
    REQUIRE(a.prob(1) == Catch::Approx(b.prob(1)).margin(1e-12));
  }
}

TEST_CASE("closed output width is the label count, open width the distinct tokens") {
  const auto topk = testutil::topk({{"yes", 0.5}, {"Yes", 0.25}, {"dog", 0.2}});
  const auto closed = collapse(topk, kBoolMap, kBoolSpace);
  REQUIRE(closed.size() == kBoolSpace->size());

  const auto open = collapse(topk, std::nullopt, make_space(LabelSpace::open()));
  REQUIRE(open.size() == 2);  // "yes" merges with "Yes"
}

TEST_CASE("collapsed_mass reports pre-normalization matched weight") {
  const auto topk =
      testutil::topk({{"Yes", 0.6}, {" no", 0.3}, {"I", 0.1}});
  REQUIRE(collapsed_mass(topk, kBoolMap, kBoolSpace) ==
          Catch::Approx(0.9).margin(1e-12));
  const auto nothing = testutil::topk({{"I", 0.4}});
  REQUIRE(collapsed_mass(nothing, kBoolMap, kBoolSpace) == 0.0);
}

TEST_CASE("setup validation passes clean maps and flags shared prefixes") {
  TemplateSpec boolq;
  boolq.id = 1;
  boolq.scaffold = "{q}";
  boolq.collapsing_map = kBoolMap;

  TemplateSpec digits;
  digits.id = 2;
  digits.scaffold = "{q}";
  digits.collapsing_map = CollapsingMap{{"True", {"1"}}, {"False", {"2"}}};

  std::vector<TemplateSpec> good = {boolq, digits};
  const auto pass = validate_collapsing_setup(good, *kBoolSpace);
  REQUIRE(pass.all_pass());
  REQUIRE(pass.templates.size() == 2);

  TemplateSpec animals;
  animals.id = 3;
  animals.scaffold = "{q}";
  animals.collapsing_map =
      CollapsingMap{{"True", {"the dog"}}, {"False", {"the cat"}}};
  std::vector<TemplateSpec> bad = {animals};
  const auto fail = validate_collapsing_setup(bad, *kBoolSpace);
  REQUIRE_FALSE(fail.all_pass());
  REQUIRE(fail.templates.front().conflicts.size() == 1);
  REQUIRE(fail.templates.front().conflicts.front().shared_prefix == "the ");
}

TEST_CASE("setup validation flags identical variants across labels") {
  TemplateSpec tpl;
  tpl.id = 1;
  tpl.scaffold = "{q}";
  tpl.collapsing_map = CollapsingMap{{"True", {"yes"}}, {"False", {"yes sir"}}};
  std::vector<TemplateSpec> templates = {tpl};
  const auto report = validate_collapsing_setup(templates, *kBoolSpace);
  REQUIRE_FALSE(report.all_pass());
}

TEST_CASE("normalize_answers rejects variants that vanish") {
  const CollapsingMap map{{"True", {"  "}}, {"False", {"no"}}};
  REQUIRE_THROWS_AS(normalize_answers(map, *kBoolSpace), ConfigError);
}

TEST_CASE("open distributions align over the union of observed tokens") {
  const auto open = make_space(LabelSpace::open());
  const auto a =
      collapse(testutil::topk({{"cat", 0.5}, {"dog", 0.5}}), std::nullopt, open);
  const auto b =
      collapse(testutil::topk({{"dog", 0.6}, {"emu", 0.4}}), std::nullopt, open);
  const std::vector<LabelDistribution> raw = {a, b};
  const auto aligned = align_open_distributions(raw);
  REQUIRE(aligned.size() == 2);
  REQUIRE(aligned[0].space().labels() ==
          std::vector<std::string>{"cat", "dog", "emu"});
  REQUIRE(same_space(aligned[0].space_ptr(), aligned[1].space_ptr()));
  REQUIRE(aligned[0].prob(0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(aligned[0].prob(2) == 0.0);
  REQUIRE(aligned[1].prob(0) == 0.0);
  REQUIRE(aligned[1].prob(1) == Catch::Approx(0.6).margin(1e-12));
}
