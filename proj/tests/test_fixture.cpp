#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "miprompt/fixture.hpp"
#include "miprompt/report.hpp"
#include "miprompt/sha256.hpp"

#include <map>

using namespace miprompt;

TEST_CASE("the benchmark table digest pins every transcribed value") {
  REQUIRE(detail::sha256_hex(canonical_fixture_dump()) ==
          "c25b7ecd77a109ed5086a4da01a38a94a8cc7298f2160320753ed1898479803f");
}

TEST_CASE("the benchmark table covers eight datasets of twenty prompts") {
  const auto& datasets = fixture_datasets();
  const std::vector<std::string> expected_names = {
      "SQuAD", "LAMBADA", "ROCStories", "CoQA",
      "IMDB",  "BoolQ",   "COPA",       "WiC"};
  REQUIRE(datasets.size() == expected_names.size());
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    CAPTURE(d);
    REQUIRE(datasets[d].name == expected_names[d]);
    REQUIRE(datasets[d].rows.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
      REQUIRE(datasets[d].rows[i].id == static_cast<int>(i) + 1);
      REQUIRE(datasets[d].rows[i].mi >= 0.0);
      REQUIRE(datasets[d].rows[i].accuracy >= 0.0);
      REQUIRE(datasets[d].rows[i].accuracy <= 1.0);
    }
  }
}

TEST_CASE("spot rows match the published numbers") {
  const std::map<std::string, std::map<int, std::pair<double, double>>> spot =
      {{"SQuAD", {{1, {4.950, 0.820}}, {6, {5.224, 0.754}}}},
       {"LAMBADA", {{3, {5.062, 0.770}}}},
       {"ROCStories", {{2, {4.427, 0.524}}}},
       {"CoQA", {{1, {0.600, 0.590}}}},
       {"IMDB", {{2, {0.306, 0.920}}}},
       {"BoolQ", {{2, {0.090, 0.752}}}},
       {"COPA", {{1, {0.044, 0.782}}}},
       {"WiC", {{1, {0.036, 0.520}}, {20, {0.004, 0.440}}}}};
  for (const auto& [name, rows] : spot) {
    const auto& dataset = fixture_dataset(name);
    for (const auto& [id, values] : rows) {
      CAPTURE(name, id);
      REQUIRE(dataset.rows[id - 1].mi == values.first);
      REQUIRE(dataset.rows[id - 1].accuracy == values.second);
    }
  }
  REQUIRE_THROWS_AS(fixture_dataset("TriviaQA"), ConfigError);
}

TEST_CASE("the full replay reproduces the published selection quality") {
  const auto summary = replay_fixture();
  REQUIRE(summary.rows.size() == 8);
  REQUIRE(summary.mean_normalized ==
          Catch::Approx(0.8965900320710442).margin(1e-12));
  REQUIRE(summary.oracle_hits == 3);

  const std::vector<int> selected = {6, 3, 2, 1, 2, 2, 1, 1};
  const std::vector<double> normalized = {
      0.619815668202765, 0.9537215580408792, 0.9532866199532866, 1.0,
      0.8609501738122833, 0.7849462365591394, 1.0,               1.0};
  const std::vector<bool> oracle = {false, false, false, true,
                                    false, false, true,  true};
  for (std::size_t i = 0; i < 8; ++i) {
    CAPTURE(summary.rows[i].dataset);
    const auto& row = summary.rows[i];
    REQUIRE(row.selected_id == selected[i]);
    REQUIRE(row.normalized == Catch::Approx(normalized[i]).margin(1e-10));
    REQUIRE(row.oracle == oracle[i]);
    REQUIRE(row.best_id == 1);  // prompt 1 happens to lead every dataset

    // The MI choice always beats the template pool's mean and median.
    REQUIRE(row.selected_accuracy > row.mean);
    REQUIRE(row.selected_accuracy > row.median);
    REQUIRE(row.worst <= row.median);
    REQUIRE(row.median <= row.best);
    REQUIRE(row.normalized <= 1.0);
  }
}

TEST_CASE("single-dataset replay matches its slice of the full run") {
  const auto& squad = fixture_dataset("SQuAD");
  const auto summary =
      replay_fixture(std::span<const FixtureDataset>(&squad, 1));
  REQUIRE(summary.rows.size() == 1);
  REQUIRE(summary.oracle_hits == 0);
  REQUIRE(summary.mean_normalized ==
          Catch::Approx(0.619815668202765).margin(1e-12));
  REQUIRE(summary.rows[0].selected_id == 6);
  REQUIRE(summary.rows[0].selected_accuracy == 0.754);
  REQUIRE(summary.rows[0].best == 0.820);
  REQUIRE(summary.rows[0].worst == 0.302);
}

TEST_CASE("degenerate replay inputs are rejected") {
  FixtureDataset flat;
  flat.name = "flat";
  for (int i = 1; i <= 3; ++i) {
    flat.rows.push_back({i, 0.1 * i, 0.5});
  }
  REQUIRE_THROWS_AS(replay_fixture(std::span<const FixtureDataset>(&flat, 1)),
                    DegenerateSpreadError);
  REQUIRE_THROWS_AS(replay_fixture(std::span<const FixtureDataset>()),
                    ConfigError);
}

TEST_CASE("fixture reports flow through the standard report door") {
  const auto report = fixture_report(fixture_dataset("SQuAD"));
  REQUIRE(report.backend_id == "gpt3-175b");
  REQUIRE(report.top_k == 100);
  REQUIRE(report.label_mode == LabelMode::open);
  REQUIRE(report.labels.empty());
  REQUIRE(report.rows.size() == 20);
  for (const auto& row : report.rows) {
    REQUIRE(row.n == 500);
    REQUIRE(row.skipped == 0);
    REQUIRE_FALSE(row.marginal_entropy.has_value());
    REQUIRE(row.accuracy.has_value());
  }

  REQUIRE(select_by_mi(report_stats(report)) == 6);
  const auto ranked = rank_by_mi(report_stats(report));
  REQUIRE(ranked.top_p(1) == std::vector<int>{6});

  // Round-trips like any computed report.
  const auto doc = report_to_json(report);
  REQUIRE(parse_report(doc, "fixture").rows.size() == 20);
}

TEST_CASE("the imdb mi ranking selects the published ensemble") {
  const auto report = fixture_report(fixture_dataset("IMDB"));
  const auto ranked = rank_by_mi(report_stats(report));
  REQUIRE(ranked.top_p(5) == std::vector<int>{2, 8, 4, 5, 15});
}

TEST_CASE("the replay summary is printable") {
  const auto text = format_replay_summary(replay_fixture());
  REQUIRE(text.find("SQuAD") != std::string::npos);
  REQUIRE(text.find("WiC") != std::string::npos);
  REQUIRE(text.find("mean normalized score: 0.8966") != std::string::npos);
  REQUIRE(text.find("best-template hits: 3 of 8") != std::string::npos);
}
