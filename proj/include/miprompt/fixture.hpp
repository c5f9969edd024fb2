#pragma once

/**
 * Bundled benchmark fixture: per-template MI and accuracy for eight datasets
 * times twenty templates, measured once on a 175B-parameter model over
 * 500-instance subsets. Replaying it checks the selection pipeline against
 * published numbers without any network access. The transcription is pinned
 * by a checksum over canonical_fixture_dump().
 */

#include <algorithm>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "report.hpp"

namespace miprompt {

struct FixtureRow {
  int id = 0;
  double mi = 0.0;
  double accuracy = 0.0;
};

struct FixtureDataset {
  std::string name;
  std::vector<FixtureRow> rows;  // ids 1..20, in id order
};

inline const std::vector<FixtureDataset>& fixture_datasets() {
  static const std::vector<FixtureDataset> datasets = {
      {"SQuAD",
       {{1, 4.950, 0.820}, {2, 4.965, 0.800}, {3, 4.965, 0.800}, {4, 4.901, 0.790},
        {5, 4.711, 0.758}, {6, 5.224, 0.754}, {7, 5.126, 0.750}, {8, 4.745, 0.700},
        {9, 3.998, 0.692}, {10, 4.037, 0.686}, {11, 4.231, 0.684}, {12, 3.568, 0.620},
        {13, 3.261, 0.614}, {14, 3.760, 0.608}, {15, 3.006, 0.606}, {16, 3.843, 0.592},
        {17, 3.508, 0.544}, {18, 3.227, 0.406}, {19, 2.497, 0.402}, {20, 2.312, 0.302}}},
      {"LAMBADA",
       {{1, 4.984, 0.782}, {2, 4.793, 0.770}, {3, 5.062, 0.770}, {4, 5.058, 0.736},
        {5, 4.194, 0.608}, {6, 4.623, 0.608}, {7, 4.328, 0.596}, {8, 3.338, 0.586},
        {9, 2.230, 0.498}, {10, 2.632, 0.474}, {11, 4.549, 0.470}, {12, 2.637, 0.454},
        {13, 2.476, 0.434}, {14, 3.043, 0.432}, {15, 2.450, 0.428}, {16, 2.820, 0.398},
        {17, 1.931, 0.376}, {18, 2.530, 0.374}, {19, 2.372, 0.364}, {20, 2.860, 0.296}}},
      {"ROCStories",
       {{1, 3.859, 0.538}, {2, 4.427, 0.524}, {3, 3.728, 0.420}, {4, 3.670, 0.356},
        {5, 3.904, 0.310}, {6, 4.167, 0.298}, {7, 4.066, 0.290}, {8, 3.707, 0.258},
        {9, 3.644, 0.256}, {10, 1.979, 0.222}, {11, 3.199, 0.220}, {12, 2.013, 0.214},
        {13, 3.116, 0.182}, {14, 1.843, 0.158}, {15, 2.681, 0.140}, {16, 2.150, 0.120},
        {17, 2.634, 0.088}, {18, 2.637, 0.086}, {19, 3.648, 0.050}, {20, 1.891, 0.036}}},
      {"CoQA",
       {{1, 0.600, 0.590}, {2, 0.233, 0.546}, {3, 0.474, 0.470}, {4, 0.083, 0.466},
        {5, 0.504, 0.462}, {6, 0.431, 0.448}, {7, 0.417, 0.428}, {8, 0.364, 0.408},
        {9, 0.410, 0.408}, {10, 0.363, 0.396}, {11, 0.059, 0.380}, {12, 0.233, 0.360},
        {13, 0.255, 0.360}, {14, 0.222, 0.354}, {15, 0.246, 0.342}, {16, 0.376, 0.336},
        {17, 0.265, 0.276}, {18, 0.197, 0.248}, {19, 0.013, 0.234}, {20, 0.241, 0.228}}},
      {"IMDB",
       {{1, 0.175, 0.944}, {2, 0.306, 0.920}, {3, 0.154, 0.904}, {4, 0.260, 0.898},
        {5, 0.237, 0.888}, {6, 0.151, 0.886}, {7, 0.086, 0.886}, {8, 0.274, 0.858},
        {9, 0.026, 0.852}, {10, 0.119, 0.842}, {11, 0.162, 0.824}, {12, 0.101, 0.822},
        {13, 0.084, 0.810}, {14, 0.201, 0.798}, {15, 0.234, 0.786}, {16, 0.042, 0.628},
        {17, 0.021, 0.486}, {18, 0.016, 0.484}, {19, 0.019, 0.462}, {20, 0.017, 0.450}}},
      {"BoolQ",
       {{1, 0.077, 0.778}, {2, 0.090, 0.752}, {3, 0.055, 0.750}, {4, 0.076, 0.740},
        {5, 0.037, 0.740}, {6, 0.068, 0.702}, {7, 0.039, 0.698}, {8, 0.034, 0.698},
        {9, 0.055, 0.688}, {10, 0.052, 0.682}, {11, 0.026, 0.682}, {12, 0.016, 0.680},
        {13, 0.074, 0.674}, {14, 0.050, 0.668}, {15, 0.058, 0.646}, {16, 0.027, 0.634},
        {17, 0.013, 0.522}, {18, 0.020, 0.518}, {19, 0.013, 0.452}, {20, 0.022, 0.438}}},
      {"COPA",
       {{1, 0.044, 0.782}, {2, 0.034, 0.762}, {3, 0.003, 0.628}, {4, 0.002, 0.612},
        {5, 0.003, 0.550}, {6, 0.010, 0.540}, {7, 0.002, 0.532}, {8, 0.006, 0.530},
        {9, 0.018, 0.524}, {10, 0.008, 0.520}, {11, 0.003, 0.516}, {12, 0.008, 0.510},
        {13, 0.003, 0.506}, {14, 0.003, 0.504}, {15, 0.036, 0.502}, {16, 0.009, 0.502},
        {17, 0.006, 0.500}, {18, 0.003, 0.500}, {19, 0.019, 0.500}, {20, 0.001, 0.496}}},
      {"WiC",
       {{1, 0.036, 0.520}, {2, 0.006, 0.512}, {3, 0.025, 0.506}, {4, 0.007, 0.504},
        {5, 0.006, 0.504}, {6, 0.007, 0.496}, {7, 0.004, 0.496}, {8, 0.006, 0.494},
        {9, 0.007, 0.494}, {10, 0.004, 0.494}, {11, 0.009, 0.494}, {12, 0.008, 0.492},
        {13, 0.017, 0.492}, {14, 0.017, 0.488}, {15, 0.008, 0.488}, {16, 0.031, 0.486},
        {17, 0.007, 0.466}, {18, 0.010, 0.460}, {19, 0.007, 0.460}, {20, 0.004, 0.440}}},
  };
  return datasets;
}

inline const FixtureDataset& fixture_dataset(const std::string& name) {
  for (const auto& dataset : fixture_datasets()) {
    if (dataset.name == name) return dataset;
  }
  throw ConfigError("fixture: unknown dataset \"" + name + "\"");
}

/// Stable text form of the whole table; its digest pins the transcription.
inline std::string canonical_fixture_dump() {
  std::string out;
  char line[64];
  for (const auto& dataset : fixture_datasets()) {
    out += dataset.name;
    out += '\n';
    for (const auto& row : dataset.rows) {
      std::snprintf(line, sizeof(line), "%d %.3f %.3f\n", row.id, row.mi,
                    row.accuracy);
      out += line;
    }
  }
  return out;
}

/// The fixture as an estimation report, so select/correlate/transfer consume
/// it through the same door as freshly computed results. Entropy components
/// were not published and are omitted.
inline Report fixture_report(const FixtureDataset& dataset) {
  Report report;
  report.backend_id = "gpt3-175b";
  report.top_k = 100;
  report.seed = 0;
  report.label_mode = LabelMode::open;
  for (const auto& row : dataset.rows) {
    ReportRow r;
    r.id = row.id;
    r.mi = row.mi;
    r.n = 500;
    r.skipped = 0;
    r.accuracy = row.accuracy;
    report.rows.push_back(r);
  }
  return report;
}

// ============================================================================
// Replay
// ============================================================================

struct ReplayRow {
  std::string dataset;
  int selected_id = 0;         // argmax MI, ties toward the smaller id
  double selected_accuracy = 0.0;
  int best_id = 0;             // argmax accuracy, ties toward the smaller id
  double worst = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double best = 0.0;
  double normalized = 0.0;     // (selected - mean) / (best - mean)
  bool oracle = false;         // MI choice and accuracy choice coincide
};

struct ReplaySummary {
  std::vector<ReplayRow> rows;
  double mean_normalized = 0.0;
  int oracle_hits = 0;
};

inline ReplaySummary replay_fixture(std::span<const FixtureDataset> datasets) {
  if (datasets.empty()) throw ConfigError("replay: no datasets");
  ReplaySummary summary;
  double normalized_sum = 0.0;
  for (const auto& dataset : datasets) {
    if (dataset.rows.empty()) {
      throw ConfigError("replay: dataset " + dataset.name + " has no rows");
    }
    ReplayRow out;
    out.dataset = dataset.name;

    const FixtureRow* by_mi = nullptr;
    const FixtureRow* by_acc = nullptr;
    std::vector<double> accs;
    accs.reserve(dataset.rows.size());
    for (const auto& row : dataset.rows) {
      if (by_mi == nullptr || row.mi > by_mi->mi ||
          (row.mi == by_mi->mi && row.id < by_mi->id)) {
        by_mi = &row;
      }
      if (by_acc == nullptr || row.accuracy > by_acc->accuracy ||
          (row.accuracy == by_acc->accuracy && row.id < by_acc->id)) {
        by_acc = &row;
      }
      accs.push_back(row.accuracy);
    }

    std::sort(accs.begin(), accs.end());
    const std::size_t n = accs.size();
    out.worst = accs.front();
    out.best = accs.back();
    double sum = 0.0;
    for (double a : accs) sum += a;
    out.mean = sum / static_cast<double>(n);
    out.median = n % 2 == 1 ? accs[n / 2]
                            : (accs[n / 2 - 1] + accs[n / 2]) / 2.0;

    out.selected_id = by_mi->id;
    out.selected_accuracy = by_mi->accuracy;
    out.best_id = by_acc->id;
    if (out.best <= out.mean) throw DegenerateSpreadError();
    out.normalized = (out.selected_accuracy - out.mean) / (out.best - out.mean);
    out.oracle = out.selected_id == out.best_id;

    normalized_sum += out.normalized;
    if (out.oracle) ++summary.oracle_hits;
    summary.rows.push_back(std::move(out));
  }
  summary.mean_normalized =
      normalized_sum / static_cast<double>(summary.rows.size());
  return summary;
}

inline ReplaySummary replay_fixture() {
  const auto& all = fixture_datasets();
  return replay_fixture(std::span<const FixtureDataset>(all));
}

inline std::string format_replay_summary(const ReplaySummary& summary) {
  std::string out =
      "dataset      selected  acc(sel)  worst   mean    median  best    "
      "normalized  oracle\n";
  char line[160];
  for (const auto& row : summary.rows) {
    std::snprintf(line, sizeof(line),
                  "%-12s %8d  %8.3f  %.3f   %.4f  %.4f  %.3f   %10.4f  %s\n",
                  row.dataset.c_str(), row.selected_id, row.selected_accuracy,
                  row.worst, row.mean, row.median, row.best, row.normalized,
                  row.oracle ? "yes" : "no");
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "mean normalized score: %.4f\nbest-template hits: %d of %zu\n",
                summary.mean_normalized, summary.oracle_hits,
                summary.rows.size());
  out += line;
  return out;
}

}  // namespace miprompt
