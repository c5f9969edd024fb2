#pragma once

/**
 * Machine-readable estimation reports plus the human-readable ranked
 * summary. Reports are JSON with a fixed key order and shortest round-trip
 * number formatting, and they carry no timestamps, so a rerun with the same
 * inputs writes byte-identical files.
 */

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "selection.hpp"

namespace miprompt {

struct ReportRow {
  int id = 0;
  double mi = 0.0;
  std::optional<double> marginal_entropy;
  std::optional<double> conditional_entropy;
  std::size_t n = 0;
  std::size_t skipped = 0;
  std::optional<double> accuracy;
};

struct Report {
  std::string backend_id;
  int top_k = 100;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::closed;
  std::vector<std::string> labels;  // closed mode only
  std::vector<ReportRow> rows;
};

inline Report make_report(const RunConfig& cfg, const LabelSpace& space,
                          const EstimationResult& result) {
  Report report;
  report.backend_id = cfg.backend_id;
  report.top_k = cfg.top_k;
  report.seed = cfg.seed;
  report.label_mode = space.mode();
  if (space.mode() == LabelMode::closed) report.labels = space.labels();
  for (const auto& estimate : result.templates) {
    const TemplateStats& s = estimate.stats;
    ReportRow row;
    row.id = s.template_id;
    row.mi = s.mi;
    row.marginal_entropy = s.marginal_entropy;
    row.conditional_entropy = s.conditional_entropy;
    row.n = s.n;
    row.skipped = s.skipped;
    row.accuracy = s.accuracy;
    report.rows.push_back(row);
  }
  return report;
}

inline std::vector<TemplateStats> report_stats(const Report& report) {
  std::vector<TemplateStats> stats;
  stats.reserve(report.rows.size());
  for (const auto& row : report.rows) {
    TemplateStats s;
    s.template_id = row.id;
    s.mi = row.mi;
    s.marginal_entropy = row.marginal_entropy.value_or(0.0);
    s.conditional_entropy = row.conditional_entropy.value_or(0.0);
    s.n = row.n;
    s.skipped = row.skipped;
    s.accuracy = row.accuracy;
    stats.push_back(s);
  }
  return stats;
}

inline nlohmann::ordered_json report_to_json(const Report& report) {
  nlohmann::ordered_json doc;
  doc["backend_id"] = report.backend_id;
  doc["top_k"] = report.top_k;
  doc["seed"] = report.seed;
  doc["label_mode"] =
      report.label_mode == LabelMode::closed ? "closed" : "open";
  if (report.label_mode == LabelMode::closed) doc["labels"] = report.labels;
  auto& rows = doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    nlohmann::ordered_json r;
    r["id"] = row.id;
    r["mi"] = row.mi;
    if (row.marginal_entropy) r["marginal_entropy"] = *row.marginal_entropy;
    if (row.conditional_entropy) {
      r["conditional_entropy"] = *row.conditional_entropy;
    }
    r["n"] = row.n;
    r["skipped"] = row.skipped;
    if (row.accuracy) r["accuracy"] = *row.accuracy;
    rows.push_back(std::move(r));
  }
  return doc;
}

inline Report parse_report(const nlohmann::json& doc,
                           const std::string& where) {
  try {
    Report report;
    report.backend_id = doc.at("backend_id").get<std::string>();
    report.top_k = doc.at("top_k").get<int>();
    report.seed = doc.at("seed").get<std::uint64_t>();
    const auto mode = doc.at("label_mode").get<std::string>();
    if (mode == "closed") {
      report.label_mode = LabelMode::closed;
      report.labels = doc.at("labels").get<std::vector<std::string>>();
    } else if (mode == "open") {
      report.label_mode = LabelMode::open;
    } else {
      throw ConfigError(where + ": label_mode must be \"closed\" or \"open\"");
    }
    for (const auto& r : doc.at("rows")) {
      ReportRow row;
      row.id = r.at("id").get<int>();
      row.mi = r.at("mi").get<double>();
      if (r.contains("marginal_entropy")) {
        row.marginal_entropy = r.at("marginal_entropy").get<double>();
      }
      if (r.contains("conditional_entropy")) {
        row.conditional_entropy = r.at("conditional_entropy").get<double>();
      }
      row.n = r.at("n").get<std::size_t>();
      row.skipped = r.at("skipped").get<std::size_t>();
      if (r.contains("accuracy")) {
        row.accuracy = r.at("accuracy").get<double>();
      }
      report.rows.push_back(row);
    }
    if (report.rows.empty()) throw ConfigError(where + ": report has no rows");
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline void write_report(const Report& report,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("report: cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
}

inline Report load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("report: cannot open " + path.string());
  try {
    nlohmann::json doc;
    in >> doc;
    return parse_report(doc, path.string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report " + path.string() + ": " + e.what());
  }
}

// ============================================================================
// Human-readable summary and plot data
// ============================================================================

namespace detail {

/// Shortest representation that round-trips, identical on every platform.
inline std::string format_number(double x) {
  return nlohmann::json(x).dump();
}

inline std::string format_fixed(double x, int places) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(places) << x;
  return out.str();
}

}  // namespace detail

/// Templates ranked by MI (descending, ties toward the smaller id), one line
/// each, with the selected head template called out on the last line.
inline std::string format_ranked_summary(const Report& report) {
  auto ranked = rank_by_mi(report_stats(report));
  std::ostringstream out;
  out << "backend " << report.backend_id << ", top_k " << report.top_k
      << ", seed " << report.seed << "\n";
  out << "rank  id     mi      n  skipped  accuracy\n";
  int rank = 1;
  for (const auto& s : ranked.stats) {
    out << std::left << std::setw(6) << rank++ << std::setw(4) << s.template_id
        << std::right << std::setw(8) << detail::format_fixed(s.mi, 4)
        << std::setw(7) << s.n << std::setw(9) << s.skipped;
    if (s.accuracy) {
      out << std::setw(10) << detail::format_fixed(*s.accuracy, 4);
    } else {
      out << std::setw(10) << "-";
    }
    if (s.failed_playground()) out << "  [failed playground]";
    out << "\n";
  }
  out << "selected: template " << ranked.best().template_id << "\n";
  return out.str();
}

/// (mi, accuracy) pairs in template-id order, for external plotting.
inline std::string scatter_csv(const Report& report) {
  std::string out = "mi,accuracy\n";
  for (const auto& row : report.rows) {
    if (!row.accuracy) {
      throw ConfigError("scatter: template " + std::to_string(row.id) +
                        " has no accuracy");
    }
    out += detail::format_number(row.mi);
    out += ',';
    out += detail::format_number(*row.accuracy);
    out += '\n';
  }
  return out;
}

inline std::string sweep_csv(std::span<const SweepPoint> points) {
  std::string out =
      "train_n,partitions,accuracy_selection_mean,accuracy_selection_stddev,"
      "mi_selection_mean,mi_selection_stddev\n";
  for (const auto& p : points) {
    out += std::to_string(p.train_n);
    out += ',';
    out += std::to_string(p.partitions);
    out += ',';
    out += detail::format_number(p.accuracy_selection_mean);
    out += ',';
    out += detail::format_number(p.accuracy_selection_stddev);
    out += ',';
    out += detail::format_number(p.mi_selection_mean);
    out += ',';
    out += detail::format_number(p.mi_selection_stddev);
    out += '\n';
  }
  return out;
}

}  // namespace miprompt
