// miprompt: estimate template quality by mutual information, select and
// ensemble templates, correlate with accuracy, normalize transfer scores,
// sweep the labeled baseline, and replay the bundled benchmark fixture.
//
// Exit codes: 0 success, 2 input or config error, 3 backend failure.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "miprompt/miprompt.hpp"
#include "miprompt/remote.hpp"

namespace {

using namespace miprompt;

struct BackendFlags {
  std::string backend_id;
  std::string mock_table;
  std::string endpoint;
  std::string cache;
  std::string auth_env;
  int top_k = 100;
  int max_parallel = 1;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& flags) {
  cmd->add_option("--backend", flags.backend_id,
                  "Backend id recorded in reports and cache entries");
  cmd->add_option("--mock-table", flags.mock_table,
                  "JSON fixture table; selects the mock backend");
  cmd->add_option("--endpoint", flags.endpoint,
                  "Completion API URL; selects the remote backend");
  cmd->add_option("--cache", flags.cache,
                  "Response cache file (remote backend only)");
  cmd->add_option("--auth-env", flags.auth_env,
                  "Environment variable holding the API bearer token");
  cmd->add_option("--top-k", flags.top_k, "Requested logprob depth")
      ->capture_default_str();
  cmd->add_option("--parallel", flags.max_parallel,
                  "Concurrent backend requests")
      ->capture_default_str();
}

std::unique_ptr<Backend> make_backend(const BackendFlags& flags) {
  if (!flags.mock_table.empty() && !flags.endpoint.empty()) {
    throw ConfigError("give either --mock-table or --endpoint, not both");
  }
  if (!flags.mock_table.empty()) {
    BackendDescriptor desc;
    desc.id = flags.backend_id.empty() ? "mock" : flags.backend_id;
    desc.kind = BackendKind::mock;
    desc.top_k = flags.top_k;
    desc.max_parallel = flags.max_parallel;
    return std::make_unique<MockBackend>(
        MockBackend::from_json_file(flags.mock_table, std::move(desc)));
  }
  if (!flags.endpoint.empty()) {
    BackendDescriptor desc;
    desc.id = flags.backend_id.empty() ? "remote" : flags.backend_id;
    desc.kind = BackendKind::remote;
    desc.endpoint = flags.endpoint;
    desc.top_k = flags.top_k;
    desc.max_parallel = flags.max_parallel;
    desc.auth_env = flags.auth_env;
    std::shared_ptr<ResponseCache> cache;
    if (!flags.cache.empty()) {
      cache = std::make_shared<ResponseCache>(flags.cache);
    }
    return std::make_unique<RemoteBackend>(std::move(desc), std::move(cache));
  }
  throw ConfigError("a backend is required: --mock-table or --endpoint");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

/// Fails fast on cross-label prefix conflicts so a broken collapsing map
/// never reaches the backend.
void require_clean_setup(const TemplateConfig& config) {
  if (config.space->mode() != LabelMode::closed) return;
  const auto report =
      validate_collapsing_setup(config.templates, *config.space);
  for (const auto& result : report.templates) {
    if (result.pass) continue;
    const auto& c = result.conflicts.front();
    throw AmbiguousTokenError(c.shared_prefix, c.label_a, c.label_b);
  }
}

int cmd_estimate(const std::string& config_path, const std::string& dataset_path,
                 const BackendFlags& flags, std::uint64_t seed, std::size_t n,
                 const std::string& report_path) {
  const auto config = load_template_config(config_path);
  require_clean_setup(config);
  const auto instances = load_dataset(dataset_path);
  auto backend = make_backend(flags);

  for (const auto& warning :
       descriptor_warnings(backend->descriptor(), *config.space)) {
    std::cerr << "warning: " << warning << "\n";
  }

  RunConfig run;
  run.templates = config.templates;
  run.n = n == 0 ? instances.size() : n;
  run.seed = seed;
  run.backend_id = backend->descriptor().id;
  run.top_k = flags.top_k;
  const auto result = run_estimation(run, instances, *backend, config.space);

  const Report report = make_report(run, *config.space, result);
  write_report(report, report_path);
  std::cout << format_ranked_summary(report);
  return 0;
}

int cmd_select(const std::string& report_path, int ensemble_p,
               const std::string& out_path) {
  const Report report = load_report(report_path);
  const auto ranked = rank_by_mi(report_stats(report));
  std::cout << "selected: " << ranked.best().template_id << "\n";
  nlohmann::ordered_json doc;
  doc["selected"] = ranked.best().template_id;
  if (ensemble_p > 0) {
    const auto ids = ranked.top_p(ensemble_p);
    std::cout << "ensemble:";
    for (int id : ids) std::cout << ' ' << id;
    std::cout << "\n";
    doc["ensemble"] = ids;
  }
  if (!out_path.empty()) write_text(out_path, doc.dump(2) + "\n");
  return 0;
}

int cmd_correlate(const std::string& report_path,
                  const std::string& scatter_path) {
  const Report report = load_report(report_path);
  std::vector<double> mi;
  std::vector<double> acc;
  for (const auto& row : report.rows) {
    if (!row.accuracy) {
      throw ConfigError("correlate: template " + std::to_string(row.id) +
                        " has no accuracy");
    }
    mi.push_back(row.mi);
    acc.push_back(*row.accuracy);
  }
  const double r = pearson_r(mi, acc);
  char line[48];
  std::snprintf(line, sizeof(line), "pearson_r: %.4f\n", r);
  std::cout << line;
  if (!scatter_path.empty()) write_text(scatter_path, scatter_csv(report));
  return 0;
}

int cmd_transfer(const std::string& selection_path,
                 const std::string& inference_path, bool oracle) {
  const Report selection = load_report(selection_path);
  const Report inference = load_report(inference_path);
  std::set<int> sel_ids;
  std::set<int> inf_ids;
  for (const auto& row : selection.rows) sel_ids.insert(row.id);
  for (const auto& row : inference.rows) inf_ids.insert(row.id);
  if (sel_ids != inf_ids) {
    throw ConfigError("transfer: reports cover different template ids");
  }
  const auto cell = transfer_cell(
      selection.backend_id, report_stats(selection), inference.backend_id,
      report_stats(inference),
      oracle ? SelectionMode::oracle : SelectionMode::mi);
  std::cout << "selection_model: " << cell.selection_model << "\n"
            << "inference_model: " << cell.inference_model << "\n"
            << "selected: " << cell.selected_template_id << "\n";
  char line[48];
  std::snprintf(line, sizeof(line), "normalized_score: %.4f\n",
                cell.normalized_score);
  std::cout << line;
  return 0;
}

int cmd_replay_fixture(const std::string& dataset_name,
                       const std::string& report_path,
                       const std::string& out_path) {
  std::vector<FixtureDataset> chosen;
  if (dataset_name.empty()) {
    chosen = fixture_datasets();
  } else {
    chosen.push_back(fixture_dataset(dataset_name));
  }
  const auto summary = replay_fixture(chosen);
  std::cout << format_replay_summary(summary);

  if (!report_path.empty()) {
    if (chosen.size() != 1) {
      throw ConfigError("--report needs --dataset to name one dataset");
    }
    write_report(fixture_report(chosen.front()), report_path);
  }
  if (!out_path.empty()) {
    nlohmann::ordered_json doc;
    auto& rows = doc["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : summary.rows) {
      nlohmann::ordered_json r;
      r["dataset"] = row.dataset;
      r["selected_id"] = row.selected_id;
      r["selected_accuracy"] = row.selected_accuracy;
      r["best_id"] = row.best_id;
      r["worst"] = row.worst;
      r["mean"] = row.mean;
      r["median"] = row.median;
      r["best"] = row.best;
      r["normalized"] = row.normalized;
      r["oracle"] = row.oracle;
      rows.push_back(std::move(r));
    }
    doc["mean_normalized"] = summary.mean_normalized;
    doc["oracle_hits"] = summary.oracle_hits;
    write_text(out_path, doc.dump(2) + "\n");
  }
  return 0;
}

int cmd_baseline_sweep(const std::string& config_path,
                       const std::string& dataset_path,
                       const BackendFlags& flags, std::uint64_t seed,
                       std::vector<std::size_t> train_sizes,
                       std::size_t partitions, const std::string& curve_path) {
  const auto config = load_template_config(config_path);
  require_clean_setup(config);
  const auto instances = load_dataset(dataset_path);
  auto backend = make_backend(flags);

  RunConfig run;
  run.templates = config.templates;
  run.n = instances.size();
  run.backend_id = backend->descriptor().id;
  run.top_k = flags.top_k;
  const auto inputs =
      collect_sweep_inputs(run, instances, *backend, config.space);
  const auto points = baseline_sweep(inputs, train_sizes, partitions, seed);
  const std::string csv = sweep_csv(points);
  std::cout << csv;
  if (!curve_path.empty()) write_text(curve_path, csv);
  return 0;
}

int cmd_playground(const std::string& config_path,
                   const std::string& dataset_path, const BackendFlags& flags,
                   std::uint64_t seed, std::size_t n, double threshold) {
  const auto config = load_template_config(config_path);
  require_clean_setup(config);
  const auto instances = load_dataset(dataset_path);
  auto backend = make_backend(flags);

  // Default sample: 5 instances; the check is meant to be cheap and
  // label-free, not an estimation run.
  const auto sample_indices = subsample_indices(
      instances.size(), n == 0 ? std::min<std::size_t>(5, instances.size()) : n,
      seed);
  std::vector<InstanceRecord> sample;
  sample.reserve(sample_indices.size());
  for (std::size_t i : sample_indices) sample.push_back(instances[i]);

  const auto entries = playground_check(*backend, config.templates, sample,
                                        config.space, threshold);
  std::cout << "id    success  mean_mass  flagged\n";
  for (const auto& entry : entries) {
    char line[80];
    std::snprintf(line, sizeof(line), "%-4d  %7.3f  %9.4f  %s\n",
                  entry.template_id, entry.success_fraction,
                  entry.mean_matched_mass, entry.flagged ? "yes" : "no");
    std::cout << line;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Rank prompt templates for one-token tasks by estimated mutual "
      "information"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t n = 0;
  app.add_option("--seed", seed, "Subsampling seed")->capture_default_str();
  app.add_option("--n", n, "Instance budget (0 = whole dataset)")
      ->capture_default_str();

  BackendFlags flags;

  auto* estimate = app.add_subcommand(
      "estimate", "Estimate MI for every template over a dataset");
  std::string config_path;
  std::string dataset_path;
  std::string report_path = "report.json";
  estimate->add_option("--config", config_path, "Template config JSON")
      ->required();
  estimate->add_option("--dataset", dataset_path, "Dataset JSONL")->required();
  estimate->add_option("--report", report_path, "Report output path")
      ->capture_default_str();
  add_backend_flags(estimate, flags);

  auto* select =
      app.add_subcommand("select", "Pick the highest-MI template from a report");
  std::string select_report;
  int ensemble_p = 0;
  std::string select_out;
  select->add_option("--report", select_report, "Estimation report")
      ->required();
  select->add_option("--ensemble", ensemble_p,
                     "Also list the p highest-MI templates");
  select->add_option("--out", select_out, "Selection output JSON");

  auto* correlate = app.add_subcommand(
      "correlate", "Pearson correlation between MI and accuracy");
  std::string correlate_report;
  std::string scatter_path;
  correlate->add_option("--report", correlate_report, "Estimation report")
      ->required();
  correlate->add_option("--scatter", scatter_path, "Scatter CSV output");

  auto* transfer = app.add_subcommand(
      "transfer", "Select on one report, score normalized on another");
  std::string transfer_selection;
  std::string transfer_inference;
  bool oracle = false;
  transfer->add_option("--selection-report", transfer_selection,
                       "Report used to choose the template")
      ->required();
  transfer->add_option("--inference-report", transfer_inference,
                       "Report used to score the choice")
      ->required();
  transfer->add_flag("--oracle", oracle,
                     "Select by accuracy instead of MI");

  auto* replay = app.add_subcommand(
      "replay-fixture", "Replay the bundled 8-dataset benchmark table");
  std::string replay_dataset;
  std::string replay_report;
  std::string replay_out;
  replay->add_option("--dataset", replay_dataset,
                     "Restrict to one dataset by name");
  replay->add_option("--report", replay_report,
                     "Write the dataset as an estimation report");
  replay->add_option("--out", replay_out, "Machine-readable summary JSON");

  auto* sweep = app.add_subcommand(
      "baseline-sweep",
      "Labeled-accuracy baseline vs MI selection across train sizes");
  std::string sweep_config;
  std::string sweep_dataset;
  std::vector<std::size_t> train_sizes;
  std::size_t partitions = 10;
  std::string curve_path;
  sweep->add_option("--config", sweep_config, "Template config JSON")
      ->required();
  sweep->add_option("--dataset", sweep_dataset, "Dataset JSONL with gold")
      ->required();
  sweep->add_option("--train-sizes", train_sizes, "Train sizes to sweep")
      ->required()
      ->delimiter(',');
  sweep->add_option("--partitions", partitions, "Random partitions per size")
      ->capture_default_str();
  sweep->add_option("--curve", curve_path, "Curve CSV output");
  add_backend_flags(sweep, flags);

  auto* playground = app.add_subcommand(
      "playground", "Label-free check that templates hit collapsible tokens");
  std::string playground_config;
  std::string playground_dataset;
  double threshold = kPlaygroundMassThreshold;
  playground->add_option("--config", playground_config, "Template config JSON")
      ->required();
  playground->add_option("--dataset", playground_dataset, "Dataset JSONL")
      ->required();
  playground->add_option("--threshold", threshold,
                         "Flag templates whose mean matched mass is below")
      ->capture_default_str();
  add_backend_flags(playground, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*estimate) {
      return cmd_estimate(config_path, dataset_path, flags, seed, n,
                          report_path);
    }
    if (*select) return cmd_select(select_report, ensemble_p, select_out);
    if (*correlate) return cmd_correlate(correlate_report, scatter_path);
    if (*transfer) {
      return cmd_transfer(transfer_selection, transfer_inference, oracle);
    }
    if (*replay) {
      return cmd_replay_fixture(replay_dataset, replay_report, replay_out);
    }
    if (*sweep) {
      return cmd_baseline_sweep(sweep_config, sweep_dataset, flags, seed,
                                train_sizes, partitions, curve_path);
    }
    if (*playground) {
      return cmd_playground(playground_config, playground_dataset, flags, seed,
                            n, threshold);
    }
    return 2;
  } catch (const AmbiguousTokenError& e) {
    std::cerr << "error [AmbiguousToken]: " << e.what() << "\n";
    return 2;
  } catch (const BackendError& e) {
    std::cerr << "error [backend]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
