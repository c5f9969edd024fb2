#pragma once

// Shared test scaffolding: distribution builders, deterministic random
// batches, and a runner for the installed CLI binary.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "miprompt/core.hpp"
#include "miprompt/selection.hpp"

namespace testutil {

inline miprompt::LabelSpacePtr binary_space() {
  static const auto space = miprompt::make_space(
      miprompt::LabelSpace::closed({"yes", "no"}));
  return space;
}

inline miprompt::LabelSpacePtr space_of(std::vector<std::string> labels) {
  return miprompt::make_space(
      miprompt::LabelSpace::closed(std::move(labels)));
}

inline miprompt::LabelDistribution dist(const miprompt::LabelSpacePtr& space,
                                        std::vector<double> probs) {
  return miprompt::LabelDistribution(space, std::move(probs));
}

inline std::vector<miprompt::LabelDistribution> dists(
    const miprompt::LabelSpacePtr& space,
    const std::vector<std::vector<double>>& rows) {
  std::vector<miprompt::LabelDistribution> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.emplace_back(space, row);
  return out;
}

inline miprompt::TokenTopK topk(
    std::vector<std::pair<std::string, double>> token_probs) {
  std::vector<miprompt::TokenEntry> entries;
  entries.reserve(token_probs.size());
  for (auto& [token, p] : token_probs) {
    entries.push_back({std::move(token), std::log(p)});
  }
  return miprompt::TokenTopK(std::move(entries), "test");
}

/// Random stochastic vector over `width` labels; probabilities are strictly
/// positive so entropy oracles never hit the 0 ln 0 branch by accident.
inline std::vector<double> random_simplex(std::mt19937_64& rng,
                                          std::size_t width) {
  std::vector<double> v(width);
  double total = 0.0;
  for (auto& x : v) {
    x = 1e-6 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
    total += x;
  }
  for (auto& x : v) x /= total;
  return v;
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// Runs the CLI with the given argument string, capturing exit code and both
/// streams through temp files.
inline CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path();
  const auto out_path = dir / ("miprompt_test_out_" +
                               std::to_string(counter) + ".txt");
  const auto err_path = dir / ("miprompt_test_err_" +
                               std::to_string(counter) + ".txt");
  ++counter;

  const std::string command = std::string(MIPROMPT_CLI_PATH) + " " + args +
                              " >" + out_path.string() + " 2>" +
                              err_path.string();
  const int status = std::system(command.c_str());

  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = read_file(out_path);
  result.err = read_file(err_path);
  std::filesystem::remove(out_path);
  std::filesystem::remove(err_path);
  return result;
}

/// Fresh scratch directory under the system temp root.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("miprompt_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
