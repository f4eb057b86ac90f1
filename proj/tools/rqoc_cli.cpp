// Copyright 2026 The rqoc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "rqoc/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace rqoc;

void print_rows_summary(const std::vector<harness::ResultRow>& rows) {
  int converged = 0;
  for (const auto& r : rows) {
    if (r.status == "converged") ++converged;
  }
  std::cout << rows.size() << " cells, " << converged << " converged\n";
}

int cmd_run(const std::string& config_path, bool require_sweep) {
  harness::ExperimentConfig config = harness::ExperimentConfig::load(config_path);
  if (require_sweep && !config.sweep) {
    std::cerr << "sweep: config has no sweep block\n";
    return 2;
  }
  if (!require_sweep && config.sweep) {
    std::cerr << "optimize: config has a sweep block; use the sweep command\n";
    return 2;
  }
  const harness::RunOutput out = harness::run(config);
  print_rows_summary(out.rows);
  std::cout << "results: " << out.results_csv_path << "\n";

  if (config.sweep) {
    double threshold = 0.0;
    const auto spec = harness::make_scenario(config.scenario, config.spec_params);
    if (spec.fidelity_min) threshold = *spec.fidelity_min;
    const auto frontier = harness::report_pareto(out.rows, threshold);
    std::ostringstream csv;
    csv << "sweep_value,n_feasible,n_total,mean_e_adjoint,min_e_adjoint\n";
    for (const auto& p : frontier) {
      csv << harness::format_double(p.sweep_value) << ',' << p.n_feasible << ','
          << p.n_total << ',' << harness::format_double(p.mean_e_adjoint)
          << ',' << harness::format_double(p.min_e_adjoint) << '\n';
    }
    const std::string path =
        (fs::path(config.output_dir) / "pareto.csv").string();
    harness::write_text_file(path, csv.str());
    std::cout << "pareto: " << path << "\n";
  }
  return 0;
}

int cmd_metrics(const std::string& solution_path, const std::string& out_path) {
  const harness::Solution sol = harness::Solution::load(solution_path);
  const harness::MetricBlock m = harness::cross_evaluate(sol.spec, sol.traj);
  std::cout << m.to_json().dump(2) << "\n";

  const Eigen::Index d = sol.spec.system.dim;
  if ((d & (d - 1)) == 0 && d >= 2) {
    const auto scan = harness::report_pauli_scan(sol);
    std::ostringstream csv;
    csv << "pauli,e_adjoint,targeted\n";
    for (const auto& row : scan) {
      csv << row.label << ',' << harness::format_double(row.value) << ','
          << (row.targeted ? 1 : 0) << '\n';
    }
    if (!out_path.empty()) {
      harness::write_text_file(out_path, csv.str());
      std::cout << "pauli scan: " << out_path << "\n";
    } else {
      std::cout << csv.str();
    }
  }
  return 0;
}

int cmd_compare(const std::string& path_a, const std::string& path_b) {
  harness::ExperimentConfig a = harness::ExperimentConfig::load(path_a);
  harness::ExperimentConfig b = harness::ExperimentConfig::load(path_b);
  const harness::RunOutput ra = harness::run(a);
  const harness::RunOutput rb = harness::run(b);
  const harness::PairedComparison cmp = harness::compare_rows(ra.rows, rb.rows);
  harness::json j;
  j["n_pairs"] = cmp.n_pairs;
  j["a_lower_e_adjoint"] = cmp.a_lower;
  j["median_e_adjoint_a"] = cmp.median_a;
  j["median_e_adjoint_b"] = cmp.median_b;
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust quantum control design and benchmarking"};
  app.require_subcommand(1);

  std::string config_path, config_path_b, solution_path, scan_out;

  CLI::App* optimize =
      app.add_subcommand("optimize", "Solve one configuration across seeds");
  optimize->add_option("config", config_path, "experiment config JSON")
      ->required();

  CLI::App* sweep =
      app.add_subcommand("sweep", "Run a parameter sweep across seeds");
  sweep->add_option("config", config_path, "experiment config JSON")
      ->required();

  CLI::App* metrics = app.add_subcommand(
      "metrics", "Cross-evaluate all estimators on a saved solution");
  metrics->add_option("solution", solution_path, "solution JSON")->required();
  metrics->add_option("--pauli-scan-out", scan_out,
                      "write the Pauli susceptibility scan CSV here");

  CLI::App* compare = app.add_subcommand(
      "compare", "Run two configs and compare paired adjoint susceptibility");
  compare->add_option("config_a", config_path, "first config")->required();
  compare->add_option("config_b", config_path_b, "second config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (optimize->parsed()) return cmd_run(config_path, false);
    if (sweep->parsed()) return cmd_run(config_path, true);
    if (metrics->parsed()) return cmd_metrics(solution_path, scan_out);
    if (compare->parsed()) return cmd_compare(config_path, config_path_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
