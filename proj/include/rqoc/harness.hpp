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

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rqoc/metrics.hpp"
#include "rqoc/scenarios.hpp"

namespace rqoc::harness {

struct SweepConfig {
  std::string param;  // one of: Q, n_knots, ddu_bound, order_j
  std::vector<double> values;
};

/// Top-level experiment description, loadable from JSON:
/// {scenario, spec{...}, sweep{param, values[]}, seeds[],
///  solver{tol_opt, tol_feas, max_outer, max_inner}, output_dir}.
struct ExperimentConfig {
  std::string scenario = "hadamard";
  json spec_params = json::object();
  std::optional<SweepConfig> sweep;
  std::vector<std::uint64_t> seeds;
  nlp::SolveOptions solver;
  std::string output_dir = "out";
  int max_workers = 0;       // 0 -> hardware concurrency
  bool write_solutions = true;
  bool write_iterates = false;  // per-iteration maxima (CDF studies)

  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::string& path);
  json to_json() const;
  void validate() const;
};

/// One solved (seed, sweep value) cell with every estimator cross-evaluated
/// on the control-derived rollout.
struct ResultRow {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string sweep_param;
  double sweep_value = std::numeric_limits<double>::quiet_NaN();
  std::string status;
  double fidelity = 0.0;
  double e_fine = 0.0;
  double e_adjoint = 0.0;
  double e_toggling0 = 0.0;
  double e_toggling4 = 0.0;
  double e_universal0 = 0.0;
  double max_du = 0.0;
  double max_ddu = 0.0;
  double wall_time_s = 0.0;

  static std::string csv_header();
  std::string to_csv() const;
  static ResultRow from_csv(const std::string& line);
};

struct MetricBlock {
  double fidelity = 0.0;
  double e_fine = 0.0;
  double e_adjoint = 0.0;
  double e_toggling0 = 0.0;
  double e_toggling4 = 0.0;
  double e_universal0 = 0.0;
  double max_du = 0.0;
  double max_ddu = 0.0;

  json to_json() const;
};

/// Evaluates every estimator on the rollout derived from `traj`.
MetricBlock cross_evaluate(const trajopt::ProblemSpec& spec,
                           const dynamics::ControlTrajectory& traj);

/// A saved solution: controls plus the spec they solve, re-evaluable
/// without re-solving.
struct Solution {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string status;
  trajopt::ProblemSpec spec;
  dynamics::ControlTrajectory traj;
  MetricBlock metrics;

  json to_json() const;
  static Solution from_json(const json& j);
  static Solution load(const std::string& path);
};

struct RunOutput {
  std::vector<ResultRow> rows;
  std::vector<Solution> solutions;
  std::string results_csv_path;
};

/// Runs the (seed x sweep value) batch in a bounded worker pool, writes
/// results.csv, per-cell solution files and run metadata into output_dir.
/// Cell failures are recorded in the row status; the batch never aborts.
RunOutput run(const ExperimentConfig& config);

struct ParetoPoint {
  double sweep_value = 0.0;
  int n_feasible = 0;
  int n_total = 0;
  double mean_e_adjoint = 0.0;  // over feasible rows
  double min_e_adjoint = 0.0;
};

/// Per-sweep-value frontier data over rows sharing one sweep axis, keeping
/// rows with fidelity >= threshold - feasibility_slack. Points with no
/// feasible row carry n_feasible = 0 and NaN aggregates.
std::vector<ParetoPoint> report_pareto(const std::vector<ResultRow>& rows,
                                       double fidelity_threshold,
                                       double feasibility_slack = 1e-6);

struct PauliScanRow {
  std::string label;
  double value = 0.0;
  bool targeted = false;  // channel present in the solution's error model
};

/// Adjoint susceptibility of every non-identity Pauli string for a saved
/// solution (4^n - 1 rows).
std::vector<PauliScanRow> report_pauli_scan(const Solution& solution);

struct PairedComparison {
  int n_pairs = 0;
  int a_lower = 0;  // pairs where run A's summed adjoint susceptibility wins
  double median_a = 0.0;
  double median_b = 0.0;
};

/// Pairs rows by (sweep value, seed) and compares e_adjoint.
PairedComparison compare_rows(const std::vector<ResultRow>& a,
                              const std::vector<ResultRow>& b);

std::string format_double(double v);
void write_text_file(const std::string& path, const std::string& content);
std::string rows_to_csv(const std::vector<ResultRow>& rows);

}  // namespace rqoc::harness
