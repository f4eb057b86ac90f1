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

#include "rqoc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#ifndef RQOC_GIT_DESCRIBE
#define RQOC_GIT_DESCRIBE "unknown"
#endif

namespace rqoc::harness {

namespace fs = std::filesystem;
using dynamics::ControlTrajectory;
using trajopt::ProblemSpec;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

trajopt::ProblemSpec apply_sweep_value(const ExperimentConfig& config,
                                       ProblemSpec spec, double value) {
  const std::string& param = config.sweep->param;
  if (param == "Q") {
    spec.q_weight = value;
  } else if (param == "n_knots") {
    // Hold the horizon fixed: resample dt so (N-1) dt is unchanged.
    const double t_f = spec.t_f();
    const int n = static_cast<int>(std::lround(value));
    if (n < 2) throw std::invalid_argument("sweep n_knots: value < 2");
    spec.n_knots = n;
    spec.dt = t_f / (n - 1);
  } else if (param == "ddu_bound") {
    spec.bounds.ddu =
        Eigen::VectorXd::Constant(spec.system.n_controls(), value);
  } else if (param == "order_j") {
    spec.order_j = static_cast<int>(std::lround(value));
  } else {
    throw std::invalid_argument("unknown sweep parameter: " + param);
  }
  return spec;
}

void parallel_cells(int n_cells, int max_workers,
                    const std::function<void(int)>& work) {
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  int workers = max_workers > 0 ? max_workers : (hw > 0 ? hw : 1);
  workers = std::min(workers, n_cells);
  if (workers <= 1) {
    for (int i = 0; i < n_cells; ++i) work(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n_cells; i = next.fetch_add(1)) {
        work(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

json matrixxd_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrixxd_from_json(const json& j, Eigen::Index rows,
                                   Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  if (static_cast<Eigen::Index>(j.size()) != rows) {
    throw std::invalid_argument("controls: row count mismatch");
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw std::invalid_argument("controls: column count mismatch");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.scenario = j.at("scenario").get<std::string>();
    if (j.contains("spec")) c.spec_params = j.at("spec");
    if (j.contains("sweep") && !j.at("sweep").is_null()) {
      SweepConfig s;
      s.param = j.at("sweep").at("param").get<std::string>();
      for (const auto& v : j.at("sweep").at("values")) {
        s.values.push_back(v.get<double>());
      }
      c.sweep = s;
    }
    if (j.contains("seeds")) {
      for (const auto& s : j.at("seeds")) {
        c.seeds.push_back(s.get<std::uint64_t>());
      }
    }
    if (c.seeds.empty()) {
      const int n = c.scenario == "iswap" ? 16 : 10;
      for (int s = 1; s <= n; ++s) c.seeds.push_back(s);
    }
    if (j.contains("solver")) {
      const json& s = j.at("solver");
      c.solver.tol_opt = s.value("tol_opt", c.solver.tol_opt);
      c.solver.tol_feas = s.value("tol_feas", c.solver.tol_feas);
      c.solver.max_outer = s.value("max_outer", c.solver.max_outer);
      c.solver.max_inner = s.value("max_inner", c.solver.max_inner);
      c.solver.penalty_init = s.value("penalty_init", c.solver.penalty_init);
      c.solver.penalty_growth =
          s.value("penalty_growth", c.solver.penalty_growth);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.max_workers = j.value("max_workers", 0);
    c.write_solutions = j.value("write_solutions", true);
    c.write_iterates = j.value("write_iterates", false);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["scenario"] = scenario;
  j["spec"] = spec_params;
  if (sweep) {
    j["sweep"] = json{{"param", sweep->param}, {"values", sweep->values}};
  }
  j["seeds"] = seeds;
  j["solver"] = json{{"tol_opt", solver.tol_opt},
                     {"tol_feas", solver.tol_feas},
                     {"max_outer", solver.max_outer},
                     {"max_inner", solver.max_inner},
                     {"penalty_init", solver.penalty_init},
                     {"penalty_growth", solver.penalty_growth}};
  j["output_dir"] = output_dir;
  j["max_workers"] = max_workers;
  j["write_solutions"] = write_solutions;
  j["write_iterates"] = write_iterates;
  return j;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) {
    throw std::invalid_argument("config: seeds must be nonempty");
  }
  if (sweep) {
    if (sweep->values.empty()) {
      throw std::invalid_argument("config: sweep.values must be nonempty");
    }
    for (double v : sweep->values) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("config: sweep values must be finite");
      }
    }
  }
  make_scenario(scenario, spec_params).validate();
}

std::string ResultRow::csv_header() {
  return "scenario,seed,sweep_param,sweep_value,status,fidelity,e_fine,"
         "e_adjoint,e_toggling_0,e_toggling_4,e_universal_0,max_du,max_ddu,"
         "wall_time_s";
}

std::string ResultRow::to_csv() const {
  std::ostringstream out;
  out << scenario << ',' << seed << ',' << sweep_param << ','
      << format_double(sweep_value) << ',' << status << ','
      << format_double(fidelity) << ',' << format_double(e_fine) << ','
      << format_double(e_adjoint) << ',' << format_double(e_toggling0) << ','
      << format_double(e_toggling4) << ',' << format_double(e_universal0)
      << ',' << format_double(max_du) << ',' << format_double(max_ddu) << ','
      << format_double(wall_time_s);
  return out.str();
}

ResultRow ResultRow::from_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  if (fields.size() != 14) {
    throw std::invalid_argument("ResultRow: expected 14 CSV fields");
  }
  ResultRow r;
  r.scenario = fields[0];
  r.seed = std::stoull(fields[1]);
  r.sweep_param = fields[2];
  r.sweep_value = std::stod(fields[3]);
  r.status = fields[4];
  r.fidelity = std::stod(fields[5]);
  r.e_fine = std::stod(fields[6]);
  r.e_adjoint = std::stod(fields[7]);
  r.e_toggling0 = std::stod(fields[8]);
  r.e_toggling4 = std::stod(fields[9]);
  r.e_universal0 = std::stod(fields[10]);
  r.max_du = std::stod(fields[11]);
  r.max_ddu = std::stod(fields[12]);
  r.wall_time_s = std::stod(fields[13]);
  return r;
}

json MetricBlock::to_json() const {
  return json{{"fidelity", fidelity},
              {"e_fine", e_fine},
              {"e_adjoint", e_adjoint},
              {"e_toggling_0", e_toggling0},
              {"e_toggling_4", e_toggling4},
              {"e_universal_0", e_universal0},
              {"max_du", max_du},
              {"max_ddu", max_ddu}};
}

MetricBlock cross_evaluate(const ProblemSpec& spec,
                           const ControlTrajectory& traj) {
  MetricBlock m;
  const dynamics::UnitaryTrajectory us = dynamics::rollout(spec.system, traj);
  if (spec.target.goal.size() > 0) {
    m.fidelity = dynamics::fidelity(us.final_unitary(), spec.target);
  }
  m.e_fine = metrics::susceptibility_fine(spec.system, traj, spec.error, 0, &us);
  m.e_adjoint = metrics::susceptibility_adjoint(spec.system, traj, spec.error);
  m.e_toggling0 =
      metrics::susceptibility_toggling(spec.system, traj, spec.error, 0, &us);
  m.e_toggling4 =
      metrics::susceptibility_toggling(spec.system, traj, spec.error, 4, &us);
  m.e_universal0 = metrics::susceptibility_universal(spec.system, traj, 0, &us);
  m.max_du = traj.du.size() > 0 ? traj.du.cwiseAbs().maxCoeff() : 0.0;
  m.max_ddu = traj.ddu.size() > 0 ? traj.ddu.cwiseAbs().maxCoeff() : 0.0;
  return m;
}

json Solution::to_json() const {
  json j;
  j["format"] = "rqoc-solution-v1";
  j["scenario"] = scenario;
  j["seed"] = seed;
  j["status"] = status;
  j["spec"] = spec_to_json(spec);
  j["n_knots"] = traj.n_knots;
  j["dt"] = traj.dt;
  j["controls"] = json{{"u", matrixxd_to_json(traj.u)},
                       {"du", matrixxd_to_json(traj.du)},
                       {"ddu", matrixxd_to_json(traj.ddu)},
                       {"labels", spec.system.labels}};
  j["metrics"] = metrics.to_json();
  return j;
}

Solution Solution::from_json(const json& j) {
  Solution s;
  s.scenario = j.value("scenario", std::string("custom"));
  s.seed = j.value("seed", std::uint64_t{0});
  s.status = j.value("status", std::string());
  s.spec = spec_from_json(j.at("spec"));
  const int n = j.at("n_knots").get<int>();
  const double dt = j.at("dt").get<double>();
  const int nj = s.spec.system.n_controls();
  s.traj = ControlTrajectory::zeros(n, dt, nj);
  const json& c = j.at("controls");
  s.traj.u = matrixxd_from_json(c.at("u"), n, nj);
  s.traj.du = matrixxd_from_json(c.at("du"), n, nj);
  s.traj.ddu = matrixxd_from_json(c.at("ddu"), n - 1, nj);
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    s.metrics.fidelity = m.value("fidelity", 0.0);
    s.metrics.e_fine = m.value("e_fine", 0.0);
    s.metrics.e_adjoint = m.value("e_adjoint", 0.0);
    s.metrics.e_toggling0 = m.value("e_toggling_0", 0.0);
    s.metrics.e_toggling4 = m.value("e_toggling_4", 0.0);
    s.metrics.e_universal0 = m.value("e_universal_0", 0.0);
    s.metrics.max_du = m.value("max_du", 0.0);
    s.metrics.max_ddu = m.value("max_ddu", 0.0);
  }
  return s;
}

Solution Solution::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open solution: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("solution " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << ResultRow::csv_header() << '\n';
  for (const auto& r : rows) out << r.to_csv() << '\n';
  return out.str();
}

RunOutput run(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);

  std::vector<double> sweep_values{kNaN};
  std::string sweep_param;
  if (config.sweep) {
    sweep_values = config.sweep->values;
    sweep_param = config.sweep->param;
  }
  const int n_sweep = static_cast<int>(sweep_values.size());
  const int n_seeds = static_cast<int>(config.seeds.size());
  const int n_cells = n_sweep * n_seeds;

  RunOutput out;
  out.rows.resize(n_cells);
  out.solutions.resize(n_cells);
  std::vector<std::string> iterate_csvs(n_cells);

  parallel_cells(n_cells, config.max_workers, [&](int cell) {
    const int si = cell / n_seeds;
    const int pi = cell % n_seeds;
    const std::uint64_t seed = config.seeds[pi];
    ResultRow row;
    row.scenario = config.scenario;
    row.seed = seed;
    row.sweep_param = sweep_param;
    row.sweep_value = sweep_values[si];
    row.fidelity = row.e_fine = row.e_adjoint = row.e_toggling0 =
        row.e_toggling4 = row.e_universal0 = row.max_du = row.max_ddu = kNaN;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ProblemSpec spec = make_scenario(config.scenario, config.spec_params);
      if (config.sweep) {
        spec = apply_sweep_value(config, std::move(spec), sweep_values[si]);
      }
      spec.validate();
      trajopt::BuiltProblem built = trajopt::build(spec);
      const Eigen::VectorXd x0 = trajopt::initialize(spec, built.layout, seed);
      nlp::SolveOptions opts = config.solver;
      if (config.write_iterates) opts.record = nlp::IterateRecording::inner;
      const nlp::SolveReport report = nlp::solve(built.problem, x0, opts);

      const ControlTrajectory traj =
          trajopt::extract_controls(report.final_vars, built.layout, spec.dt);
      const MetricBlock metrics = cross_evaluate(spec, traj);

      row.status = nlp::to_string(report.status);
      row.fidelity = metrics.fidelity;
      row.e_fine = metrics.e_fine;
      row.e_adjoint = metrics.e_adjoint;
      row.e_toggling0 = metrics.e_toggling0;
      row.e_toggling4 = metrics.e_toggling4;
      row.e_universal0 = metrics.e_universal0;
      row.max_du = metrics.max_du;
      row.max_ddu = metrics.max_ddu;

      Solution sol;
      sol.scenario = config.scenario;
      sol.seed = seed;
      sol.status = row.status;
      sol.spec = spec;
      sol.traj = traj;
      sol.metrics = metrics;
      out.solutions[cell] = std::move(sol);

      if (config.write_iterates && !report.iterate_snapshots.empty()) {
        const auto stats =
            trajopt::analyze_iterates(report, spec, built.layout);
        std::ostringstream iter_csv;
        iter_csv << "iteration,max_du,max_ddu,objective,fidelity\n";
        for (std::size_t i = 0; i < stats.size(); ++i) {
          iter_csv << i << ',' << format_double(stats[i].max_du) << ','
                   << format_double(stats[i].max_ddu) << ','
                   << format_double(stats[i].objective) << ','
                   << format_double(stats[i].fidelity) << '\n';
        }
        iterate_csvs[cell] = iter_csv.str();
      }
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    const auto t1 = std::chrono::steady_clock::now();
    row.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    out.rows[cell] = std::move(row);
  });

  out.results_csv_path = (fs::path(config.output_dir) / "results.csv").string();
  write_text_file(out.results_csv_path, rows_to_csv(out.rows));

  json meta;
  meta["config"] = config.to_json();
  meta["build"] = RQOC_GIT_DESCRIBE;
  meta["n_cells"] = n_cells;
  write_text_file((fs::path(config.output_dir) / "run_meta.json").string(),
                  meta.dump(2) + "\n");

  for (int cell = 0; cell < n_cells; ++cell) {
    const ResultRow& row = out.rows[cell];
    if (config.write_solutions && out.solutions[cell].traj.n_knots > 0) {
      std::ostringstream name;
      name << "solution_s" << (cell / n_seeds) << "_seed" << row.seed
           << ".json";
      write_text_file((fs::path(config.output_dir) / name.str()).string(),
                      out.solutions[cell].to_json().dump(2) + "\n");
    }
    if (config.write_iterates && !iterate_csvs[cell].empty()) {
      std::ostringstream name;
      name << "iterates_s" << (cell / n_seeds) << "_seed" << row.seed << ".csv";
      write_text_file((fs::path(config.output_dir) / name.str()).string(),
                      iterate_csvs[cell]);
    }
  }
  return out;
}

std::vector<ParetoPoint> report_pareto(const std::vector<ResultRow>& rows,
                                       double fidelity_threshold,
                                       double feasibility_slack) {
  std::vector<double> values;
  for (const auto& r : rows) {
    const bool seen = std::any_of(values.begin(), values.end(), [&](double v) {
      return v == r.sweep_value || (std::isnan(v) && std::isnan(r.sweep_value));
    });
    if (!seen) values.push_back(r.sweep_value);
  }
  std::sort(values.begin(), values.end());

  std::vector<ParetoPoint> out;
  for (double v : values) {
    ParetoPoint p;
    p.sweep_value = v;
    double sum = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
      const bool same =
          r.sweep_value == v || (std::isnan(r.sweep_value) && std::isnan(v));
      if (!same) continue;
      ++p.n_total;
      if (r.status != "converged") continue;
      if (!(r.fidelity >= fidelity_threshold - feasibility_slack)) continue;
      ++p.n_feasible;
      sum += r.e_adjoint;
      best = std::min(best, r.e_adjoint);
    }
    if (p.n_feasible > 0) {
      p.mean_e_adjoint = sum / p.n_feasible;
      p.min_e_adjoint = best;
    } else {
      p.mean_e_adjoint = kNaN;  // explicit empty-frontier marker
      p.min_e_adjoint = kNaN;
    }
    out.push_back(p);
  }
  return out;
}

std::vector<PauliScanRow> report_pauli_scan(const Solution& solution) {
  const Eigen::Index d = solution.spec.system.dim;
  int n_qubits = 0;
  while ((Eigen::Index(1) << n_qubits) < d) ++n_qubits;
  if ((Eigen::Index(1) << n_qubits) != d) {
    throw std::invalid_argument("report_pauli_scan: dim is not a power of 2");
  }
  const auto scan = metrics::pauli_susceptibility_scan(
      solution.spec.system, solution.traj, n_qubits);
  std::vector<PauliScanRow> out;
  out.reserve(scan.size());
  for (const auto& row : scan) {
    PauliScanRow r;
    r.label = row.op.label();
    r.value = row.value;
    for (const auto& ch : solution.spec.error.channels) {
      if (ch.label == r.label) r.targeted = true;
    }
    out.push_back(r);
  }
  return out;
}

PairedComparison compare_rows(const std::vector<ResultRow>& a,
                              const std::vector<ResultRow>& b) {
  PairedComparison cmp;
  std::vector<double> va, vb;
  for (const auto& ra : a) {
    for (const auto& rb : b) {
      const bool same_sweep =
          ra.sweep_value == rb.sweep_value ||
          (std::isnan(ra.sweep_value) && std::isnan(rb.sweep_value));
      if (!same_sweep || ra.seed != rb.seed) continue;
      ++cmp.n_pairs;
      if (ra.e_adjoint < rb.e_adjoint) ++cmp.a_lower;
      va.push_back(ra.e_adjoint);
      vb.push_back(rb.e_adjoint);
      break;
    }
  }
  auto median = [](std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  cmp.median_a = median(va);
  cmp.median_b = median(vb);
  return cmp;
}

}  // namespace rqoc::harness
