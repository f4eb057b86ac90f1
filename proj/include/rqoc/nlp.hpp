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

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rqoc::nlp {

using Eigen::VectorXd;

/// Objective callable: returns f(x) and, when grad is non-null, writes the
/// gradient into it (grad is pre-sized to n_vars).
using Objective = std::function<double(const VectorXd& x, VectorXd* grad)>;

/// A vector-valued constraint block. `eval` writes the `dim` constraint
/// values; `add_jtv` accumulates J(x)^T y into grad. Blocks may cache work
/// between eval and add_jtv keyed on x; a solve invokes them from one thread.
struct ConstraintBlock {
  std::string name;
  int dim = 0;
  std::function<void(const VectorXd& x, Eigen::Ref<VectorXd> out)> eval;
  std::function<void(const VectorXd& x, const VectorXd& y, VectorXd& grad)>
      add_jtv;
};

/// Optional SPD approximation M(x, rho) of the augmented-Lagrangian Hessian;
/// applies out = M^{-1} r. Used to precondition the inner Newton-CG solves.
using Preconditioner = std::function<void(
    const VectorXd& x, double rho, const VectorXd& r, VectorXd& out)>;

/// Generic constrained program:
///   min f(x)  s.t.  c_eq(x) = 0,  c_ineq(x) <= 0,  lower <= x <= upper.
struct NLPProblem {
  int n_vars = 0;
  Objective objective;
  std::vector<ConstraintBlock> eq_constraints;
  std::vector<ConstraintBlock> ineq_constraints;
  VectorXd lower;  // empty means unbounded
  VectorXd upper;
  Preconditioner preconditioner;  // optional

  int n_eq() const;
  int n_ineq() const;
  void validate() const;
};

enum class SolveStatus { converged, max_iter, stalled, infeasible };

std::string to_string(SolveStatus s);

enum class IterateRecording { none, outer, inner };

struct SolveOptions {
  double tol_opt = 1e-6;        // projected-gradient norm of the Lagrangian
  double tol_feas = 1e-6;       // max constraint violation
  int max_outer = 40;
  int max_inner = 60;   // Newton steps per outer iteration
  int max_cg = 250;     // conjugate-gradient steps per Newton step
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  double penalty_max = 1e4;
  double multiplier_bound = 1e8;
  IterateRecording record = IterateRecording::none;
};

struct SolveReport {
  SolveStatus status = SolveStatus::stalled;
  VectorXd final_vars;
  double final_objective = 0.0;
  double final_violation = 0.0;
  double final_opt_norm = 0.0;
  int outer_iterations = 0;
  long inner_iterations = 0;
  std::string diagnostic;

  // One entry per outer iteration.
  std::vector<double> objective_history;
  std::vector<double> constraint_violation_history;
  // Merit (augmented Lagrangian) at the start and end of each outer
  // iteration's inner solve; end <= start up to line-search slack.
  std::vector<double> merit_start_history;
  std::vector<double> merit_end_history;

  // Populated according to SolveOptions::record.
  std::vector<VectorXd> iterate_snapshots;
  std::vector<double> iterate_objectives;
};

/// Augmented-Lagrangian outer loop with a projected truncated-Newton
/// (Newton-CG) inner solve.
/// x0 is projected onto the box before use. Deterministic for fixed inputs.
SolveReport solve(const NLPProblem& p, const VectorXd& x0,
                  const SolveOptions& opts = {});

/// Max relative discrepancy between an analytic gradient and a central
/// finite difference with per-component step 1e-6 * max(1, |x_i|).
double check_gradient(const Objective& f, const VectorXd& x);

}  // namespace rqoc::nlp
