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

#include "rqoc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <limits>
#include <stdexcept>

namespace rqoc::nlp {

namespace {

constexpr double kArmijoSlope = 1e-4;
constexpr double kWolfeCurvature = 0.9;
constexpr double kBacktrackFactor = 0.5;
constexpr int kMaxBacktracks = 50;

struct BlockValues {
  std::vector<VectorXd> eq;    // one entry per eq block
  std::vector<VectorXd> ineq;  // one entry per ineq block
};

double max_violation(const BlockValues& v) {
  double out = 0.0;
  for (const auto& c : v.eq) {
    if (c.size() > 0) out = std::max(out, c.cwiseAbs().maxCoeff());
  }
  for (const auto& g : v.ineq) {
    if (g.size() > 0) out = std::max(out, g.maxCoeff());
  }
  return std::max(out, 0.0);
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

class Projector {
 public:
  Projector(const VectorXd& lower, const VectorXd& upper)
      : lower_(lower), upper_(upper), active_(lower.size() > 0) {}

  void operator()(VectorXd& x) const {
    if (!active_) return;
    x = x.cwiseMax(lower_).cwiseMin(upper_);
  }

 private:
  const VectorXd& lower_;
  const VectorXd& upper_;
  bool active_;
};

struct Multipliers {
  std::vector<VectorXd> eq;
  std::vector<VectorXd> ineq;
};

// Augmented Lagrangian value/gradient at fixed multipliers and penalty.
// Returns the merit; fills the true objective, violation and (optionally)
// the gradient.
class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const NLPProblem& p, const Multipliers& mult, double rho)
      : p_(p), mult_(mult), rho_(rho) {}

  double eval(const VectorXd& x, VectorXd* grad, double* f_out,
              double* viol_out) const {
    if (grad != nullptr) grad->setZero();
    const double f = p_.objective(x, grad);
    double merit = f;
    double viol = 0.0;

    VectorXd c;
    for (std::size_t b = 0; b < p_.eq_constraints.size(); ++b) {
      const auto& block = p_.eq_constraints[b];
      c.resize(block.dim);
      block.eval(x, c);
      const VectorXd& lam = mult_.eq[b];
      merit += lam.dot(c) + 0.5 * rho_ * c.squaredNorm();
      if (c.size() > 0) viol = std::max(viol, c.cwiseAbs().maxCoeff());
      if (grad != nullptr) {
        const VectorXd y = lam + rho_ * c;
        block.add_jtv(x, y, *grad);
      }
    }
    for (std::size_t b = 0; b < p_.ineq_constraints.size(); ++b) {
      const auto& block = p_.ineq_constraints[b];
      c.resize(block.dim);
      block.eval(x, c);
      const VectorXd& mu = mult_.ineq[b];
      VectorXd y(block.dim);
      for (int i = 0; i < block.dim; ++i) {
        const double t = mu[i] + rho_ * c[i];
        if (t > 0.0) {
          merit += (t * t - mu[i] * mu[i]) / (2.0 * rho_);
          y[i] = t;
        } else {
          merit += -mu[i] * mu[i] / (2.0 * rho_);
          y[i] = 0.0;
        }
        viol = std::max(viol, c[i]);
      }
      if (grad != nullptr) block.add_jtv(x, y, *grad);
    }

    if (f_out != nullptr) *f_out = f;
    if (viol_out != nullptr) *viol_out = std::max(viol, 0.0);
    return merit;
  }

 private:
  const NLPProblem& p_;
  const Multipliers& mult_;
  double rho_;
};

struct InnerResult {
  double merit_start = 0.0;
  double merit_end = 0.0;
  double f = 0.0;
  double viol = 0.0;
  double pg_norm = 0.0;
  long iterations = 0;
  bool non_finite = false;
  bool budget_exhausted = false;
};

}  // namespace

int NLPProblem::n_eq() const {
  int n = 0;
  for (const auto& b : eq_constraints) n += b.dim;
  return n;
}

int NLPProblem::n_ineq() const {
  int n = 0;
  for (const auto& b : ineq_constraints) n += b.dim;
  return n;
}

void NLPProblem::validate() const {
  if (n_vars <= 0) throw std::invalid_argument("NLPProblem: n_vars <= 0");
  if (!objective) throw std::invalid_argument("NLPProblem: missing objective");
  const bool has_bounds = lower.size() > 0 || upper.size() > 0;
  if (has_bounds) {
    if (lower.size() != n_vars || upper.size() != n_vars) {
      throw std::invalid_argument("NLPProblem: bound size mismatch");
    }
    if ((lower.array() > upper.array()).any()) {
      throw std::invalid_argument("NLPProblem: lower > upper");
    }
  }
  for (const auto& b : eq_constraints) {
    if (b.dim <= 0 || !b.eval || !b.add_jtv) {
      throw std::invalid_argument("NLPProblem: malformed eq block");
    }
  }
  for (const auto& b : ineq_constraints) {
    if (b.dim <= 0 || !b.eval || !b.add_jtv) {
      throw std::invalid_argument("NLPProblem: malformed ineq block");
    }
  }
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::stalled: return "stalled";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

SolveReport solve(const NLPProblem& p, const VectorXd& x0,
                  const SolveOptions& opts) {
  p.validate();
  if (x0.size() != p.n_vars) {
    throw std::invalid_argument("solve: x0 size mismatch");
  }

  SolveReport report;
  const Projector project(p.lower, p.upper);
  VectorXd x = x0;
  project(x);

  Multipliers mult;
  mult.eq.reserve(p.eq_constraints.size());
  for (const auto& b : p.eq_constraints) mult.eq.push_back(VectorXd::Zero(b.dim));
  for (const auto& b : p.ineq_constraints) {
    mult.ineq.push_back(VectorXd::Zero(b.dim));
  }

  double rho = opts.penalty_init;
  double viol_ref = std::numeric_limits<double>::infinity();
  int stagnant_outers = 0;
  int retries = 0;

  // Best iterate seen: feasible with lowest objective, else lowest violation.
  VectorXd best_x = x;
  double best_f = std::numeric_limits<double>::infinity();
  double best_viol = std::numeric_limits<double>::infinity();
  auto consider_best = [&](const VectorXd& cand, double f, double viol) {
    const bool cand_feas = viol <= opts.tol_feas;
    const bool best_feas = best_viol <= opts.tol_feas;
    bool better = false;
    if (cand_feas && best_feas) {
      better = f < best_f;
    } else if (cand_feas != best_feas) {
      better = cand_feas;
    } else {
      better = viol < best_viol;
    }
    if (better) {
      best_x = cand;
      best_f = f;
      best_viol = viol;
    }
  };

  VectorXd grad(p.n_vars), trial(p.n_vars), trial_grad(p.n_vars);

  std::string eval_error;
  // Callables that throw (e.g. overflow guards) mark the point as
  // non-finite; the line search then backs away from it.
  auto safe_eval = [&eval_error](const AugmentedLagrangian& al,
                                 const VectorXd& at, VectorXd* g, double* f,
                                 double* v) -> double {
    try {
      return al.eval(at, g, f, v);
    } catch (const std::exception& e) {
      eval_error = e.what();
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  auto run_inner = [&](const AugmentedLagrangian& al, double tol) {
    InnerResult res;
    double f_true = 0.0, viol = 0.0;
    double merit = safe_eval(al, x, &grad, &f_true, &viol);
    res.merit_start = merit;
    if (!std::isfinite(merit) || !all_finite(grad)) {
      res.non_finite = true;
      return res;
    }

    const bool has_bounds = p.lower.size() > 0;
    std::vector<char> is_free(p.n_vars, 1);

    for (int it = 0; it < opts.max_inner; ++it) {
      // Projected-gradient stationarity measure.
      trial = x - grad;
      project(trial);
      const double pg = (x - trial).cwiseAbs().maxCoeff();
      res.pg_norm = pg;
      if (pg <= tol) break;

      // Two-metric projection: freeze epsilon-active bounds whose gradient
      // points outward, then take a truncated-Newton step on the rest.
      if (has_bounds) {
        for (int i = 0; i < p.n_vars; ++i) {
          const double eps = 1e-9 * std::max(1.0, std::abs(x[i]));
          const bool at_lo = x[i] <= p.lower[i] + eps && grad[i] > 0.0;
          const bool at_hi = x[i] >= p.upper[i] - eps && grad[i] < 0.0;
          is_free[i] = at_lo || at_hi ? 0 : 1;
        }
      }
      auto restrict_free = [&](VectorXd& v) {
        if (!has_bounds) return;
        for (int i = 0; i < p.n_vars; ++i) {
          if (!is_free[i]) v[i] = 0.0;
        }
      };

      // Preconditioned conjugate-gradient solve of the Newton system on the
      // free subspace; Hessian-vector products by forward differencing the
      // analytic gradient. Truncated on negative curvature.
      auto apply_precond = [&](const VectorXd& r, VectorXd& out) {
        if (p.preconditioner) {
          p.preconditioner(x, rho, r, out);
          restrict_free(out);
        } else {
          out = r;
        }
      };
      VectorXd g_free = grad;
      restrict_free(g_free);
      const double g_free_norm = g_free.norm();
      VectorXd dir = VectorXd::Zero(p.n_vars);
      VectorXd residual = g_free;
      VectorXd z(p.n_vars);
      apply_precond(residual, z);
      VectorXd cg_dir = -z;
      double rz = residual.dot(z);
      const double cg_target =
          std::min(0.5, std::sqrt(g_free_norm)) * g_free_norm;
      VectorXd hv(p.n_vars);
      if (!(rz > 0.0) || !std::isfinite(rz)) {
        cg_dir = -g_free;
        rz = residual.squaredNorm();
      }
      for (int cg_it = 0; cg_it < opts.max_cg; ++cg_it) {
        if (residual.norm() <= cg_target) break;
        const double dinf = cg_dir.cwiseAbs().maxCoeff();
        if (!(dinf > 0.0) || !std::isfinite(dinf)) break;
        const double h = 1e-7 * (1.0 + x.cwiseAbs().maxCoeff()) / dinf;
        trial = x + h * cg_dir;
        const double probe = safe_eval(al, trial, &trial_grad, nullptr, nullptr);
        if (!std::isfinite(probe) || !all_finite(trial_grad)) break;
        hv = (trial_grad - grad) / h;
        restrict_free(hv);
        const double curvature = cg_dir.dot(hv);
        if (curvature <= 1e-12 * cg_dir.squaredNorm()) {
          if (cg_it == 0) dir = -g_free;
          break;  // negative/zero curvature: keep the progress so far
        }
        const double alpha_cg = rz / curvature;
        dir += alpha_cg * cg_dir;
        residual += alpha_cg * hv;
        apply_precond(residual, z);
        const double rz_new = residual.dot(z);
        if (!(rz_new > 0.0) || !std::isfinite(rz_new)) break;
        cg_dir = -z + (rz_new / rz) * cg_dir;
        rz = rz_new;
      }
      double slope = dir.dot(grad);
      if (!(slope < 0.0) || !all_finite(dir)) {
        dir = -g_free;
        slope = -g_free.squaredNorm();
        if (!(slope < 0.0)) break;  // free gradient vanished at the bounds
      }

      // Weak-Wolfe bisection on the projected ray. Accepted points hand
      // their gradient straight to the next iteration.
      double lo = 0.0;
      double hi = std::numeric_limits<double>::infinity();
      double t = 1.0;
      bool accepted = false;
      double merit_new = 0.0, f_new = 0.0, viol_new = 0.0;
      double armijo_t = 0.0;  // best step seen that at least decreases
      for (int ls = 0; ls < kMaxBacktracks; ++ls) {
        trial = x + t * dir;
        project(trial);
        merit_new = safe_eval(al, trial, &trial_grad, &f_new, &viol_new);
        const bool finite =
            std::isfinite(merit_new) && all_finite(trial_grad);
        const double step_slope = grad.dot(trial - x);
        if (!finite ||
            merit_new > merit + kArmijoSlope * std::min(step_slope, 0.0)) {
          hi = t;
        } else if (trial_grad.dot(dir) < kWolfeCurvature * slope) {
          armijo_t = t;
          lo = t;
        } else {
          accepted = true;
          break;
        }
        t = std::isinf(hi) ? 2.0 * t : 0.5 * (lo + hi);
        if (t <= 0.0 || (hi - lo) <= 1e-16 * std::max(1.0, lo)) break;
      }
      if (!accepted && armijo_t > 0.0) {
        // Fall back to the best sufficient-decrease point.
        t = armijo_t;
        trial = x + t * dir;
        project(trial);
        merit_new = safe_eval(al, trial, &trial_grad, &f_new, &viol_new);
        accepted = std::isfinite(merit_new) && all_finite(trial_grad);
      }
      if (!accepted) break;  // line search exhausted at this tolerance

      x = trial;
      merit = merit_new;
      f_true = f_new;
      viol = viol_new;
      grad.swap(trial_grad);
      ++res.iterations;
      static const bool trace = std::getenv("RQOC_NLP_TRACE") != nullptr;
      if (trace) {
        std::fprintf(stderr,
                     "    inner %3ld: pg=%.3e |g|=%.3e t=%.3g merit=%.10f viol=%.3e slope=%.2e\n",
                     res.iterations, pg, grad.norm(), t, merit, viol, slope);
      }

      if (opts.record == IterateRecording::inner) {
        report.iterate_snapshots.push_back(x);
        report.iterate_objectives.push_back(f_true);
      }
    }

    res.merit_end = merit;
    res.f = f_true;
    res.viol = viol;
    res.budget_exhausted =
        res.iterations >= opts.max_inner && res.pg_norm > tol;
    return res;
  };

  SolveStatus status = SolveStatus::max_iter;
  std::string diagnostic;
  double last_pg = std::numeric_limits<double>::infinity();
  double last_viol = std::numeric_limits<double>::infinity();
  double last_f = std::numeric_limits<double>::infinity();

  // Feasibility target (eta) and inner optimality target (omega); the
  // multipliers advance while feasibility beats eta, otherwise the penalty
  // escalates.
  double eta = std::numeric_limits<double>::infinity();
  double omega = 0.1;

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    static const bool trace = std::getenv("RQOC_NLP_TRACE") != nullptr;
    if (trace) {
      std::fprintf(stderr, "  outer %d: rho=%.1e eta=%.3e omega=%.3e\n", outer,
                   rho, eta, omega);
    }
    const AugmentedLagrangian al(p, mult, rho);
    const InnerResult inner = run_inner(al, std::max(omega, opts.tol_opt));

    ++report.outer_iterations;
    report.inner_iterations += inner.iterations;
    report.merit_start_history.push_back(inner.merit_start);
    report.merit_end_history.push_back(inner.merit_end);
    report.objective_history.push_back(inner.f);
    report.constraint_violation_history.push_back(inner.viol);
    if (opts.record == IterateRecording::outer) {
      report.iterate_snapshots.push_back(x);
      report.iterate_objectives.push_back(inner.f);
    }

    if (inner.non_finite) {
      status = SolveStatus::stalled;
      diagnostic = eval_error.empty()
                       ? "non-finite objective or constraint value"
                       : "non-finite evaluation: " + eval_error;
      break;
    }

    last_pg = inner.pg_norm;
    last_viol = inner.viol;
    last_f = inner.f;
    consider_best(x, inner.f, inner.viol);

    if (inner.viol <= opts.tol_feas && inner.pg_norm <= opts.tol_opt) {
      status = SolveStatus::converged;
      break;
    }

    if (inner.viol <= std::max(opts.tol_feas, eta)) {
      // First-order multiplier update, then tighten both targets.
      VectorXd c;
      for (std::size_t b = 0; b < p.eq_constraints.size(); ++b) {
        c.resize(p.eq_constraints[b].dim);
        p.eq_constraints[b].eval(x, c);
        mult.eq[b] = (mult.eq[b] + rho * c)
                         .cwiseMax(-opts.multiplier_bound)
                         .cwiseMin(opts.multiplier_bound);
      }
      for (std::size_t b = 0; b < p.ineq_constraints.size(); ++b) {
        c.resize(p.ineq_constraints[b].dim);
        p.ineq_constraints[b].eval(x, c);
        mult.ineq[b] = (mult.ineq[b] + rho * c)
                           .cwiseMax(0.0)
                           .cwiseMin(opts.multiplier_bound);
      }
      eta = std::max(0.25 * inner.viol, 0.5 * opts.tol_feas);
      omega = std::max(0.2 * omega, opts.tol_opt);
      stagnant_outers = 0;
      retries = 0;
      viol_ref = inner.viol;
    } else if (inner.budget_exhausted && inner.viol < 0.9 * viol_ref &&
               retries < 2) {
      // The subproblem was still improving when the budget ran out;
      // continue it (warm start) rather than stiffening the penalty.
      ++retries;
      viol_ref = inner.viol;
    } else {
      if (rho >= opts.penalty_max) {
        ++stagnant_outers;
        if (stagnant_outers >= 3) {
          status = SolveStatus::infeasible;
          diagnostic = "violation stagnated at maximum penalty";
          break;
        }
      }
      rho = std::min(rho * opts.penalty_growth, opts.penalty_max);
      omega = std::max(0.2 * omega, opts.tol_opt);
      retries = 0;
      viol_ref = inner.viol;
    }
  }

  const bool keep_current = status == SolveStatus::converged;
  report.status = status;
  report.final_vars = keep_current ? x : best_x;
  report.final_objective = keep_current ? last_f : best_f;
  report.final_violation = keep_current ? last_viol : best_viol;
  report.final_opt_norm = last_pg;
  report.diagnostic = diagnostic;
  return report;
}

double check_gradient(const Objective& f, const VectorXd& x) {
  VectorXd grad(x.size());
  grad.setZero();
  f(x, &grad);

  VectorXd xp = x, xm = x;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    const double fd = (f(xp, nullptr) - f(xm, nullptr)) / (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
    const double denom = std::max({1.0, std::abs(fd), std::abs(grad[i])});
    worst = std::max(worst, std::abs(grad[i] - fd) / denom);
  }
  return worst;
}

}  // namespace rqoc::nlp
