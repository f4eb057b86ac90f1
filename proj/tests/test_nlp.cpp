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

#include <cmath>

#include "doctest.h"

using namespace rqoc;
using Eigen::VectorXd;
using nlp::ConstraintBlock;
using nlp::NLPProblem;
using nlp::SolveOptions;
using nlp::SolveReport;
using nlp::SolveStatus;

namespace {

NLPProblem quadratic_with_pin(int n) {
  // min ||x||^2  s.t.  x_0 = 1
  NLPProblem p;
  p.n_vars = n;
  p.objective = [](const VectorXd& x, VectorXd* grad) {
    if (grad != nullptr) *grad += 2.0 * x;
    return x.squaredNorm();
  };
  ConstraintBlock pin;
  pin.name = "pin_first";
  pin.dim = 1;
  pin.eval = [](const VectorXd& x, Eigen::Ref<VectorXd> out) {
    out[0] = x[0] - 1.0;
  };
  pin.add_jtv = [](const VectorXd&, const VectorXd& y, VectorXd& grad) {
    grad[0] += y[0];
  };
  p.eq_constraints.push_back(pin);
  return p;
}

double rosenbrock(const VectorXd& x, VectorXd* grad) {
  const double a = 1.0 - x[0];
  const double b = x[1] - x[0] * x[0];
  if (grad != nullptr) {
    (*grad)[0] += -2.0 * a - 400.0 * x[0] * b;
    (*grad)[1] += 200.0 * b;
  }
  return a * a + 100.0 * b * b;
}

}  // namespace

TEST_CASE("projection onto a pinned coordinate") {
  NLPProblem p = quadratic_with_pin(4);
  const SolveReport r = nlp::solve(p, VectorXd::Constant(4, 0.3));
  CHECK(r.status == SolveStatus::converged);
  CHECK(r.final_vars[0] == doctest::Approx(1.0).epsilon(1e-6));
  for (int i = 1; i < 4; ++i) CHECK(std::abs(r.final_vars[i]) < 1e-6);
  CHECK(r.final_objective == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.final_violation < 1e-6);
}

TEST_CASE("active box bound") {
  // min x^2 with x >= 2.
  NLPProblem p;
  p.n_vars = 1;
  p.objective = [](const VectorXd& x, VectorXd* grad) {
    if (grad != nullptr) (*grad)[0] += 2.0 * x[0];
    return x[0] * x[0];
  };
  p.lower = VectorXd::Constant(1, 2.0);
  p.upper = VectorXd::Constant(1, 100.0);
  const SolveReport r = nlp::solve(p, VectorXd::Constant(1, 37.0));
  CHECK(r.status == SolveStatus::converged);
  CHECK(r.final_vars[0] == doctest::Approx(2.0));
}

TEST_CASE("constrained rosenbrock matches the grid-search oracle") {
  // Oracle: dense scan of (1-t)^2 + 100(1-t-t^2)^2 over t in [-2, 2] with
  // local refinement; frozen result below.
  const double oracle_x1 = 0.6187956190378362;
  const double oracle_obj = 0.14560701802825982;
  {
    double best_t = 0.0, best_v = 1e300;
    for (int i = 0; i <= 400000; ++i) {
      const double t = -2.0 + 4.0 * i / 400000.0;
      const double v = (1 - t) * (1 - t) +
                       100.0 * (1 - t - t * t) * (1 - t - t * t);
      if (v < best_v) {
        best_v = v;
        best_t = t;
      }
    }
    CHECK(std::abs(best_t - oracle_x1) < 1e-4);
    CHECK(std::abs(best_v - oracle_obj) < 1e-7);
  }

  NLPProblem p;
  p.n_vars = 2;
  p.objective = [](const VectorXd& x, VectorXd* grad) {
    return rosenbrock(x, grad);
  };
  ConstraintBlock line;
  line.name = "sum_to_one";
  line.dim = 1;
  line.eval = [](const VectorXd& x, Eigen::Ref<VectorXd> out) {
    out[0] = x[0] + x[1] - 1.0;
  };
  line.add_jtv = [](const VectorXd&, const VectorXd& y, VectorXd& grad) {
    grad[0] += y[0];
    grad[1] += y[0];
  };
  p.eq_constraints.push_back(line);

  SolveOptions opts;
  opts.max_inner = 600;
  const SolveReport r = nlp::solve(p, VectorXd::Zero(2), opts);
  CHECK(r.status == SolveStatus::converged);
  CHECK(std::abs(r.final_vars[0] - oracle_x1) < 1e-4);
  CHECK(std::abs(r.final_vars[0] + r.final_vars[1] - 1.0) < 1e-6);
  CHECK(std::abs(r.final_objective - oracle_obj) < 1e-6);
}

TEST_CASE("inequality constraint with the slack-free multiplier update") {
  // min (x-3)^2 s.t. x <= 1.
  NLPProblem p;
  p.n_vars = 1;
  p.objective = [](const VectorXd& x, VectorXd* grad) {
    if (grad != nullptr) (*grad)[0] += 2.0 * (x[0] - 3.0);
    return (x[0] - 3.0) * (x[0] - 3.0);
  };
  ConstraintBlock cap;
  cap.name = "cap";
  cap.dim = 1;
  cap.eval = [](const VectorXd& x, Eigen::Ref<VectorXd> out) {
    out[0] = x[0] - 1.0;
  };
  cap.add_jtv = [](const VectorXd&, const VectorXd& y, VectorXd& grad) {
    grad[0] += y[0];
  };
  p.ineq_constraints.push_back(cap);
  const SolveReport r = nlp::solve(p, VectorXd::Zero(1));
  CHECK(r.status == SolveStatus::converged);
  CHECK(r.final_vars[0] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("merit decreases within every outer iteration") {
  NLPProblem p = quadratic_with_pin(6);
  SolveOptions opts;
  const SolveReport r = nlp::solve(p, VectorXd::Constant(6, -2.0), opts);
  REQUIRE(r.merit_start_history.size() == r.merit_end_history.size());
  for (std::size_t i = 0; i < r.merit_start_history.size(); ++i) {
    CHECK(r.merit_end_history[i] <= r.merit_start_history[i] + 1e-10);
  }
  CHECK(r.objective_history.size() == r.constraint_violation_history.size());
}

TEST_CASE("identical inputs give identical reports") {
  NLPProblem p = quadratic_with_pin(5);
  const VectorXd x0 = VectorXd::Constant(5, 0.7);
  const SolveReport a = nlp::solve(p, x0);
  const SolveReport b = nlp::solve(p, x0);
  CHECK(a.status == b.status);
  CHECK(a.inner_iterations == b.inner_iterations);
  REQUIRE(a.final_vars.size() == b.final_vars.size());
  CHECK((a.final_vars.array() == b.final_vars.array()).all());
  CHECK(a.objective_history == b.objective_history);
}

TEST_CASE("non-finite objective stalls with a diagnostic") {
  NLPProblem p;
  p.n_vars = 1;
  p.objective = [](const VectorXd&, VectorXd*) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  const SolveReport r = nlp::solve(p, VectorXd::Zero(1));
  CHECK(r.status == SolveStatus::stalled);
  CHECK(!r.diagnostic.empty());
}

TEST_CASE("check_gradient") {
  // Quadratic form: central differences are exact up to rounding.
  Eigen::MatrixXd q(3, 3);
  q << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  nlp::Objective quad = [&q](const VectorXd& x, VectorXd* grad) {
    if (grad != nullptr) *grad += 2.0 * (q * x);
    return x.dot(q * x);
  };
  CHECK(nlp::check_gradient(quad, VectorXd::Constant(3, 0.4)) < 1e-8);

  nlp::Objective trig = [](const VectorXd& x, VectorXd* grad) {
    if (grad != nullptr) {
      (*grad)[0] += std::cos(x[0]) * std::exp(x[1]);
      (*grad)[1] += std::sin(x[0]) * std::exp(x[1]);
    }
    return std::sin(x[0]) * std::exp(x[1]);
  };
  VectorXd x(2);
  x << 0.3, -0.8;
  CHECK(nlp::check_gradient(trig, x) < 1e-8);

  nlp::Objective wrong = [](const VectorXd& x, VectorXd* grad) {
    if (grad != nullptr) (*grad)[0] += 3.0;  // should be 2 x
    return x[0] * x[0];
  };
  CHECK(nlp::check_gradient(wrong, VectorXd::Constant(1, 0.5)) > 1e-2);
}

TEST_CASE("iterate recording") {
  NLPProblem p = quadratic_with_pin(3);
  SolveOptions opts;
  opts.record = nlp::IterateRecording::inner;
  const SolveReport r = nlp::solve(p, VectorXd::Constant(3, 2.0), opts);
  CHECK(r.iterate_snapshots.size() == static_cast<std::size_t>(r.inner_iterations));
  CHECK(r.iterate_objectives.size() == r.iterate_snapshots.size());
}
