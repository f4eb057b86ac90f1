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

#include "rqoc/trajopt.hpp"

#include <cmath>

#include "doctest.h"
#include "rqoc/metrics.hpp"
#include "test_util.hpp"

using namespace rqoc;
using algebra::CMatrix;
using algebra::Complex;
using algebra::PauliString;
using dynamics::ControlTrajectory;
using dynamics::ErrorModel;
using Eigen::VectorXd;
using trajopt::Formulation;
using trajopt::ObjectiveKind;
using trajopt::ProblemSpec;

namespace {

ProblemSpec hadamard_spec() {
  ProblemSpec spec;
  spec.system.dim = 2;
  spec.system.drift = CMatrix::Zero(2, 2);
  spec.system.controls = {algebra::pauli_matrix(algebra::Pauli::X),
                          algebra::pauli_matrix(algebra::Pauli::Y),
                          algebra::pauli_matrix(algebra::Pauli::Z)};
  spec.system.labels = {"x", "y", "z"};
  CMatrix goal(2, 2);
  const double s = 1.0 / std::sqrt(2.0);
  goal << s, s, s, -s;
  spec.target.goal = goal;
  spec.n_knots = 40;
  spec.dt = 0.8;
  spec.error = ErrorModel::from_pauli(PauliString::parse("Z"));
  spec.bounds = trajopt::ControlBounds::uniform(3, 1.0, 1.0, 2.0);
  spec.q_weight = 1.0;
  spec.r_weight = 1.0;
  return spec;
}

ProblemSpec small_spec(ObjectiveKind kind, int order_j,
                       Formulation formulation) {
  ProblemSpec spec = hadamard_spec();
  spec.n_knots = 6;
  spec.dt = 0.7;
  spec.objective = kind;
  spec.order_j = order_j;
  spec.formulation = formulation;
  spec.fidelity_min = 0.9;
  return spec;
}

VectorXd noisy_point(const ProblemSpec& spec,
                     const trajopt::VariableLayout& layout, std::uint64_t seed,
                     double noise) {
  VectorXd x = trajopt::initialize(spec, layout, seed);
  std::mt19937_64 gen(seed * 7 + 1);
  for (int i = 0; i < x.size(); ++i) x[i] += noise * testing::urand(gen);
  return x;
}

nlp::Objective constraint_probe(nlp::ConstraintBlock block, VectorXd y) {
  return [block = std::move(block), y = std::move(y)](const VectorXd& x,
                                                      VectorXd* grad) {
    VectorXd c(block.dim);
    block.eval(x, c);
    if (grad != nullptr) block.add_jtv(x, y, *grad);
    return y.dot(c);
  };
}

double max_block_violation(const nlp::NLPProblem& problem, const VectorXd& x,
                           const std::string& name) {
  for (const auto& b : problem.eq_constraints) {
    if (b.name != name) continue;
    VectorXd c(b.dim);
    b.eval(x, c);
    return c.cwiseAbs().maxCoeff();
  }
  FAIL("no such block: ", name);
  return 0.0;
}

}  // namespace

TEST_CASE("regularization values") {
  ControlTrajectory traj = ControlTrajectory::zeros(5, 0.5, 3);
  CHECK(trajopt::regularization(traj) == 0.0);
  traj.u(2, 0) = 1.0;
  CHECK(trajopt::regularization(traj) == doctest::Approx(1.0));
  traj.du(1, 2) = 2.0;
  traj.ddu(0, 1) = -1.0;
  CHECK(trajopt::regularization(traj) == doctest::Approx(6.0));
}

TEST_CASE("variable layout blocks are disjoint and exhaustive") {
  ProblemSpec spec = small_spec(ObjectiveKind::adjoint, 0, Formulation::direct);
  const auto layout = trajopt::VariableLayout::create(spec);
  std::vector<int> hits(layout.n_vars, 0);
  for (int k = 0; k < layout.n_knots; ++k) {
    for (int i = 0; i < layout.matrix_size(); ++i) {
      ++hits[layout.state_offset(k) + i];
    }
    for (int c = 0; c < layout.n_state_channels; ++c) {
      for (int i = 0; i < layout.matrix_size(); ++i) {
        ++hits[layout.sensitivity_offset(c, k) + i];
      }
    }
    for (int j = 0; j < layout.n_controls; ++j) {
      ++hits[layout.u_index(k, j)];
      ++hits[layout.du_index(k, j)];
      if (k < layout.n_knots - 1) ++hits[layout.ddu_index(k, j)];
    }
  }
  for (int h : hits) CHECK(h == 1);

  const auto indirect_layout = trajopt::VariableLayout::create(
      small_spec(ObjectiveKind::adjoint, 0, Formulation::indirect));
  CHECK(indirect_layout.state_stride == 0);
  CHECK(indirect_layout.n_vars == (3 * 6) + (3 * 6) + (3 * 5));  // u, du, ddu
}

TEST_CASE("identity target with zero initialization converges immediately") {
  ProblemSpec spec = hadamard_spec();
  spec.n_knots = 8;
  spec.target.goal = CMatrix::Identity(2, 2);
  spec.fidelity_min = 0.9999;
  spec.objective = ObjectiveKind::none;
  spec.q_weight = 0.0;

  const auto built = trajopt::build_direct(spec);
  const VectorXd x0 = trajopt::pack_from_rollout(
      spec, built.layout, ControlTrajectory::zeros(8, spec.dt, 3));
  const auto report = nlp::solve(built.problem, x0);
  CHECK(report.status == nlp::SolveStatus::converged);
  const ControlTrajectory sol =
      trajopt::extract_controls(report.final_vars, built.layout, spec.dt);
  CHECK(sol.u.cwiseAbs().maxCoeff() < 1e-6);
  const CMatrix u_final = trajopt::read_cmatrix(
      report.final_vars, built.layout.state_offset(7), 2);
  CHECK(dynamics::fidelity(u_final, spec.target) ==
        doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("rollout-consistent points satisfy the dynamics constraints") {
  for (ObjectiveKind kind : {ObjectiveKind::toggling, ObjectiveKind::adjoint}) {
    ProblemSpec spec = small_spec(kind, 0, Formulation::direct);
    const auto built = trajopt::build_direct(spec);
    std::mt19937_64 gen(5);
    ControlTrajectory traj = ControlTrajectory::zeros(6, spec.dt, 3);
    for (int k = 0; k < 6; ++k) {
      for (int j = 0; j < 3; ++j) traj.u(k, j) = 0.4 * testing::urand(gen);
    }
    const VectorXd x = trajopt::pack_from_rollout(spec, built.layout, traj);
    CHECK(max_block_violation(built.problem, x, "dynamics") < 1e-12);
    CHECK(max_block_violation(built.problem, x, "initial_conditions") < 1e-12);
    if (kind == ObjectiveKind::adjoint) {
      CHECK(max_block_violation(built.problem, x, "sensitivity_dynamics") <
            1e-12);
    }
  }
}

TEST_CASE("initialize is deterministic, boxed and rollout-consistent") {
  ProblemSpec spec = small_spec(ObjectiveKind::adjoint, 0, Formulation::direct);
  const auto built = trajopt::build_direct(spec);
  const VectorXd a = trajopt::initialize(spec, built.layout, 42);
  const VectorXd b = trajopt::initialize(spec, built.layout, 42);
  CHECK((a.array() == b.array()).all());
  const VectorXd c = trajopt::initialize(spec, built.layout, 43);
  CHECK((a - c).cwiseAbs().maxCoeff() > 1e-6);

  CHECK(max_block_violation(built.problem, a, "dynamics") < 1e-12);
  CHECK(max_block_violation(built.problem, a, "sensitivity_dynamics") < 1e-12);

  const ControlTrajectory traj =
      trajopt::extract_controls(a, built.layout, spec.dt);
  CHECK(traj.u.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(traj.u.cwiseAbs().maxCoeff() >= 0.25);  // scaled to half the cap
  CHECK(traj.du.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(traj.ddu.cwiseAbs().maxCoeff() <= 2.0);
}

TEST_CASE("direct and indirect objectives agree at rollout-consistent points") {
  std::mt19937_64 gen(9);
  for (ObjectiveKind kind : {ObjectiveKind::toggling, ObjectiveKind::universal,
                             ObjectiveKind::adjoint}) {
    for (int order_j : {0, 2}) {
      if (kind == ObjectiveKind::adjoint && order_j > 0) continue;
      ProblemSpec spec = small_spec(kind, order_j, Formulation::direct);
      const auto direct = trajopt::build_direct(spec);
      ProblemSpec ispec = spec;
      ispec.formulation = Formulation::indirect;
      const auto indirect = trajopt::build_indirect(ispec);

      ControlTrajectory traj = ControlTrajectory::zeros(6, spec.dt, 3);
      for (int k = 0; k < 6; ++k) {
        for (int j = 0; j < 3; ++j) traj.u(k, j) = 0.5 * testing::urand(gen);
      }
      const VectorXd xd = trajopt::pack_from_rollout(spec, direct.layout, traj);
      const VectorXd xi =
          trajopt::pack_from_rollout(ispec, indirect.layout, traj);
      const double fd = direct.problem.objective(xd, nullptr);
      const double fi = indirect.problem.objective(xi, nullptr);
      CHECK(std::abs(fd - fi) < 1e-10 * std::max(1.0, std::abs(fi)));
    }
  }
}

TEST_CASE("objective gradients pass the finite-difference check") {
  for (Formulation form : {Formulation::direct, Formulation::indirect}) {
    for (auto [kind, order_j] : std::vector<std::pair<ObjectiveKind, int>>{
             {ObjectiveKind::toggling, 0},
             {ObjectiveKind::toggling, 3},
             {ObjectiveKind::universal, 0},
             {ObjectiveKind::universal, 2},
             {ObjectiveKind::adjoint, 0}}) {
      ProblemSpec spec = small_spec(kind, order_j, form);
      const auto built = trajopt::build(spec);
      for (std::uint64_t seed : {1, 2}) {
        const VectorXd x = noisy_point(spec, built.layout, seed, 0.05);
        const double err = nlp::check_gradient(built.problem.objective, x);
        INFO("form=", static_cast<int>(form), " kind=", static_cast<int>(kind),
             " j=", order_j, " seed=", seed);
        CHECK(err < 1e-5);
      }
    }
  }
}

TEST_CASE("constraint jacobian transposes pass the finite-difference check") {
  std::mt19937_64 gen(77);
  for (Formulation form : {Formulation::direct, Formulation::indirect}) {
    ProblemSpec spec = small_spec(ObjectiveKind::adjoint, 0, form);
    const auto built = trajopt::build(spec);
    for (const auto& block : built.problem.eq_constraints) {
      VectorXd y(block.dim);
      for (int i = 0; i < block.dim; ++i) y[i] = testing::urand(gen);
      const auto probe = constraint_probe(block, y);
      const VectorXd x = noisy_point(spec, built.layout, 3, 0.05);
      INFO("block=", block.name);
      CHECK(nlp::check_gradient(probe, x) < 1e-5);
    }
    for (const auto& block : built.problem.ineq_constraints) {
      VectorXd y(block.dim);
      for (int i = 0; i < block.dim; ++i) y[i] = testing::urand(gen);
      const auto probe = constraint_probe(block, y);
      const VectorXd x = noisy_point(spec, built.layout, 4, 0.05);
      INFO("ineq block=", block.name);
      CHECK(nlp::check_gradient(probe, x) < 1e-5);
    }
  }
}

TEST_CASE("indirect infidelity is stationary at the identity target") {
  ProblemSpec spec = small_spec(ObjectiveKind::adjoint, 0, Formulation::indirect);
  spec.target.goal = CMatrix::Identity(2, 2);
  spec.fidelity_min = 0.9999;
  const auto built = trajopt::build_indirect(spec);
  const VectorXd x0 = trajopt::pack_from_rollout(
      spec, built.layout, ControlTrajectory::zeros(6, spec.dt, 3));

  const auto& fid = built.problem.ineq_constraints.front();
  VectorXd g(fid.dim);
  fid.eval(x0, g);
  CHECK(g[0] <= 0.0);  // feasible: F = 1
  VectorXd grad = VectorXd::Zero(built.layout.n_vars);
  VectorXd y = VectorXd::Ones(1);
  fid.add_jtv(x0, y, grad);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("universal objective rejects time-dependent error models") {
  ProblemSpec spec = small_spec(ObjectiveKind::universal, 0, Formulation::direct);
  dynamics::ErrorChannel seq;
  const CMatrix z = algebra::pauli_matrix(algebra::Pauli::Z);
  for (int k = 0; k < spec.n_intervals(); ++k) seq.ops.push_back(0.5 * z);
  spec.error.channels = {seq};
  CHECK_THROWS_AS(trajopt::build_direct(spec), std::invalid_argument);

  spec.objective = ObjectiveKind::toggling;
  CHECK_NOTHROW(trajopt::build_direct(spec));
}

TEST_CASE("solved hadamard meets the fidelity threshold") {
  ProblemSpec spec = hadamard_spec();
  spec.objective = ObjectiveKind::adjoint;
  spec.fidelity_min = 0.9999;
  spec.formulation = Formulation::direct;

  const auto built = trajopt::build_direct(spec);
  const VectorXd x0 = trajopt::initialize(spec, built.layout, 11);
  nlp::SolveOptions opts;
  opts.max_inner = 400;
  const auto report = nlp::solve(built.problem, x0, opts);
  CHECK(report.status == nlp::SolveStatus::converged);
  CHECK(report.final_violation < 1e-6);

  const ControlTrajectory sol =
      trajopt::extract_controls(report.final_vars, built.layout, spec.dt);
  const auto us = dynamics::rollout(spec.system, sol);
  const double fid = dynamics::fidelity(us.final_unitary(), spec.target);
  CHECK(fid >= 0.9999 - 1e-6);

  // Optimizing the adjoint objective should beat the no-drive baseline
  // (susceptibility 1) by a wide margin.
  const double e_v =
      metrics::susceptibility_adjoint(spec.system, sol, spec.error);
  CHECK(e_v < 0.1);

  CHECK(sol.du.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
  CHECK(sol.ddu.cwiseAbs().maxCoeff() <= 2.0 + 1e-9);
}

TEST_CASE("analyze_iterates reports maxima from recorded snapshots") {
  ProblemSpec spec = small_spec(ObjectiveKind::adjoint, 0, Formulation::direct);
  const auto built = trajopt::build_direct(spec);
  const VectorXd x0 = trajopt::initialize(spec, built.layout, 8);
  nlp::SolveOptions opts;
  opts.record = nlp::IterateRecording::inner;
  opts.max_outer = 6;
  const auto report = nlp::solve(built.problem, x0, opts);
  REQUIRE(!report.iterate_snapshots.empty());
  const auto stats = trajopt::analyze_iterates(report, spec, built.layout);
  CHECK(stats.size() == report.iterate_snapshots.size());
  for (const auto& s : stats) {
    CHECK(s.max_du <= 1.0 + 1e-9);  // projection keeps iterates boxed
    CHECK(s.max_ddu <= 2.0 + 1e-9);
    CHECK(s.fidelity >= 0.0);
    CHECK(s.fidelity <= 1.0 + 1e-12);
  }

  nlp::SolveReport empty;
  CHECK_THROWS_AS(trajopt::analyze_iterates(empty, spec, built.layout),
                  std::invalid_argument);
}
