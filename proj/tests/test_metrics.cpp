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

#include "rqoc/metrics.hpp"

#include "doctest.h"
#include "test_util.hpp"

using namespace rqoc;
using algebra::CMatrix;
using algebra::Complex;
using algebra::PauliString;
using dynamics::ControlSystem;
using dynamics::ControlTrajectory;
using dynamics::ErrorModel;
using rqoc::testing::rel_err;

namespace {

ControlSystem single_qubit_xyz() {
  ControlSystem sys;
  sys.dim = 2;
  sys.drift = CMatrix::Zero(2, 2);
  sys.controls = {algebra::pauli_matrix(algebra::Pauli::X),
                  algebra::pauli_matrix(algebra::Pauli::Y),
                  algebra::pauli_matrix(algebra::Pauli::Z)};
  return sys;
}

/// Controls scaled so dt * max_k ||H_k|| lands near `target`.
ControlTrajectory random_scaled_trajectory(std::mt19937_64& gen,
                                           const ControlSystem& sys,
                                           int n_knots, double dt,
                                           double target) {
  ControlTrajectory traj = ControlTrajectory::zeros(n_knots, dt, sys.n_controls());
  for (int k = 0; k < n_knots; ++k) {
    for (int j = 0; j < sys.n_controls(); ++j) {
      traj.u(k, j) = testing::urand(gen);
    }
  }
  double max_norm = 0.0;
  for (int k = 0; k < n_knots - 1; ++k) {
    max_norm = std::max(
        max_norm, dynamics::hamiltonian_at(sys, traj.u.row(k)).operatorNorm());
  }
  traj.u *= target / (dt * max_norm);
  return traj;
}

ErrorModel z_error() { return ErrorModel::from_pauli(PauliString::parse("Z")); }

/// Quadrature reference for int_0^dt exp(iHt) E exp(-iHt) dt, built from
/// plain matrix exponentials (independent of the series path under test).
CMatrix toggled_integral_quadrature(const CMatrix& h, const CMatrix& e,
                                    double dt, int panels) {
  CMatrix sum = CMatrix::Zero(e.rows(), e.cols());
  const double step = dt / panels;
  for (int s = 0; s <= panels; ++s) {
    const double w = (s == 0 || s == panels) ? 1.0 : (s % 2 == 1 ? 4.0 : 2.0);
    const CMatrix u = algebra::expm(Complex(0, s * step) * h);
    sum += w * (u * e * u.adjoint());
  }
  return (step / 3.0) * sum;
}

}  // namespace

TEST_CASE("fine susceptibility of a free system is one") {
  const ControlSystem sys = single_qubit_xyz();
  for (int n : {2, 9, 33}) {
    const ControlTrajectory traj = ControlTrajectory::zeros(n, 0.7, 3);
    CHECK(metrics::susceptibility_fine(sys, traj, z_error(), 64) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("constant pi pulse about X echoes away a Z error") {
  const ControlSystem sys = single_qubit_xyz();
  const int n = 11;
  const double dt = 1.0;
  ControlTrajectory traj = ControlTrajectory::zeros(n, dt, 3);
  traj.u.col(0).setConstant(M_PI / traj.t_f());

  CHECK(metrics::susceptibility_fine(sys, traj, z_error(), 4096) < 1e-10);
  CHECK(metrics::susceptibility_adjoint(sys, traj, z_error()) < 1e-10);
}

TEST_CASE("fine agrees with the adjoint estimator on random controls") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(101);
  for (int trial = 0; trial < 5; ++trial) {
    const ControlTrajectory traj =
        random_scaled_trajectory(gen, sys, 16, 1.0, 0.5 + 0.1 * trial);
    const double fine =
        metrics::susceptibility_fine(sys, traj, z_error(), 1024 / 15 + 1);
    const double adj = metrics::susceptibility_adjoint(sys, traj, z_error());
    CHECK(rel_err(fine, adj) < 1e-6);
  }
}

TEST_CASE("toggling correction term") {
  const CMatrix x = algebra::pauli_matrix(algebra::Pauli::X);
  const CMatrix z = algebra::pauli_matrix(algebra::Pauli::Z);
  std::mt19937_64 gen(7);
  const CMatrix h = testing::random_hermitian(gen, 2);

  CHECK(rel_err(metrics::toggling_term(h, z, 0, 0.5), z) == 0.0);

  // Commuting pair: every correction vanishes.
  for (int j : {1, 4, 9}) {
    CHECK(rel_err(metrics::toggling_term(z, z, j, 0.8), z) < 1e-15);
  }

  // j = 1 adds (i dt / 2) [H, E].
  const double dt = 0.3;
  const CMatrix want = z + Complex(0, dt / 2.0) * algebra::commutator(h, z);
  CHECK(rel_err(metrics::toggling_term(h, z, 1, dt), want) < 1e-15);

  // High-order truncation reproduces the averaged toggled integral.
  for (int trial = 0; trial < 5; ++trial) {
    const CMatrix hh = testing::random_hermitian(gen, 2, 1.0);
    const double step = 1.0 / std::max(1.0, hh.operatorNorm());
    const CMatrix ref =
        toggled_integral_quadrature(hh, x, step, 512) / step;
    CHECK(rel_err(metrics::toggling_term(hh, x, 30, step), ref) < 1e-8);
  }
}

TEST_CASE("toggling estimator basics and convergence") {
  const ControlSystem sys = single_qubit_xyz();
  for (int j : {0, 3, 8}) {
    const ControlTrajectory traj = ControlTrajectory::zeros(12, 0.9, 3);
    CHECK(metrics::susceptibility_toggling(sys, traj, z_error(), j) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  std::mt19937_64 gen(301);
  const ControlTrajectory traj =
      random_scaled_trajectory(gen, sys, 16, 1.0, 1.0);
  const double fine = metrics::susceptibility_fine(sys, traj, z_error(), 512);
  const double t0 = metrics::susceptibility_toggling(sys, traj, z_error(), 0);
  const double t4 = metrics::susceptibility_toggling(sys, traj, z_error(), 4);
  CHECK(std::abs(t4 - fine) < std::abs(t0 - fine));
}

TEST_CASE("zeroth-order toggling approaches fine as knots double") {
  const ControlSystem sys = single_qubit_xyz();
  const double t_f = 32.0;
  double prev_gap = std::numeric_limits<double>::infinity();
  for (int n : {32, 64, 128, 256}) {
    const double dt = t_f / (n - 1);
    ControlTrajectory traj = ControlTrajectory::zeros(n, dt, 3);
    for (int k = 0; k < n; ++k) {
      const double t = k * dt / t_f;  // same smooth pulse sampled finer
      traj.u(k, 0) = 0.54 * std::sin(2.0 * M_PI * t);
      traj.u(k, 1) = 0.30 * std::cos(2.0 * M_PI * t);
      traj.u(k, 2) = 0.24 * std::sin(4.0 * M_PI * t);
    }
    const double fine = metrics::susceptibility_fine(sys, traj, z_error(), 0);
    const double t0 = metrics::susceptibility_toggling(sys, traj, z_error(), 0);
    const double gap = std::abs(t0 - fine);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
}

TEST_CASE("universal correction term") {
  std::mt19937_64 gen(11);
  const CMatrix h = testing::random_hermitian(gen, 2);
  CHECK(rel_err(metrics::universal_term(h, 0, 0.4),
                CMatrix(CMatrix::Identity(4, 4))) == 0.0);
  CHECK(rel_err(metrics::universal_term(CMatrix(CMatrix::Zero(2, 2)), 7, 0.4),
                CMatrix(CMatrix::Identity(4, 4))) == 0.0);

  // Closed form phi_1(dt L) = (exp(dt L) - I) (dt L)^{-1}.
  for (int trial = 0; trial < 5; ++trial) {
    const CMatrix hh = testing::random_hermitian(gen, 2, 1.0);
    const double dt = 0.9 / std::max(1.0, hh.operatorNorm());
    const CMatrix l = algebra::kron_sum(Complex(0, -1) * hh,
                                        Complex(0, 1) * hh.conjugate());
    const CMatrix dl = dt * l;
    if (std::abs(dl.determinant()) < 1e-8) continue;
    const CMatrix phi1 =
        (algebra::expm(dl) - CMatrix::Identity(4, 4)) * dl.inverse();
    CHECK(rel_err(metrics::universal_term(hh, 30, dt), phi1) < 1e-8);
  }
}

TEST_CASE("universal susceptibility of a free system is one") {
  const ControlSystem sys = single_qubit_xyz();
  const ControlTrajectory traj = ControlTrajectory::zeros(9, 0.8, 3);
  for (int j : {0, 2}) {
    CHECK(metrics::susceptibility_universal(sys, traj, j) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("universal estimator converges to its oversampled integral") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(401);
  const ControlTrajectory traj =
      random_scaled_trajectory(gen, sys, 12, 0.8, 0.5);

  // Oversampled reference built directly from sub-interval exponentials.
  const auto us = dynamics::rollout(sys, traj);
  const int m = 128;
  CMatrix k_fine = CMatrix::Zero(4, 4);
  for (int k = 0; k < traj.n_intervals(); ++k) {
    const CMatrix h = dynamics::hamiltonian_at(sys, traj.u.row(k));
    const double step = traj.dt / m;
    for (int s = 0; s <= m; ++s) {
      const double w = (s == 0 || s == m) ? 1.0 : (s % 2 == 1 ? 4.0 : 2.0);
      const CMatrix u = algebra::expm(Complex(0, -1) * (s * step) * h) * us.knots[k];
      k_fine += (w * step / 3.0) * algebra::kron(u, u.conjugate());
    }
  }
  const double reference =
      algebra::hs_norm_sq(k_fine) / (traj.t_f() * traj.t_f());
  const double got = metrics::susceptibility_universal(sys, traj, 8);
  CHECK(rel_err(got, reference) < 1e-4);
}

TEST_CASE("universal bound holds in raw norms") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(501);
  for (int t = 0; t < 3; ++t) {
    const ControlTrajectory traj =
        random_scaled_trajectory(gen, sys, 14, 0.9, 0.8);
    const double eu_raw =
        4.0 * metrics::susceptibility_universal(sys, traj, 12);  // d^2 = 4
    for (int i = 0; i < 100; ++i) {
      const CMatrix e = testing::random_hermitian(gen, 2);
      const double raw_susceptibility =
          2.0 *
          metrics::susceptibility_adjoint(sys, traj, ErrorModel::single(e));
      const double vec_norm_sq = e.squaredNorm();
      CHECK(raw_susceptibility <= eu_raw * vec_norm_sq + 1e-10);
    }
  }
}

TEST_CASE("adjoint estimator equals high-order toggling") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(601);
  CHECK(metrics::susceptibility_adjoint(
            sys, ControlTrajectory::zeros(6, 0.5, 3),
            ErrorModel::single(CMatrix::Zero(2, 2))) == 0.0);
  for (int t = 0; t < 5; ++t) {
    const ControlTrajectory traj =
        random_scaled_trajectory(gen, sys, 12, 0.8, 0.5);
    const double adj = metrics::susceptibility_adjoint(sys, traj, z_error());
    const double t12 =
        metrics::susceptibility_toggling(sys, traj, z_error(), 12);
    CHECK(rel_err(t12, adj) < 1e-8);
  }
}

TEST_CASE("order-j residual decays toward the adjoint value") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(701);
  for (int t = 0; t < 5; ++t) {
    const ControlTrajectory traj =
        random_scaled_trajectory(gen, sys, 16, 1.0, 1.0);
    const double adj = metrics::susceptibility_adjoint(sys, traj, z_error());
    double prev = std::numeric_limits<double>::infinity();
    for (int j : {0, 2, 4, 8}) {
      const double gap = std::abs(
          metrics::susceptibility_toggling(sys, traj, z_error(), j) - adj);
      CHECK(gap <= prev + 1e-18);
      prev = gap;
    }
  }
}

TEST_CASE("scaling the error scales every estimator by c^2 exactly") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(801);
  const ControlTrajectory traj =
      random_scaled_trajectory(gen, sys, 10, 0.8, 0.7);
  const CMatrix z = algebra::pauli_matrix(algebra::Pauli::Z);
  const ErrorModel one = ErrorModel::single(z, 1.0);
  const ErrorModel two = ErrorModel::single(z, 2.0);

  CHECK(metrics::susceptibility_fine(sys, traj, two, 256) ==
        4.0 * metrics::susceptibility_fine(sys, traj, one, 256));
  for (int j : {0, 3}) {
    CHECK(metrics::susceptibility_toggling(sys, traj, two, j) ==
          4.0 * metrics::susceptibility_toggling(sys, traj, one, j));
  }
  CHECK(metrics::susceptibility_adjoint(sys, traj, two) ==
        4.0 * metrics::susceptibility_adjoint(sys, traj, one));
}

TEST_CASE("every estimator ignores a drift shift by the identity") {
  // H -> H + cI multiplies every U_k by a global phase, which all four
  // estimators must ignore.
  ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(901);
  const ControlTrajectory traj =
      random_scaled_trajectory(gen, sys, 12, 0.7, 0.8);
  ControlSystem shifted = sys;
  shifted.drift = sys.drift + 0.37 * CMatrix::Identity(2, 2);

  const ErrorModel err = z_error();
  CHECK(rel_err(metrics::susceptibility_fine(shifted, traj, err, 512),
                metrics::susceptibility_fine(sys, traj, err, 512)) < 1e-10);
  CHECK(rel_err(metrics::susceptibility_toggling(shifted, traj, err, 4),
                metrics::susceptibility_toggling(sys, traj, err, 4)) < 1e-10);
  CHECK(rel_err(metrics::susceptibility_universal(shifted, traj, 2),
                metrics::susceptibility_universal(sys, traj, 2)) < 1e-10);
  CHECK(rel_err(metrics::susceptibility_adjoint(shifted, traj, err),
                metrics::susceptibility_adjoint(sys, traj, err)) < 1e-10);
}

TEST_CASE("time-dependent error channels flow through toggling and adjoint") {
  const ControlSystem sys = single_qubit_xyz();
  std::mt19937_64 gen(1001);
  const int n = 9;
  const ControlTrajectory traj =
      random_scaled_trajectory(gen, sys, n, 0.6, 0.6);

  dynamics::ErrorChannel seq;
  seq.weight = 1.0;
  const CMatrix z = algebra::pauli_matrix(algebra::Pauli::Z);
  for (int k = 0; k < n - 1; ++k) {
    seq.ops.push_back(std::cos(0.3 * k) * z);
  }
  ErrorModel err;
  err.channels.push_back(seq);

  const double adj = metrics::susceptibility_adjoint(sys, traj, err);
  const double t12 = metrics::susceptibility_toggling(sys, traj, err, 12);
  CHECK(rel_err(t12, adj) < 1e-8);
  const double fine = metrics::susceptibility_fine(sys, traj, err, 512);
  CHECK(rel_err(fine, adj) < 1e-6);
}

TEST_CASE("pauli susceptibility scan") {
  const ControlSystem sys = single_qubit_xyz();
  const ControlTrajectory idle = ControlTrajectory::zeros(6, 0.5, 3);
  const auto rows = metrics::pauli_susceptibility_scan(sys, idle, 1);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.value == doctest::Approx(1.0));

  // Pure X drive: the toggled frame leaves X errors untouched.
  ControlTrajectory xdrive = ControlTrajectory::zeros(8, 0.5, 3);
  xdrive.u.col(0).setConstant(0.6);
  const auto xrows = metrics::pauli_susceptibility_scan(sys, xdrive, 1);
  CHECK(xrows[0].op.label() == "X");
  CHECK(xrows[0].value == doctest::Approx(1.0).epsilon(1e-10));

  // Two-qubit scan covers all 15 strings.
  ControlSystem two;
  two.dim = 4;
  two.drift = CMatrix::Zero(4, 4);
  two.controls = {algebra::pauli_string_matrix(PauliString::parse("XI")),
                  algebra::pauli_string_matrix(PauliString::parse("IZ"))};
  ControlTrajectory t2 = ControlTrajectory::zeros(5, 0.4, 2);
  t2.u.setConstant(0.3);
  CHECK(metrics::pauli_susceptibility_scan(two, t2, 2).size() == 15);

  CHECK_THROWS_AS(metrics::pauli_susceptibility_scan(two, t2, 1),
                  std::invalid_argument);
}

TEST_CASE("metric config defaults") {
  CHECK(metrics::MetricConfig::default_oversample(15) == 69);
  CHECK(metrics::MetricConfig::default_oversample(1024) == 1);
  metrics::MetricConfig bad;
  bad.order_j = 13;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
