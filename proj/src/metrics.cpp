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

#include <cmath>
#include <stdexcept>

namespace rqoc::metrics {

using algebra::Complex;
using dynamics::ErrorChannel;

namespace {

constexpr Complex kMinusI(0.0, -1.0);

void require_controls_match(const ControlSystem& sys,
                            const ControlTrajectory& traj) {
  if (traj.u.cols() != sys.n_controls()) {
    throw std::invalid_argument("metrics: control count mismatch");
  }
}

const UnitaryTrajectory& ensure_rollout(const ControlSystem& sys,
                                        const ControlTrajectory& traj,
                                        const UnitaryTrajectory* precomputed,
                                        UnitaryTrajectory& storage) {
  if (precomputed != nullptr) {
    if (precomputed->n_knots() != traj.n_knots) {
      throw std::invalid_argument("metrics: rollout knot count mismatch");
    }
    return *precomputed;
  }
  storage = dynamics::rollout(sys, traj);
  return storage;
}

}  // namespace

int MetricConfig::default_oversample(int n_intervals) {
  if (n_intervals < 1) {
    throw std::invalid_argument("default_oversample: n_intervals < 1");
  }
  return (1024 + n_intervals - 1) / n_intervals;
}

void MetricConfig::validate() const {
  if (order_j < 0 || order_j > kMaxOrder) {
    throw std::invalid_argument("MetricConfig: order_j out of [0, 12]");
  }
  if (oversample < 0) {
    throw std::invalid_argument("MetricConfig: oversample < 0");
  }
}

double susceptibility_fine(const ControlSystem& sys,
                           const ControlTrajectory& traj,
                           const ErrorModel& err, int oversample,
                           const UnitaryTrajectory* precomputed) {
  traj.validate();
  require_controls_match(sys, traj);
  err.validate(traj.n_intervals(), sys.dim);
  if (oversample < 0) {
    throw std::invalid_argument("susceptibility_fine: oversample < 0");
  }
  int m = oversample == 0 ? MetricConfig::default_oversample(traj.n_intervals())
                          : oversample;
  if (m % 2 == 1) ++m;  // composite Simpson needs an even substep count

  UnitaryTrajectory storage;
  const UnitaryTrajectory& us = ensure_rollout(sys, traj, precomputed, storage);
  const double sub_dt = traj.dt / m;
  const int n_ch = err.n_channels();

  std::vector<CMatrix> accum(n_ch, CMatrix::Zero(sys.dim, sys.dim));
  std::vector<CMatrix> toggled(n_ch);
  for (int k = 0; k < traj.n_intervals(); ++k) {
    const CMatrix h = dynamics::hamiltonian_at(sys, traj.u.row(k));
    const CMatrix p_dag = algebra::expm(Complex(0.0, sub_dt) * h);
    for (int c = 0; c < n_ch; ++c) toggled[c] = err.channels[c].op_at(k);
    std::vector<CMatrix> integral(n_ch, CMatrix::Zero(sys.dim, sys.dim));
    for (int s = 0; s <= m; ++s) {
      const double w = (s == 0 || s == m) ? 1.0 : (s % 2 == 1 ? 4.0 : 2.0);
      for (int c = 0; c < n_ch; ++c) {
        integral[c] += w * toggled[c];
        if (s < m) toggled[c] = p_dag * toggled[c] * p_dag.adjoint();
      }
    }
    const CMatrix& u_k = us.knots[k];
    for (int c = 0; c < n_ch; ++c) {
      accum[c] += u_k.adjoint() * ((sub_dt / 3.0) * integral[c]) * u_k;
    }
  }

  const double tf2 = traj.t_f() * traj.t_f();
  double value = 0.0;
  for (int c = 0; c < n_ch; ++c) {
    const double w = err.channels[c].weight;
    value += w * w * algebra::hs_norm_sq(accum[c]) / tf2;
  }
  return value;
}

CMatrix toggling_term(const CMatrix& h_k, const CMatrix& e_k, int j,
                      double dt) {
  if (j < 0 || j > algebra::kMaxAdOrder) {
    throw std::invalid_argument("toggling_term: order out of range");
  }
  CMatrix ad = e_k;          // ad_H^n(E)
  Complex coeff(1.0, 0.0);   // i^n dt^n / (n+1)!
  CMatrix out = e_k;
  for (int n = 1; n <= j; ++n) {
    ad = algebra::commutator(h_k, ad);
    coeff *= Complex(0.0, dt) / static_cast<double>(n + 1);
    out += coeff * ad;
  }
  return out;
}

double susceptibility_toggling(const ControlSystem& sys,
                               const ControlTrajectory& traj,
                               const ErrorModel& err, int j,
                               const UnitaryTrajectory* precomputed) {
  traj.validate();
  require_controls_match(sys, traj);
  err.validate(traj.n_intervals(), sys.dim);
  UnitaryTrajectory storage;
  const UnitaryTrajectory& us = ensure_rollout(sys, traj, precomputed, storage);

  const int n_ch = err.n_channels();
  std::vector<CMatrix> accum(n_ch, CMatrix::Zero(sys.dim, sys.dim));
  for (int k = 0; k < traj.n_intervals(); ++k) {
    const bool need_h = j > 0;
    CMatrix h;
    if (need_h) h = dynamics::hamiltonian_at(sys, traj.u.row(k));
    const CMatrix& u_k = us.knots[k];
    for (int c = 0; c < n_ch; ++c) {
      const CMatrix& e_k = err.channels[c].op_at(k);
      const CMatrix corrected =
          need_h ? toggling_term(h, e_k, j, traj.dt) : e_k;
      accum[c] += traj.dt * (u_k.adjoint() * corrected * u_k);
    }
  }

  const double tf2 = traj.t_f() * traj.t_f();
  double value = 0.0;
  for (int c = 0; c < n_ch; ++c) {
    const double w = err.channels[c].weight;
    value += w * w * algebra::hs_norm_sq(accum[c]) / tf2;
  }
  return value;
}

CMatrix universal_term(const CMatrix& h_k, int j, double dt) {
  if (j < 0 || j > algebra::kMaxAdOrder) {
    throw std::invalid_argument("universal_term: order out of range");
  }
  const Eigen::Index d2 = h_k.rows() * h_k.rows();
  CMatrix out = CMatrix::Identity(d2, d2);
  if (j == 0) return out;
  const CMatrix l = algebra::kron_sum(kMinusI * h_k,
                                      Complex(0.0, 1.0) * h_k.conjugate());
  CMatrix power = CMatrix::Identity(d2, d2);
  double coeff = 1.0;  // dt^n / (n+1)!
  for (int n = 1; n <= j; ++n) {
    power = l * power;
    coeff *= dt / static_cast<double>(n + 1);
    out += coeff * power;
  }
  return out;
}

double susceptibility_universal(const ControlSystem& sys,
                                const ControlTrajectory& traj, int j,
                                const UnitaryTrajectory* precomputed) {
  traj.validate();
  require_controls_match(sys, traj);
  UnitaryTrajectory storage;
  const UnitaryTrajectory& us = ensure_rollout(sys, traj, precomputed, storage);

  const Eigen::Index d2 = sys.dim * sys.dim;
  CMatrix accum = CMatrix::Zero(d2, d2);
  for (int k = 0; k < traj.n_intervals(); ++k) {
    const CMatrix& u_k = us.knots[k];
    const CMatrix big = algebra::kron(u_k, u_k.conjugate());
    if (j == 0) {
      accum += traj.dt * big;
    } else {
      const CMatrix h = dynamics::hamiltonian_at(sys, traj.u.row(k));
      accum += universal_term(h, j, traj.dt) * (traj.dt * big);
    }
  }
  const double tf2 = traj.t_f() * traj.t_f();
  return algebra::hs_norm_sq(accum) / tf2;
}

double susceptibility_adjoint(const ControlSystem& sys,
                              const ControlTrajectory& traj,
                              const ErrorModel& err) {
  const dynamics::AdjointRollout joint = dynamics::adjoint_rollout(sys, traj, err);
  const CMatrix& u_final = joint.unitaries.final_unitary();
  const double tf2 = traj.t_f() * traj.t_f();
  double value = 0.0;
  for (const auto& per_channel : joint.sensitivities) {
    value += algebra::hs_norm_sq(u_final.adjoint() * per_channel.back()) / tf2;
  }
  return value;
}

std::vector<PauliSusceptibility> pauli_susceptibility_scan(
    const ControlSystem& sys, const ControlTrajectory& traj, int n_qubits) {
  if (sys.dim != (Eigen::Index(1) << n_qubits)) {
    throw std::invalid_argument(
        "pauli_susceptibility_scan: dim is not 2^n_qubits");
  }
  const auto strings = algebra::nontrivial_pauli_strings(n_qubits);
  ErrorModel all;
  all.channels.reserve(strings.size());
  for (const auto& s : strings) {
    all.channels.push_back(
        ErrorChannel{{algebra::pauli_string_matrix(s)}, 1.0, s.label()});
  }

  // One joint rollout shares the per-interval propagators across channels.
  const dynamics::AdjointRollout joint = dynamics::adjoint_rollout(sys, traj, all);
  const CMatrix& u_final = joint.unitaries.final_unitary();
  const double tf2 = traj.t_f() * traj.t_f();

  std::vector<PauliSusceptibility> out;
  out.reserve(strings.size());
  for (std::size_t c = 0; c < strings.size(); ++c) {
    const double hs =
        algebra::hs_norm_sq(u_final.adjoint() * joint.sensitivities[c].back());
    out.push_back({strings[c], hs / tf2});
  }
  return out;
}

}  // namespace rqoc::metrics
