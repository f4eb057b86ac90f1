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

#include "rqoc/dynamics.hpp"

#include <stdexcept>

namespace rqoc::dynamics {

using algebra::Complex;

void ControlSystem::validate() const {
  if (dim < 1) throw std::invalid_argument("ControlSystem: dim < 1");
  if (drift.rows() != dim || drift.cols() != dim) {
    throw std::invalid_argument("ControlSystem: drift dimension mismatch");
  }
  if (!algebra::is_hermitian(drift, 1e-12)) {
    throw std::invalid_argument("ControlSystem: drift not Hermitian");
  }
  for (const CMatrix& h : controls) {
    if (h.rows() != dim || h.cols() != dim) {
      throw std::invalid_argument("ControlSystem: control dimension mismatch");
    }
    if (!algebra::is_hermitian(h, 1e-12)) {
      throw std::invalid_argument("ControlSystem: control not Hermitian");
    }
  }
  if (!labels.empty() && labels.size() != controls.size()) {
    throw std::invalid_argument("ControlSystem: label count mismatch");
  }
}

ControlTrajectory ControlTrajectory::zeros(int n_knots, double dt,
                                           int n_controls) {
  ControlTrajectory t;
  t.n_knots = n_knots;
  t.dt = dt;
  t.u = Eigen::MatrixXd::Zero(n_knots, n_controls);
  t.du = Eigen::MatrixXd::Zero(n_knots, n_controls);
  t.ddu = Eigen::MatrixXd::Zero(n_knots - 1, n_controls);
  return t;
}

void ControlTrajectory::validate() const {
  if (n_knots < 2) throw std::invalid_argument("ControlTrajectory: n_knots < 2");
  if (!(dt > 0.0)) throw std::invalid_argument("ControlTrajectory: dt <= 0");
  if (u.rows() != n_knots || du.rows() != n_knots ||
      ddu.rows() != n_knots - 1) {
    throw std::invalid_argument("ControlTrajectory: row count mismatch");
  }
  if (u.cols() != du.cols() || u.cols() != ddu.cols()) {
    throw std::invalid_argument("ControlTrajectory: column count mismatch");
  }
  if (!u.allFinite() || !du.allFinite() || !ddu.allFinite()) {
    throw std::invalid_argument("ControlTrajectory: non-finite entries");
  }
}

void GateTarget::validate() const {
  if (!algebra::is_unitary(goal, 1e-10)) {
    throw std::invalid_argument("GateTarget: goal is not unitary");
  }
}

void ErrorChannel::validate(int n_intervals, Eigen::Index dim) const {
  if (ops.empty()) throw std::invalid_argument("ErrorChannel: no operators");
  if (!is_static() && static_cast<int>(ops.size()) != n_intervals) {
    throw std::invalid_argument(
        "ErrorChannel: sequence length must equal the interval count");
  }
  for (const CMatrix& e : ops) {
    if (e.rows() != dim || e.cols() != dim) {
      throw std::invalid_argument("ErrorChannel: dimension mismatch");
    }
    if (!algebra::is_hermitian(e, 1e-12)) {
      throw std::invalid_argument("ErrorChannel: operator not Hermitian");
    }
  }
}

bool ErrorModel::is_static() const {
  for (const auto& c : channels) {
    if (!c.is_static()) return false;
  }
  return true;
}

void ErrorModel::validate(int n_intervals, Eigen::Index dim) const {
  for (const auto& c : channels) c.validate(n_intervals, dim);
}

ErrorModel ErrorModel::single(CMatrix op, double weight, std::string label) {
  ErrorModel m;
  m.channels.push_back(ErrorChannel{{std::move(op)}, weight, std::move(label)});
  return m;
}

ErrorModel ErrorModel::from_pauli(const algebra::PauliString& p,
                                  double weight) {
  return single(algebra::pauli_string_matrix(p), weight, p.label());
}

CMatrix hamiltonian_at(const ControlSystem& sys,
                       const Eigen::Ref<const Eigen::VectorXd>& u_k) {
  if (u_k.size() != sys.n_controls()) {
    throw std::invalid_argument("hamiltonian_at: control length mismatch");
  }
  CMatrix h = sys.drift;
  for (int j = 0; j < sys.n_controls(); ++j) h += u_k[j] * sys.controls[j];
  return h;
}

CMatrix step_propagator(const ControlSystem& sys,
                        const Eigen::Ref<const Eigen::VectorXd>& u_k,
                        double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_propagator: dt <= 0");
  const Complex minus_i(0.0, -1.0);
  return algebra::expm(minus_i * dt * hamiltonian_at(sys, u_k));
}

UnitaryTrajectory rollout(const ControlSystem& sys,
                          const ControlTrajectory& traj) {
  traj.validate();
  if (traj.u.cols() != sys.n_controls()) {
    throw std::invalid_argument("rollout: control count mismatch");
  }
  UnitaryTrajectory out;
  out.dt = traj.dt;
  out.t_f = traj.t_f();
  out.knots.reserve(traj.n_knots);
  out.knots.push_back(CMatrix::Identity(sys.dim, sys.dim));
  for (int k = 0; k < traj.n_intervals(); ++k) {
    const CMatrix f = step_propagator(sys, traj.u.row(k), traj.dt);
    out.knots.push_back(f * out.knots.back());
  }
  return out;
}

double fidelity(const CMatrix& u_final, const GateTarget& target) {
  if (u_final.rows() != target.goal.rows() ||
      u_final.cols() != target.goal.cols()) {
    throw std::invalid_argument("fidelity: dimension mismatch");
  }
  const Complex overlap = (u_final.adjoint() * target.goal).trace();
  return std::abs(overlap) / static_cast<double>(u_final.rows());
}

AdjointRollout adjoint_rollout(const ControlSystem& sys,
                               const ControlTrajectory& traj,
                               const ErrorModel& err) {
  traj.validate();
  err.validate(traj.n_intervals(), sys.dim);
  const Complex minus_i(0.0, -1.0);
  const Eigen::Index d = sys.dim;

  AdjointRollout out;
  out.unitaries.dt = traj.dt;
  out.unitaries.t_f = traj.t_f();
  out.unitaries.knots.reserve(traj.n_knots);
  out.unitaries.knots.push_back(CMatrix::Identity(d, d));
  out.sensitivities.assign(err.n_channels(), {});
  for (auto& per_channel : out.sensitivities) {
    per_channel.reserve(traj.n_knots);
    per_channel.push_back(CMatrix::Zero(d, d));
  }

  for (int k = 0; k < traj.n_intervals(); ++k) {
    const CMatrix h = hamiltonian_at(sys, traj.u.row(k));
    const CMatrix f = algebra::expm(minus_i * traj.dt * h);
    const CMatrix& u_k = out.unitaries.knots.back();
    for (int c = 0; c < err.n_channels(); ++c) {
      const ErrorChannel& ch = err.channels[c];
      // The Frechet derivative is linear in the direction; scaling by the
      // channel weight outside the exponential keeps that linearity exact.
      const CMatrix l =
          ch.weight * algebra::expm_frechet(minus_i * traj.dt * h,
                                            minus_i * traj.dt * ch.op_at(k))
                          .derivative;
      const CMatrix& a_k = out.sensitivities[c].back();
      out.sensitivities[c].push_back(l * u_k + f * a_k);
    }
    out.unitaries.knots.push_back(f * u_k);
  }
  return out;
}

}  // namespace rqoc::dynamics
