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

#include <optional>
#include <string>
#include <vector>

#include "rqoc/algebra.hpp"

namespace rqoc::dynamics {

using algebra::CMatrix;

/// A controlled Hamiltonian H(u) = drift + sum_j u_j * controls[j], with all
/// operators Hermitian and of equal dimension.
struct ControlSystem {
  Eigen::Index dim = 0;
  CMatrix drift;
  std::vector<CMatrix> controls;
  std::vector<std::string> labels;

  int n_controls() const { return static_cast<int>(controls.size()); }

  /// Throws std::invalid_argument if dimensions disagree or any operator
  /// fails the Hermiticity tolerance (1e-12).
  void validate() const;
};

/// Piecewise-constant controls on a uniform grid of n_knots knot points.
/// u and du hold one row per knot; ddu holds one row per interval.
struct ControlTrajectory {
  int n_knots = 0;
  double dt = 0.0;
  Eigen::MatrixXd u;    // n_knots x J
  Eigen::MatrixXd du;   // n_knots x J
  Eigen::MatrixXd ddu;  // (n_knots - 1) x J

  double t_f() const { return (n_knots - 1) * dt; }
  int n_intervals() const { return n_knots - 1; }

  static ControlTrajectory zeros(int n_knots, double dt, int n_controls);
  void validate() const;
};

/// Unitary state at every knot point; knots.front() is the identity.
struct UnitaryTrajectory {
  std::vector<CMatrix> knots;
  double dt = 0.0;
  double t_f = 0.0;

  int n_knots() const { return static_cast<int>(knots.size()); }
  const CMatrix& final_unitary() const { return knots.back(); }
};

/// Goal unitary for gate design.
struct GateTarget {
  CMatrix goal;
  void validate() const;  // unitarity within 1e-10
};

/// One Hermitian error operator with a strength weight. A static channel
/// stores a single operator; a time-dependent channel stores one operator
/// per interval.
struct ErrorChannel {
  std::vector<CMatrix> ops;  // size 1 (static) or n_intervals
  double weight = 1.0;
  std::string label;

  bool is_static() const { return ops.size() == 1; }
  const CMatrix& op_at(int interval) const {
    return is_static() ? ops.front() : ops.at(interval);
  }
  void validate(int n_intervals, Eigen::Index dim) const;
};

struct ErrorModel {
  std::vector<ErrorChannel> channels;

  bool is_static() const;
  int n_channels() const { return static_cast<int>(channels.size()); }
  void validate(int n_intervals, Eigen::Index dim) const;

  static ErrorModel single(CMatrix op, double weight = 1.0,
                           std::string label = "");
  static ErrorModel from_pauli(const algebra::PauliString& p,
                               double weight = 1.0);
};

/// H(u_k) = drift + sum_j u_kj * controls[j].
CMatrix hamiltonian_at(const ControlSystem& sys,
                       const Eigen::Ref<const Eigen::VectorXd>& u_k);

/// exp(-i H(u_k) dt).
CMatrix step_propagator(const ControlSystem& sys,
                        const Eigen::Ref<const Eigen::VectorXd>& u_k,
                        double dt);

/// Zero-order-hold rollout: U_1 = I, U_{k+1} = exp(-i H(u_k) dt) U_k.
UnitaryTrajectory rollout(const ControlSystem& sys,
                          const ControlTrajectory& traj);

/// (1/d) |Tr(U_N^dag G)|, in [0, 1], invariant under global phases.
double fidelity(const CMatrix& u_final, const GateTarget& target);

/// Result of the joint state/sensitivity rollout. sensitivities[c][k] is
/// d U_k / d eps at eps = 0 for error channel c (weight included);
/// sensitivities[c][0] is zero.
struct AdjointRollout {
  UnitaryTrajectory unitaries;
  std::vector<std::vector<CMatrix>> sensitivities;
};

/// Propagates states and error sensitivities jointly under zero-order hold.
/// Per interval the sensitivity advances through the block exponential
/// exp(-i dt [[H_k, 0], [E_k, H_k]]), evaluated at eps = 0.
AdjointRollout adjoint_rollout(const ControlSystem& sys,
                               const ControlTrajectory& traj,
                               const ErrorModel& err);

}  // namespace rqoc::dynamics
