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

#include <string>
#include <vector>

#include "rqoc/dynamics.hpp"

namespace rqoc::metrics {

using algebra::CMatrix;
using dynamics::ControlSystem;
using dynamics::ControlTrajectory;
using dynamics::ErrorModel;
using dynamics::UnitaryTrajectory;

/// Knobs shared by the susceptibility estimators.
struct MetricConfig {
  /// Order of the per-interval expansion in dt for the toggling and
  /// universal estimators.
  int order_j = 0;
  /// Substeps per interval for the fine-grid estimator; 0 picks the default
  /// of ceil(1024 / n_intervals) so the total grid has at least 2^10 points.
  int oversample = 0;

  static constexpr int kMaxOrder = 12;

  static int default_oversample(int n_intervals);
  void validate() const;
};

struct SusceptibilityReport {
  double value = 0.0;
  std::string estimator;
  std::string error_label;
};

/// Fine-grid evaluation of the first-order susceptibility integral.
/// Within each interval the controls are held constant, sub-interval
/// propagators are composed exactly, and the toggled-error integral is
/// approximated by composite Simpson quadrature on `oversample` substeps.
/// Multi-channel models contribute the weighted sum over channels.
double susceptibility_fine(const ControlSystem& sys,
                           const ControlTrajectory& traj,
                           const ErrorModel& err, int oversample = 0,
                           const UnitaryTrajectory* precomputed = nullptr);

/// Order-j toggling correction E_k^{(j)} = sum_{n<=j} (i dt)^n/(n+1)! ad_{H_k}^n(E_k).
/// Truncates the exact per-interval average (1/dt) int_0^dt e^{iHt} E e^{-iHt} dt.
CMatrix toggling_term(const CMatrix& h_k, const CMatrix& e_k, int j,
                      double dt);

/// Order-j toggling estimator: (1/t_f^2) || sum_k dt U_k^dag E_k^{(j)} U_k ||^2.
double susceptibility_toggling(const ControlSystem& sys,
                               const ControlTrajectory& traj,
                               const ErrorModel& err, int j,
                               const UnitaryTrajectory* precomputed = nullptr);

/// Order-j universal correction I_k^{(j)} = sum_{n<=j} dt^n/(n+1)! L_k^n with
/// L_k = (-i H_k) kron_sum (i H_k^*); truncates phi_1(dt L_k).
CMatrix universal_term(const CMatrix& h_k, int j, double dt);

/// Error-agnostic universal susceptibility:
/// (1/t_f^2) || sum_k I_k^{(j)} dt (U_k kron U_k^*) ||^2.
double susceptibility_universal(const ControlSystem& sys,
                                const ControlTrajectory& traj, int j,
                                const UnitaryTrajectory* precomputed = nullptr);

/// Adjoint estimator (1/t_f^2) || U_N^dag dU_eps/deps ||^2, exact under
/// zero-order hold; supports per-interval time-dependent error operators.
double susceptibility_adjoint(const ControlSystem& sys,
                              const ControlTrajectory& traj,
                              const ErrorModel& err);

struct PauliSusceptibility {
  algebra::PauliString op;
  double value = 0.0;
};

/// Adjoint susceptibility of every non-identity Pauli string (unit weight):
/// 4^n - 1 rows for an n-qubit system.
std::vector<PauliSusceptibility> pauli_susceptibility_scan(
    const ControlSystem& sys, const ControlTrajectory& traj, int n_qubits);

}  // namespace rqoc::metrics
