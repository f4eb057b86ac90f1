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

#include <cstdint>
#include <optional>
#include <vector>

#include "rqoc/dynamics.hpp"
#include "rqoc/nlp.hpp"

namespace rqoc::trajopt {

using algebra::CMatrix;
using dynamics::ControlSystem;
using dynamics::ControlTrajectory;
using dynamics::ErrorModel;
using dynamics::GateTarget;
using Eigen::VectorXd;

enum class Formulation { direct, indirect };
enum class ObjectiveKind { none, toggling, universal, adjoint };

std::string to_string(Formulation f);
std::string to_string(ObjectiveKind k);
Formulation formulation_from_string(const std::string& s);
ObjectiveKind objective_from_string(const std::string& s);

/// Per-channel absolute caps on u, du/dt and d2u/dt2. Entries may be
/// infinity; empty vectors mean uncapped.
struct ControlBounds {
  VectorXd u;
  VectorXd du;
  VectorXd ddu;

  static ControlBounds uniform(int n_controls, double u_cap, double du_cap,
                               double ddu_cap);
};

/// Full description of one control-design problem.
struct ProblemSpec {
  ControlSystem system;
  GateTarget target;
  int n_knots = 0;
  double dt = 0.0;

  ObjectiveKind objective = ObjectiveKind::none;
  int order_j = 0;     // expansion order for toggling/universal objectives
  ErrorModel error;    // robustness channels (toggling/adjoint objectives)
  double q_weight = 1.0;  // robustness weight Q
  double r_weight = 1.0;  // regularization weight R
  std::optional<double> fidelity_min;
  ControlBounds bounds;
  bool constrain_controls = true;
  Formulation formulation = Formulation::direct;

  int n_intervals() const { return n_knots - 1; }
  double t_f() const { return (n_knots - 1) * dt; }
  void validate() const;
};

/// Flat-vector layout of the decision variables. Direct layouts hold one
/// state block per knot (real and imaginary parts of U_k, column-major,
/// followed by one sensitivity block per adjoint channel), then the control
/// values, velocities and accelerations. Indirect layouts hold controls only.
struct VariableLayout {
  Formulation formulation = Formulation::direct;
  int n_knots = 0;
  int dim = 0;
  int n_controls = 0;
  int n_state_channels = 0;  // sensitivity blocks per knot (adjoint objective)
  int n_vars = 0;
  int state_stride = 0;  // size of one knot's state block
  int u_offset = 0;
  int du_offset = 0;
  int ddu_offset = 0;

  int matrix_size() const { return 2 * dim * dim; }
  int state_offset(int k) const;
  int sensitivity_offset(int channel, int k) const;
  int u_index(int k, int j) const { return u_offset + k * n_controls + j; }
  int du_index(int k, int j) const { return du_offset + k * n_controls + j; }
  int ddu_index(int k, int j) const { return ddu_offset + k * n_controls + j; }

  static VariableLayout create(const ProblemSpec& spec);
};

/// Reads/writes a complex matrix stored as [Re(vec), Im(vec)] at `offset`.
CMatrix read_cmatrix(const VectorXd& x, int offset, int dim);
void write_cmatrix(VectorXd& x, int offset, const CMatrix& m);

struct BuiltProblem {
  nlp::NLPProblem problem;
  VariableLayout layout;
};

/// Smoothness regularizer sum_k ||u_k||^2 + ||du_k||^2 + ||ddu_k||^2.
double regularization(const ControlTrajectory& traj);

/// Multiple-shooting formulation: states and controls are decision
/// variables, dynamics and control-derivative chains are equality
/// constraints, the optional fidelity threshold is an inequality on U_N.
BuiltProblem build_direct(const ProblemSpec& spec);

/// Single-shooting formulation: controls (with du/ddu auxiliaries) are the
/// only decision variables; fidelity and robustness evaluate through an
/// internal rollout with reverse-accumulated gradients.
BuiltProblem build_indirect(const ProblemSpec& spec);

BuiltProblem build(const ProblemSpec& spec);

/// Seeded smooth random initialization: per-channel sums of the first four
/// Fourier modes scaled to half the control cap, du/ddu by finite
/// differences, states (direct) by rollout.
VectorXd initialize(const ProblemSpec& spec, const VariableLayout& layout,
                    std::uint64_t seed);

/// Assembles a decision vector consistent with a rollout of `traj`.
VectorXd pack_from_rollout(const ProblemSpec& spec,
                           const VariableLayout& layout,
                           const ControlTrajectory& traj);

ControlTrajectory extract_controls(const VectorXd& x,
                                   const VariableLayout& layout, double dt);

struct IterateStats {
  double max_du = 0.0;
  double max_ddu = 0.0;
  double objective = 0.0;
  double fidelity = 0.0;
};

/// Per-iterate maxima of |du| and |ddu| plus objective and fidelity, from
/// the snapshots recorded in a solve report. Throws if none were recorded.
std::vector<IterateStats> analyze_iterates(const nlp::SolveReport& report,
                                           const ProblemSpec& spec,
                                           const VariableLayout& layout);

}  // namespace rqoc::trajopt
