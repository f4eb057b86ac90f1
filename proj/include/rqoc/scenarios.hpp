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

#include "json.hpp"  // vendored single-header nlohmann/json

#include "rqoc/trajopt.hpp"

namespace rqoc::harness {

using json = nlohmann::json;

/// Single-qubit Hadamard design: H(t) = u_x X + u_y Y + u_z Z against a
/// quasi-static Z error. Defaults: N = 40 knots, dt = 0.8, fidelity
/// threshold 0.9999, |u| <= 1, |du| <= 1, |ddu| <= 2, adjoint objective
/// with Q = R = 1. Any field may be overridden through `params`.
trajopt::ProblemSpec scenario_hadamard(const json& params = json::object());

/// Two-transmon iSWAP design: per-qubit X/Y/Z drives plus a tunable
/// XX + YY coupling, against Z1, Z2 and Z1Z2 errors with unit weights.
trajopt::ProblemSpec scenario_iswap(const json& params = json::object());

/// Fully JSON-specified problem (system, goal, error model).
trajopt::ProblemSpec scenario_custom(const json& params);

/// Dispatch on scenario name ("hadamard", "iswap", "custom").
trajopt::ProblemSpec make_scenario(const std::string& name,
                                   const json& params = json::object());

/// Serialization of a full problem spec (system and error operators
/// included) so solution files are self-contained.
json spec_to_json(const trajopt::ProblemSpec& spec);
trajopt::ProblemSpec spec_from_json(const json& j);

json cmatrix_to_json(const algebra::CMatrix& m);
algebra::CMatrix cmatrix_from_json(const json& j);

}  // namespace rqoc::harness
