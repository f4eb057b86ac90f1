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

#include "rqoc/scenarios.hpp"

#include <cmath>
#include <stdexcept>

namespace rqoc::harness {

namespace {

using algebra::CMatrix;
using algebra::Complex;
using algebra::PauliString;
using dynamics::ErrorChannel;
using dynamics::ErrorModel;
using trajopt::ControlBounds;
using trajopt::ProblemSpec;

Eigen::VectorXd caps_from_json(const json& v, int n_controls,
                               const char* field) {
  if (v.is_number()) {
    return Eigen::VectorXd::Constant(n_controls, v.get<double>());
  }
  if (v.is_array()) {
    if (static_cast<int>(v.size()) != n_controls) {
      throw std::invalid_argument(std::string("config field '") + field +
                                  "': expected " + std::to_string(n_controls) +
                                  " entries");
    }
    Eigen::VectorXd caps(n_controls);
    for (int j = 0; j < n_controls; ++j) caps[j] = v[j].get<double>();
    return caps;
  }
  throw std::invalid_argument(std::string("config field '") + field +
                              "': expected number or array");
}

ErrorModel error_model_from_json(const json& j, int n_intervals) {
  ErrorModel model;
  for (const auto& cj : j.at("channels")) {
    ErrorChannel ch;
    ch.weight = cj.value("weight", 1.0);
    if (cj.contains("pauli")) {
      const PauliString p = PauliString::parse(cj.at("pauli").get<std::string>());
      ch.label = p.label();
      const CMatrix base = algebra::pauli_string_matrix(p);
      if (cj.contains("modulation")) {
        const auto& mod = cj.at("modulation");
        if (static_cast<int>(mod.size()) != n_intervals) {
          throw std::invalid_argument(
              "error channel 'modulation': one entry per interval required");
        }
        for (const auto& s : mod) ch.ops.push_back(s.get<double>() * base);
      } else {
        ch.ops.push_back(base);
      }
    } else if (cj.contains("matrix")) {
      ch.ops.push_back(cmatrix_from_json(cj.at("matrix")));
      ch.label = cj.value("label", std::string("custom"));
    } else {
      throw std::invalid_argument("error channel: need 'pauli' or 'matrix'");
    }
    model.channels.push_back(std::move(ch));
  }
  return model;
}

json error_model_to_json(const ErrorModel& model) {
  json channels = json::array();
  for (const auto& ch : model.channels) {
    json cj;
    cj["weight"] = ch.weight;
    cj["label"] = ch.label;
    json ops = json::array();
    for (const auto& op : ch.ops) ops.push_back(cmatrix_to_json(op));
    cj["ops"] = ops;
    channels.push_back(cj);
  }
  return json{{"channels", channels}};
}

ErrorModel error_model_from_ops_json(const json& j) {
  ErrorModel model;
  for (const auto& cj : j.at("channels")) {
    ErrorChannel ch;
    ch.weight = cj.at("weight").get<double>();
    ch.label = cj.value("label", std::string());
    for (const auto& op : cj.at("ops")) ch.ops.push_back(cmatrix_from_json(op));
    model.channels.push_back(std::move(ch));
  }
  return model;
}

/// Overrides shared by every scenario: discretization, objective, weights,
/// constraints and bounds.
void apply_common_overrides(ProblemSpec& spec, const json& params) {
  if (params.contains("n_knots")) spec.n_knots = params.at("n_knots").get<int>();
  if (params.contains("dt")) spec.dt = params.at("dt").get<double>();
  if (params.contains("objective")) {
    spec.objective =
        trajopt::objective_from_string(params.at("objective").get<std::string>());
  }
  if (params.contains("order_j")) spec.order_j = params.at("order_j").get<int>();
  if (params.contains("Q")) spec.q_weight = params.at("Q").get<double>();
  if (params.contains("R")) spec.r_weight = params.at("R").get<double>();
  if (params.contains("fidelity_min")) {
    const auto& v = params.at("fidelity_min");
    if (v.is_null()) {
      spec.fidelity_min.reset();
    } else {
      spec.fidelity_min = v.get<double>();
    }
  }
  if (params.contains("formulation")) {
    spec.formulation = trajopt::formulation_from_string(
        params.at("formulation").get<std::string>());
  }
  if (params.contains("constrain_controls")) {
    spec.constrain_controls = params.at("constrain_controls").get<bool>();
  }
  const int nj = spec.system.n_controls();
  if (params.contains("u_bound")) {
    spec.bounds.u = caps_from_json(params.at("u_bound"), nj, "u_bound");
  }
  if (params.contains("du_bound")) {
    spec.bounds.du = caps_from_json(params.at("du_bound"), nj, "du_bound");
  }
  if (params.contains("ddu_bound")) {
    spec.bounds.ddu = caps_from_json(params.at("ddu_bound"), nj, "ddu_bound");
  }
  if (params.contains("error")) {
    spec.error = error_model_from_json(params.at("error"), spec.n_intervals());
  }
}

}  // namespace

json cmatrix_to_json(const CMatrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      row.push_back(json::array({m(r, c).real(), m(r, c).imag()}));
    }
    rows.push_back(row);
  }
  return rows;
}

CMatrix cmatrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) {
    throw std::invalid_argument("matrix: expected a non-empty array of rows");
  }
  const Eigen::Index rows = j.size();
  const Eigen::Index cols = j[0].size();
  CMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw std::invalid_argument("matrix: ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& e = j[r][c];
      if (e.is_array()) {
        m(r, c) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
      } else {
        m(r, c) = Complex(e.get<double>(), 0.0);
      }
    }
  }
  return m;
}

trajopt::ProblemSpec scenario_hadamard(const json& params) {
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
  spec.fidelity_min = 0.9999;
  spec.objective = trajopt::ObjectiveKind::adjoint;
  spec.q_weight = 1.0;
  spec.r_weight = 1.0;
  spec.error = ErrorModel::from_pauli(PauliString::parse("Z"));
  spec.bounds = ControlBounds::uniform(3, 1.0, 1.0, 2.0);
  spec.constrain_controls = true;
  spec.formulation = trajopt::Formulation::direct;

  apply_common_overrides(spec, params);
  return spec;
}

trajopt::ProblemSpec scenario_iswap(const json& params) {
  ProblemSpec spec;
  spec.system.dim = 4;
  spec.system.drift = CMatrix::Zero(4, 4);
  const char* singles[6] = {"XI", "YI", "ZI", "IX", "IY", "IZ"};
  const char* labels[6] = {"x1", "y1", "z1", "x2", "y2", "z2"};
  for (int i = 0; i < 6; ++i) {
    spec.system.controls.push_back(
        algebra::pauli_string_matrix(PauliString::parse(singles[i])));
    spec.system.labels.push_back(labels[i]);
  }
  const CMatrix coupling =
      algebra::pauli_string_matrix(PauliString::parse("XX")) +
      algebra::pauli_string_matrix(PauliString::parse("YY"));
  spec.system.controls.push_back(coupling);
  spec.system.labels.push_back("g");

  spec.target.goal =
      algebra::expm(Complex(0.0, M_PI / 4.0) * coupling);  // iSWAP

  spec.n_knots = 40;
  spec.dt = 0.8;
  spec.fidelity_min = 0.9999;
  spec.objective = trajopt::ObjectiveKind::adjoint;
  spec.q_weight = 1.0;
  spec.r_weight = 1.0;
  ErrorModel err;
  for (const char* p : {"ZI", "IZ", "ZZ"}) {
    err.channels.push_back(ErrorChannel{
        {algebra::pauli_string_matrix(PauliString::parse(p))}, 1.0, p});
  }
  spec.error = err;
  spec.bounds = ControlBounds::uniform(7, 1.0, 1.0, 2.0);
  spec.constrain_controls = true;
  spec.formulation = trajopt::Formulation::direct;

  apply_common_overrides(spec, params);
  return spec;
}

trajopt::ProblemSpec scenario_custom(const json& params) {
  ProblemSpec spec;
  const json& sys = params.at("system");
  spec.system.dim = sys.at("dim").get<int>();
  spec.system.drift = sys.contains("drift")
                          ? cmatrix_from_json(sys.at("drift"))
                          : CMatrix::Zero(spec.system.dim, spec.system.dim);
  for (const auto& cj : sys.at("controls")) {
    if (cj.contains("pauli")) {
      const PauliString p = PauliString::parse(cj.at("pauli").get<std::string>(),
                                               cj.value("coeff", 1.0));
      spec.system.controls.push_back(algebra::pauli_string_matrix(p));
      spec.system.labels.push_back(cj.value("label", p.label()));
    } else {
      spec.system.controls.push_back(cmatrix_from_json(cj.at("matrix")));
      spec.system.labels.push_back(cj.value("label", std::string("h")));
    }
  }
  if (params.contains("goal")) {
    spec.target.goal = cmatrix_from_json(params.at("goal"));
  }
  spec.n_knots = 40;
  spec.dt = 0.8;
  spec.bounds = ControlBounds::uniform(spec.system.n_controls(), 1.0, 1.0, 2.0);
  apply_common_overrides(spec, params);
  return spec;
}

trajopt::ProblemSpec make_scenario(const std::string& name, const json& params) {
  if (name == "hadamard") return scenario_hadamard(params);
  if (name == "iswap") return scenario_iswap(params);
  if (name == "custom") return scenario_custom(params);
  throw std::invalid_argument("unknown scenario: " + name);
}

json spec_to_json(const ProblemSpec& spec) {
  json j;
  json sys;
  sys["dim"] = spec.system.dim;
  sys["drift"] = cmatrix_to_json(spec.system.drift);
  json controls = json::array();
  for (const auto& h : spec.system.controls) controls.push_back(cmatrix_to_json(h));
  sys["controls"] = controls;
  sys["labels"] = spec.system.labels;
  j["system"] = sys;
  j["goal"] = cmatrix_to_json(spec.target.goal);
  j["n_knots"] = spec.n_knots;
  j["dt"] = spec.dt;
  j["objective"] = trajopt::to_string(spec.objective);
  j["order_j"] = spec.order_j;
  j["Q"] = spec.q_weight;
  j["R"] = spec.r_weight;
  if (spec.fidelity_min) {
    j["fidelity_min"] = *spec.fidelity_min;
  } else {
    j["fidelity_min"] = nullptr;
  }
  j["formulation"] = trajopt::to_string(spec.formulation);
  j["constrain_controls"] = spec.constrain_controls;
  auto caps = [](const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  j["u_bound"] = caps(spec.bounds.u);
  j["du_bound"] = caps(spec.bounds.du);
  j["ddu_bound"] = caps(spec.bounds.ddu);
  j["error"] = error_model_to_json(spec.error);
  return j;
}

trajopt::ProblemSpec spec_from_json(const json& j) {
  ProblemSpec spec;
  const json& sys = j.at("system");
  spec.system.dim = sys.at("dim").get<int>();
  spec.system.drift = cmatrix_from_json(sys.at("drift"));
  for (const auto& h : sys.at("controls")) {
    spec.system.controls.push_back(cmatrix_from_json(h));
  }
  spec.system.labels = sys.at("labels").get<std::vector<std::string>>();
  spec.target.goal = cmatrix_from_json(j.at("goal"));
  spec.n_knots = j.at("n_knots").get<int>();
  spec.dt = j.at("dt").get<double>();
  spec.objective =
      trajopt::objective_from_string(j.at("objective").get<std::string>());
  spec.order_j = j.at("order_j").get<int>();
  spec.q_weight = j.at("Q").get<double>();
  spec.r_weight = j.at("R").get<double>();
  if (!j.at("fidelity_min").is_null()) {
    spec.fidelity_min = j.at("fidelity_min").get<double>();
  }
  spec.formulation =
      trajopt::formulation_from_string(j.at("formulation").get<std::string>());
  spec.constrain_controls = j.at("constrain_controls").get<bool>();
  auto caps = [](const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
    return v;
  };
  spec.bounds.u = caps(j.at("u_bound"));
  spec.bounds.du = caps(j.at("du_bound"));
  spec.bounds.ddu = caps(j.at("ddu_bound"));
  spec.error = error_model_from_ops_json(j.at("error"));
  return spec;
}

}  // namespace rqoc::harness
