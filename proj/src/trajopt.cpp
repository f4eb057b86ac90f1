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
#include <limits>
#include <memory>
#include <random>
#include <cstdio>
#include <stdexcept>

#include "rqoc/metrics.hpp"

namespace rqoc::trajopt {

using algebra::Complex;
using dynamics::ErrorChannel;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr Complex kMinusI(0.0, -1.0);
constexpr Complex kPlusI(0.0, 1.0);

double factorial_coeff_step(double prev, double dt, int n) {
  // dt^n/(n+1)! from dt^{n-1}/n!
  return prev * dt / static_cast<double>(n + 1);
}

CMatrix read_cmatrix_at(const VectorXd& x, int offset, int dim) {
  const int d2 = dim * dim;
  CMatrix m(dim, dim);
  for (int c = 0, idx = 0; c < dim; ++c) {
    for (int r = 0; r < dim; ++r, ++idx) {
      m(r, c) = Complex(x[offset + idx], x[offset + d2 + idx]);
    }
  }
  return m;
}

void write_cmatrix_at(Eigen::Ref<VectorXd> out, int offset, const CMatrix& m) {
  const int dim = static_cast<int>(m.rows());
  const int d2 = dim * dim;
  for (int c = 0, idx = 0; c < dim; ++c) {
    for (int r = 0; r < dim; ++r, ++idx) {
      out[offset + idx] = m(r, c).real();
      out[offset + d2 + idx] = m(r, c).imag();
    }
  }
}

void add_cotangent(VectorXd& grad, int offset, const CMatrix& cot) {
  const int dim = static_cast<int>(cot.rows());
  const int d2 = dim * dim;
  for (int c = 0, idx = 0; c < dim; ++c) {
    for (int r = 0; r < dim; ++r, ++idx) {
      grad[offset + idx] += cot(r, c).real();
      grad[offset + d2 + idx] += cot(r, c).imag();
    }
  }
}

/// (1/d^2)|Tr(U^dag G)|^2 with optional cotangent with respect to U.
double fidelity_sq(const CMatrix& u, const CMatrix& goal, CMatrix* cot) {
  const double d2 = static_cast<double>(u.rows() * u.rows());
  const Complex z = (u.adjoint() * goal).trace();
  if (cot != nullptr) *cot = (2.0 / d2) * std::conj(z) * goal;
  return std::norm(z) / d2;
}

/// Per-solve cache of the control-dependent propagator quantities. All
/// entries are keyed on the control block of the variable vector; blocks of
/// one problem share an instance and a solve touches it from one thread.
struct PropagatorCache {
  ProblemSpec spec;
  VariableLayout layout;
  bool with_channels = false;
  bool with_rollout = false;

  VectorXd key;
  bool valid = false;

  std::vector<CMatrix> h;                // H(u_k) per interval
  std::vector<algebra::HermitianGenerator> gens;  // spectral form of H_k
  std::vector<CMatrix> f;                // exp(-i dt H_k) per interval
  std::vector<std::vector<CMatrix>> l;   // [channel][interval] Frechet block
  std::vector<CMatrix> us;               // rollout knots (with_rollout)
  std::vector<std::vector<CMatrix>> as;  // [channel][knot] sensitivities

  void ensure(const VectorXd& x) {
    const int nu = layout.n_knots * layout.n_controls;
    const VectorXd u_block = x.segment(layout.u_offset, nu);
    if (valid && u_block.size() == key.size() && (u_block.array() == key.array()).all()) {
      return;
    }
    key = u_block;
    const int n_int = spec.n_intervals();
    const double dt = spec.dt;
    const int n_ch = with_channels ? spec.error.n_channels() : 0;

    h.assign(n_int, CMatrix());
    gens.clear();
    gens.reserve(n_int);
    f.assign(n_int, CMatrix());
    l.assign(n_ch, std::vector<CMatrix>(n_int));
    Eigen::VectorXd u_k(layout.n_controls);
    for (int k = 0; k < n_int; ++k) {
      for (int j = 0; j < layout.n_controls; ++j) u_k[j] = x[layout.u_index(k, j)];
      h[k] = dynamics::hamiltonian_at(spec.system, u_k);
      gens.emplace_back(h[k], dt);
      f[k] = gens.back().propagator();
      for (int c = 0; c < n_ch; ++c) {
        const ErrorChannel& ch = spec.error.channels[c];
        l[c][k] = ch.weight *
                  gens.back().frechet(CMatrix(kMinusI * dt * ch.op_at(k)));
      }
    }

    if (with_rollout) {
      const Eigen::Index d = spec.system.dim;
      us.assign(layout.n_knots, CMatrix());
      us[0] = CMatrix::Identity(d, d);
      as.assign(n_ch, std::vector<CMatrix>(layout.n_knots));
      for (int c = 0; c < n_ch; ++c) as[c][0] = CMatrix::Zero(d, d);
      for (int k = 0; k < n_int; ++k) {
        for (int c = 0; c < n_ch; ++c) {
          as[c][k + 1] = l[c][k] * us[k] + f[k] * as[c][k];
        }
        us[k + 1] = f[k] * us[k];
      }
    }
    valid = true;
  }
};

/// SPD Gauss-Newton model of the augmented-Lagrangian Hessian, applied as
/// an inverse to precondition the inner Newton-CG solves.
///
/// The state side of rho J^T J is block-tridiagonal with unitary transport,
/// so its block pivots reduce to scalars and a solve is two propagator
/// sweeps per state column. The state-control coupling of the dynamics rows
/// is kept exactly and eliminated through a dense Schur complement on the
/// (much smaller) control space; an active fidelity row enters by a
/// Sherman-Morrison update.
class ChainPreconditioner {
 public:
  ChainPreconditioner(const ProblemSpec& spec, const VariableLayout& layout,
                      std::shared_ptr<PropagatorCache> cache)
      : spec_(spec), layout_(layout), cache_(std::move(cache)) {
    n_ctrl_vars_ = (3 * layout_.n_knots - 1) * layout_.n_controls;
    has_states_ = layout_.formulation == Formulation::direct;
  }

  void apply(const VectorXd& x, double rho, const VectorXd& r, VectorXd& out) {
    refresh_if_stale(x, rho);
    out.resize(r.size());
    bordered_solve(rho, r, out);
    if (fid_active_) {
      // (M + rho v v^T)^{-1} via Sherman-Morrison with q = M^{-1} v.
      const double coeff = rho * fid_v_.dot(out) / fid_denom_;
      out -= coeff * fid_q_;
    }
  }

 private:
  struct SparseColumn {
    std::vector<std::pair<int, CMatrix>> blocks;  // (state offset, coeff)
  };

  int ctrl_local(int k, int j, int kind) const {
    // kind 0: u, 1: du, 2: ddu
    const int n = layout_.n_knots;
    const int per_channel = 3 * n - 1;
    const int base = j * per_channel;
    if (kind == 0) return base + k;
    if (kind == 1) return base + n + k;
    return base + 2 * n + k;
  }

  int ctrl_global(int k, int j, int kind) const {
    if (kind == 0) return layout_.u_index(k, j);
    if (kind == 1) return layout_.du_index(k, j);
    return layout_.ddu_index(k, j);
  }

  void gather_controls(const VectorXd& full, Eigen::VectorXd& local) const {
    local.resize(n_ctrl_vars_);
    for (int j = 0; j < layout_.n_controls; ++j) {
      for (int k = 0; k < layout_.n_knots; ++k) {
        local[ctrl_local(k, j, 0)] = full[ctrl_global(k, j, 0)];
        local[ctrl_local(k, j, 1)] = full[ctrl_global(k, j, 1)];
        if (k < layout_.n_knots - 1) {
          local[ctrl_local(k, j, 2)] = full[ctrl_global(k, j, 2)];
        }
      }
    }
  }

  void scatter_controls(const Eigen::VectorXd& local, VectorXd& full) const {
    for (int j = 0; j < layout_.n_controls; ++j) {
      for (int k = 0; k < layout_.n_knots; ++k) {
        full[ctrl_global(k, j, 0)] = local[ctrl_local(k, j, 0)];
        full[ctrl_global(k, j, 1)] = local[ctrl_local(k, j, 1)];
        if (k < layout_.n_knots - 1) {
          full[ctrl_global(k, j, 2)] = local[ctrl_local(k, j, 2)];
        }
      }
    }
  }

  static void add_packed(VectorXd& dst, int offset, const CMatrix& m,
                         double scale) {
    const int d = static_cast<int>(m.rows());
    const int d2 = d * d;
    for (int c = 0, idx = 0; c < d; ++c) {
      for (int rr = 0; rr < d; ++rr, ++idx) {
        dst[offset + idx] += scale * m(rr, c).real();
        dst[offset + d2 + idx] += scale * m(rr, c).imag();
      }
    }
  }

  static double packed_dot(const VectorXd& v, int offset, const CMatrix& m) {
    const int d = static_cast<int>(m.rows());
    const int d2 = d * d;
    double acc = 0.0;
    for (int c = 0, idx = 0; c < d; ++c) {
      for (int rr = 0; rr < d; ++rr, ++idx) {
        acc += v[offset + idx] * m(rr, c).real() +
               v[offset + d2 + idx] * m(rr, c).imag();
      }
    }
    return acc;
  }

  /// Solves the joint state-side chain T y = r, where the state of knot k
  /// stacks U_k with every sensitivity block and the transport is the block
  /// propagator [[F, 0], [L_c, F]]. One block-LDL sweep per state column.
  void state_solve(double rho, const VectorXd& r, VectorXd& out) const {
    const int n = layout_.n_knots;
    const int d = layout_.dim;
    const int m = 1 + layout_.n_state_channels;
    const int md = m * d;
    std::vector<Eigen::VectorXcd> z(n, Eigen::VectorXcd(md));
    for (int col = 0; col < d; ++col) {
      auto offset_of = [&](int k, int blk) {
        const int base = blk == 0 ? layout_.state_offset(k)
                                  : layout_.sensitivity_offset(blk - 1, k);
        return base + col * d;
      };
      for (int k = 0; k < n; ++k) {
        for (int blk = 0; blk < m; ++blk) {
          const int off = offset_of(k, blk);
          for (int i = 0; i < d; ++i) {
            z[k][blk * d + i] = Complex(r[off + i], r[off + d * d + i]);
          }
        }
        if (k > 0) {
          z[k] += rho * (joint_m_[k - 1] * (joint_pinv_[k - 1] * z[k - 1]));
        }
      }
      Eigen::VectorXcd y = joint_pinv_[n - 1] * z[n - 1];
      for (int k = n - 1; k-- > 0;) {
        const Eigen::VectorXcd next = y;
        y = joint_pinv_[k] *
            (z[k] + rho * (joint_m_[k].adjoint() * next));
        for (int blk = 0; blk < m; ++blk) {
          const int off = offset_of(k + 1, blk);
          for (int i = 0; i < d; ++i) {
            out[off + i] = next[blk * d + i].real();
            out[off + d * d + i] = next[blk * d + i].imag();
          }
        }
      }
      for (int blk = 0; blk < m; ++blk) {
        const int off = offset_of(0, blk);
        for (int i = 0; i < d; ++i) {
          out[off + i] = y[blk * d + i].real();
          out[off + d * d + i] = y[blk * d + i].imag();
        }
      }
    }
  }

  /// out = M^{-1} r without the fidelity rank-one term.
  void bordered_solve(double rho, const VectorXd& r, VectorXd& out) const {
    out.setZero();
    if (!has_states_) {
      Eigen::VectorXd rc(n_ctrl_vars_), zc;
      gather_controls(r, rc);
      zc = schur_llt_.solve(rc);
      scatter_controls(zc, out);
      return;
    }
    // w = T^{-1} r_s
    VectorXd w = VectorXd::Zero(r.size());
    state_solve(rho, r, w);
    // rhs_c = r_c - rho B0^T w
    Eigen::VectorXd rc(n_ctrl_vars_);
    gather_controls(r, rc);
    for (int idx = 0; idx < n_ctrl_vars_; ++idx) {
      const SparseColumn& col = b_cols_[idx];
      double acc = 0.0;
      for (const auto& [off, m] : col.blocks) acc += packed_dot(w, off, m);
      rc[idx] -= rho * acc;
    }
    const Eigen::VectorXd zc = schur_llt_.solve(rc);
    // z_s = T^{-1} (r_s - rho B0 z_c)
    VectorXd rs = r;
    for (int idx = 0; idx < n_ctrl_vars_; ++idx) {
      const double v = zc[idx];
      if (v == 0.0) continue;
      for (const auto& [off, m] : b_cols_[idx].blocks) {
        add_packed(rs, off, m, -rho * v);
      }
    }
    state_solve(rho, rs, out);
    scatter_controls(zc, out);
  }

  void refresh_if_stale(const VectorXd& x, double rho) {
    const bool stale = rho != rho_ref_ || x_ref_.size() != x.size() ||
                       (x - x_ref_).cwiseAbs().maxCoeff() > 0.02;
    if (!stale) return;
    rho_ref_ = rho;
    x_ref_ = x;
    cache_->ensure(x);

    const int n = layout_.n_knots;
    const int d = layout_.dim;
    const double dt = spec_.dt;
    const double delta = 1.0 + spec_.q_weight;

    if (has_states_) {
      // Joint transport blocks and the block-LDL pivots of
      // T = rho (J_state^T J_state) + delta I.
      const int m = 1 + layout_.n_state_channels;
      const int md = m * d;
      joint_m_.assign(n - 1, CMatrix());
      joint_pinv_.assign(n, CMatrix());
      for (int k = 0; k < n - 1; ++k) {
        CMatrix mk = CMatrix::Zero(md, md);
        for (int blk = 0; blk < m; ++blk) {
          mk.block(blk * d, blk * d, d, d) = cache_->f[k];
        }
        for (int c = 0; c < layout_.n_state_channels; ++c) {
          mk.block((1 + c) * d, 0, d, d) = cache_->l[c][k];
        }
        joint_m_[k] = mk;
      }
      CMatrix pivot(md, md);
      for (int k = 0; k < n; ++k) {
        if (k < n - 1) {
          pivot = rho * (CMatrix::Identity(md, md) +
                         joint_m_[k].adjoint() * joint_m_[k]) +
                  delta * CMatrix::Identity(md, md);
        } else {
          pivot = (rho + delta) * CMatrix::Identity(md, md);
        }
        if (k > 0) {
          pivot -= rho * rho *
                   (joint_m_[k - 1] * joint_pinv_[k - 1] *
                    joint_m_[k - 1].adjoint());
        }
        joint_pinv_[k] = pivot.inverse();
      }

      // Exact dynamics/sensitivity coupling columns B0(:, (k, j)) plus the
      // within-knot control Gram of those rows.
      b_cols_.assign(n_ctrl_vars_, {});
      gram_.assign(n - 1, {});
      const int n_ch = layout_.n_state_channels;
      const int nj = layout_.n_controls;
      std::vector<CMatrix> g_all((1 + n_ch));
      std::vector<std::vector<CMatrix>> g_by_j(nj);
      for (int k = 0; k < n - 1; ++k) {
        const CMatrix u_k = read_cmatrix_at(x, layout_.state_offset(k), d);
        for (int j = 0; j < nj; ++j) {
          const CMatrix lj = cache_->gens[k].frechet(
              CMatrix(kMinusI * dt * spec_.system.controls[j]));
          SparseColumn& col = b_cols_[ctrl_local(k, j, 0)];
          const CMatrix g = lj * u_k;
          g_all[0] = g;
          col.blocks.emplace_back(layout_.state_offset(k + 1), -g);
          CMatrix at_k = cache_->f[k].adjoint() * g;
          for (int c = 0; c < n_ch; ++c) {
            const CMatrix a_ck =
                read_cmatrix_at(x, layout_.sensitivity_offset(c, k), d);
            const CMatrix gc = lj * a_ck;
            g_all[1 + c] = gc;
            col.blocks.emplace_back(layout_.sensitivity_offset(c, k + 1), -gc);
            col.blocks.emplace_back(layout_.sensitivity_offset(c, k),
                                    CMatrix(cache_->f[k].adjoint() * gc));
            at_k += cache_->l[c][k].adjoint() * gc;
          }
          col.blocks.emplace_back(layout_.state_offset(k), at_k);
          g_by_j[j] = g_all;
        }
        gram_[k].assign(nj * nj, 0.0);
        for (int j1 = 0; j1 < nj; ++j1) {
          for (int j2 = j1; j2 < nj; ++j2) {
            double acc = 0.0;
            for (int b = 0; b < 1 + n_ch; ++b) {
              acc += (g_by_j[j1][b].adjoint() * g_by_j[j2][b]).trace().real();
            }
            gram_[k][j1 * nj + j2] = acc;
            gram_[k][j2 * nj + j1] = acc;
          }
        }
      }
    }

    build_schur(rho);

    fid_active_ = has_states_ && spec_.fidelity_min.has_value();
    if (fid_active_) {
      const CMatrix u_n =
          read_cmatrix_at(x, layout_.state_offset(n - 1), d);
      const Complex z = (u_n.adjoint() * spec_.target.goal).trace();
      const CMatrix cot =
          (2.0 / static_cast<double>(d * d)) * std::conj(z) * spec_.target.goal;
      fid_v_ = VectorXd::Zero(x.size());
      add_packed(fid_v_, layout_.state_offset(n - 1), cot, 1.0);
      fid_q_.resize(x.size());
      bordered_solve(rho, fid_v_, fid_q_);
      fid_denom_ = 1.0 + rho * fid_v_.dot(fid_q_);
      if (!(fid_denom_ > 0.0) || !std::isfinite(fid_denom_)) {
        fid_active_ = false;
      }
    }
  }

  void build_schur(double rho) {
    const int n = layout_.n_knots;
    const double dt = spec_.dt;
    const double ridge = std::max(2.0 * spec_.r_weight, 1e-8);
    Eigen::MatrixXd s =
        Eigen::MatrixXd::Zero(n_ctrl_vars_, n_ctrl_vars_);
    for (int j = 0; j < layout_.n_controls; ++j) {
      auto add_row = [&](std::initializer_list<std::pair<int, double>> row) {
        for (const auto& [ia, va] : row) {
          for (const auto& [ib, vb] : row) s(ia, ib) += rho * va * vb;
        }
      };
      for (int k = 0; k < n - 1; ++k) {
        add_row({{ctrl_local(k + 1, j, 0), 1.0},
                 {ctrl_local(k, j, 0), -1.0},
                 {ctrl_local(k, j, 1), -dt}});
        add_row({{ctrl_local(k + 1, j, 1), 1.0},
                 {ctrl_local(k, j, 1), -1.0},
                 {ctrl_local(k, j, 2), -dt}});
      }
      if (!has_states_) {
        // Controls-only model: fold the dynamics coupling into the diagonal.
        const double coupling = dt * dt * spec_.system.controls[j].squaredNorm();
        for (int k = 0; k < n - 1; ++k) {
          s(ctrl_local(k, j, 0), ctrl_local(k, j, 0)) += rho * coupling;
        }
      }
    }
    if (has_states_) {
      const int nj = layout_.n_controls;
      for (int k = 0; k < n - 1; ++k) {
        for (int j1 = 0; j1 < nj; ++j1) {
          for (int j2 = 0; j2 < nj; ++j2) {
            s(ctrl_local(k, j1, 0), ctrl_local(k, j2, 0)) +=
                rho * gram_[k][j1 * nj + j2];
          }
        }
      }
    }
    s.diagonal().array() += ridge;

    if (has_states_) {
      // S -= rho^2 B0^T T^{-1} B0, column by column.
      VectorXd dense = VectorXd::Zero(x_ref_.size());
      VectorXd solved = VectorXd::Zero(x_ref_.size());
      for (int c2 = 0; c2 < n_ctrl_vars_; ++c2) {
        const SparseColumn& col2 = b_cols_[c2];
        if (col2.blocks.empty()) continue;
        dense.setZero();
        for (const auto& [off, m] : col2.blocks) add_packed(dense, off, m, 1.0);
        state_solve(rho, dense, solved);
        for (int c1 = 0; c1 < n_ctrl_vars_; ++c1) {
          const SparseColumn& col1 = b_cols_[c1];
          if (col1.blocks.empty()) continue;
          double acc = 0.0;
          for (const auto& [off, m] : col1.blocks) {
            acc += packed_dot(solved, off, m);
          }
          s(c1, c2) -= rho * rho * acc;
        }
      }
      s = 0.5 * (s + s.transpose()).eval();
    }

    double extra = 0.0;
    for (int attempt = 0; attempt < 10; ++attempt) {
      schur_llt_.compute(s);
      if (schur_llt_.info() == Eigen::Success) return;
      extra = extra == 0.0 ? 1e-10 * s.diagonal().maxCoeff() : extra * 100.0;
      s.diagonal().array() += extra;
    }
    throw std::runtime_error("preconditioner: Schur factorization failed");
  }

  ProblemSpec spec_;
  VariableLayout layout_;
  std::shared_ptr<PropagatorCache> cache_;
  bool has_states_ = false;
  int n_ctrl_vars_ = 0;

  double rho_ref_ = -1.0;
  VectorXd x_ref_;
  std::vector<CMatrix> joint_m_;     // per interval: joint transport
  std::vector<CMatrix> joint_pinv_;  // per knot: inverse block pivots
  std::vector<std::vector<double>> gram_;  // per knot: J x J packed Gram
  std::vector<SparseColumn> b_cols_;
  Eigen::LLT<Eigen::MatrixXd> schur_llt_;

  bool fid_active_ = false;
  VectorXd fid_v_, fid_q_;
  double fid_denom_ = 1.0;
};

/// Metric value plus the cotangents needed by either formulation.
struct MetricGradients {
  std::vector<CMatrix> u_cot;                 // per knot, dPhi/dU_k
  std::vector<CMatrix> a_final_cot;           // per channel, dPhi/dA_{c,N-1}
  Eigen::MatrixXd du_direct;                  // n_knots x J direct u dependence
};

double eval_toggling_metric(const ProblemSpec& spec,
                            const std::vector<CMatrix>& us,
                            const std::vector<CMatrix>& hs,
                            MetricGradients* g) {
  const int n_int = spec.n_intervals();
  const int j = spec.order_j;
  const double dt = spec.dt;
  const double tf2 = spec.t_f() * spec.t_f();
  const double d = static_cast<double>(spec.system.dim);
  const int n_ch = spec.error.n_channels();

  double value = 0.0;
  std::vector<CMatrix> corrected(n_int);
  for (int c = 0; c < n_ch; ++c) {
    const ErrorChannel& ch = spec.error.channels[c];
    CMatrix m = CMatrix::Zero(spec.system.dim, spec.system.dim);
    for (int k = 0; k < n_int; ++k) {
      corrected[k] = j > 0 ? metrics::toggling_term(hs[k], ch.op_at(k), j, dt)
                           : ch.op_at(k);
      m += dt * (us[k].adjoint() * corrected[k] * us[k]);
    }
    const double alpha = ch.weight * ch.weight / (d * tf2);
    value += alpha * m.squaredNorm();

    if (g != nullptr) {
      for (int k = 0; k < n_int; ++k) {
        g->u_cot[k] += (4.0 * alpha * dt) * (corrected[k] * us[k] * m);
      }
      if (j > 0) {
        // Term-by-term derivative of the E_k^{(j)} series with respect to
        // the controls, via self-adjointness of ad_H.
        for (int k = 0; k < n_int; ++k) {
          const CMatrix y = us[k] * m * us[k].adjoint();
          std::vector<CMatrix> y_ad(j), z_ad(j);
          y_ad[0] = y;
          z_ad[0] = ch.op_at(k);
          for (int r = 1; r < j; ++r) {
            y_ad[r] = algebra::commutator(hs[k], y_ad[r - 1]);
            z_ad[r] = algebra::commutator(hs[k], z_ad[r - 1]);
          }
          for (int jj = 0; jj < spec.system.n_controls(); ++jj) {
            const CMatrix& hj = spec.system.controls[jj];
            Complex total(0.0, 0.0);
            Complex kappa(1.0, 0.0);  // i^n dt^n / (n+1)!
            for (int n = 1; n <= j; ++n) {
              kappa *= Complex(0.0, dt) / static_cast<double>(n + 1);
              for (int r = 0; r <= n - 1; ++r) {
                const CMatrix hy = algebra::commutator(hj, y_ad[r]);
                total += kappa * (hy.adjoint() * z_ad[n - 1 - r]).trace();
              }
            }
            g->du_direct(k, jj) += 2.0 * alpha * dt * total.real();
          }
        }
      }
    }
  }
  return value;
}

double eval_universal_metric(const ProblemSpec& spec,
                             const std::vector<CMatrix>& us,
                             const std::vector<CMatrix>& hs,
                             MetricGradients* g) {
  const int n_int = spec.n_intervals();
  const int j = spec.order_j;
  const int d = static_cast<int>(spec.system.dim);
  const double dt = spec.dt;
  const double tf2 = spec.t_f() * spec.t_f();
  const Eigen::Index d2 = spec.system.dim * spec.system.dim;

  std::vector<CMatrix> terms(n_int), bigs(n_int);
  CMatrix k_sum = CMatrix::Zero(d2, d2);
  for (int k = 0; k < n_int; ++k) {
    bigs[k] = algebra::kron(us[k], us[k].conjugate());
    if (j > 0) {
      terms[k] = metrics::universal_term(hs[k], j, dt);
      k_sum += terms[k] * (dt * bigs[k]);
    } else {
      k_sum += dt * bigs[k];
    }
  }
  const double beta = 1.0 / (static_cast<double>(d2) * tf2);
  const double value = beta * k_sum.squaredNorm();
  if (g == nullptr) return value;

  for (int k = 0; k < n_int; ++k) {
    const CMatrix p = j > 0 ? CMatrix(terms[k].adjoint() * k_sum) : k_sum;
    const CMatrix& u = us[k];
    CMatrix v1 = CMatrix::Zero(d, d);
    CMatrix v2 = CMatrix::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      for (int jj = 0; jj < d; ++jj) {
        const auto block = p.block(i * d, jj * d, d, d);
        v1(i, jj) = block.cwiseProduct(u).sum();
        for (int kk = 0; kk < d; ++kk) {
          for (int ll = 0; ll < d; ++ll) {
            v2(kk, ll) += p(i * d + kk, jj * d + ll) * std::conj(u(i, jj));
          }
        }
      }
    }
    g->u_cot[k] += (2.0 * beta * dt) * (v1 + v2.conjugate());

    if (j > 0) {
      const CMatrix s_dag = bigs[k] * k_sum.adjoint();
      const CMatrix l = algebra::kron_sum(kMinusI * hs[k],
                                          kPlusI * hs[k].conjugate());
      std::vector<CMatrix> lp(j);  // L^0 .. L^{j-1}
      lp[0] = CMatrix::Identity(d2, d2);
      for (int r = 1; r < j; ++r) lp[r] = l * lp[r - 1];
      CMatrix accum = CMatrix::Zero(d2, d2);
      double gamma = 1.0;  // dt^n/(n+1)!
      for (int n = 1; n <= j; ++n) {
        gamma = factorial_coeff_step(gamma, dt, n);
        for (int r = 0; r <= n - 1; ++r) {
          accum += gamma * (lp[n - 1 - r] * s_dag * lp[r]);
        }
      }
      for (int jj = 0; jj < spec.system.n_controls(); ++jj) {
        const CMatrix m_j =
            algebra::kron_sum(kMinusI * spec.system.controls[jj],
                              kPlusI * spec.system.controls[jj].conjugate());
        g->du_direct(k, jj) += 2.0 * beta * dt * (accum * m_j).trace().real();
      }
    }
  }
  return value;
}

double eval_adjoint_metric(const ProblemSpec& spec,
                           const std::vector<CMatrix>& us,
                           const std::vector<std::vector<CMatrix>>& as,
                           MetricGradients* g) {
  const double tf2 = spec.t_f() * spec.t_f();
  const double d = static_cast<double>(spec.system.dim);
  const int last = spec.n_knots - 1;
  const double gamma = 1.0 / (d * tf2);
  double value = 0.0;
  for (int c = 0; c < spec.error.n_channels(); ++c) {
    const CMatrix m = us[last].adjoint() * as[c][last];
    value += gamma * m.squaredNorm();
    if (g != nullptr) {
      g->u_cot[last] += (2.0 * gamma) * (as[c][last] * m.adjoint());
      g->a_final_cot[c] += (2.0 * gamma) * (us[last] * m);
    }
  }
  return value;
}

/// Reverse accumulation through the (joint) rollout: adds the control
/// gradient of sum_k <<ubar_k, dU_k>> + sum_c <<abar_c, dA_{c,N-1}>>.
void backprop_rollout(const ProblemSpec& spec, const VariableLayout& layout,
                      PropagatorCache& cache, std::vector<CMatrix> ubar,
                      std::vector<CMatrix> abar, VectorXd& grad) {
  const double dt = spec.dt;
  const int n_ch = static_cast<int>(abar.size());
  const Eigen::Index d = spec.system.dim;
  for (int k = spec.n_intervals() - 1; k >= 0; --k) {
    const CMatrix& u_k = cache.us[k];
    if (ubar[k + 1].size() > 0) {
      const CMatrix w =
          cache.gens[k].frechet_adjoint(CMatrix(ubar[k + 1] * u_k.adjoint()));
      for (int jj = 0; jj < spec.system.n_controls(); ++jj) {
        grad[layout.u_index(k, jj)] +=
            dt * (w.adjoint() * spec.system.controls[jj]).trace().imag();
      }
      if (ubar[k].size() == 0) ubar[k] = CMatrix::Zero(d, d);
      ubar[k] += cache.f[k].adjoint() * ubar[k + 1];
    }
    const CMatrix a_dag = kPlusI * dt * cache.h[k];  // (-i dt H)^dag
    for (int c = 0; c < n_ch; ++c) {
      if (abar[c].size() == 0) continue;
      CMatrix block_a_dag = CMatrix::Zero(2 * d, 2 * d);
      block_a_dag.topLeftCorner(d, d) = a_dag;
      block_a_dag.bottomRightCorner(d, d) = a_dag;
      const ErrorChannel& ch = spec.error.channels[c];
      block_a_dag.topRightCorner(d, d) =
          kPlusI * dt * ch.weight * ch.op_at(k);
      CMatrix y_big = CMatrix::Zero(2 * d, 2 * d);
      y_big.bottomLeftCorner(d, d) = abar[c] * u_k.adjoint();
      y_big.bottomRightCorner(d, d) = abar[c] * cache.as[c][k].adjoint();
      const CMatrix w = algebra::expm_frechet(block_a_dag, y_big).derivative;
      for (int jj = 0; jj < spec.system.n_controls(); ++jj) {
        const CMatrix& hj = spec.system.controls[jj];
        grad[layout.u_index(k, jj)] +=
            dt * ((w.topLeftCorner(d, d).adjoint() * hj).trace().imag() +
                  (w.bottomRightCorner(d, d).adjoint() * hj).trace().imag());
      }
      if (ubar[k].size() == 0) ubar[k] = CMatrix::Zero(d, d);
      ubar[k] += cache.l[c][k].adjoint() * abar[c];
      abar[c] = cache.f[k].adjoint() * abar[c];
    }
  }
}

double regularization_of(const VectorXd& x, const VariableLayout& layout,
                         double r_weight, VectorXd* grad) {
  const int nu = layout.n_knots * layout.n_controls;
  const int nddu = (layout.n_knots - 1) * layout.n_controls;
  double val = 0.0;
  for (int i = 0; i < nu; ++i) {
    val += x[layout.u_offset + i] * x[layout.u_offset + i] +
           x[layout.du_offset + i] * x[layout.du_offset + i];
  }
  for (int i = 0; i < nddu; ++i) {
    val += x[layout.ddu_offset + i] * x[layout.ddu_offset + i];
  }
  if (grad != nullptr) {
    for (int i = 0; i < nu; ++i) {
      (*grad)[layout.u_offset + i] += 2.0 * r_weight * x[layout.u_offset + i];
      (*grad)[layout.du_offset + i] += 2.0 * r_weight * x[layout.du_offset + i];
    }
    for (int i = 0; i < nddu; ++i) {
      (*grad)[layout.ddu_offset + i] +=
          2.0 * r_weight * x[layout.ddu_offset + i];
    }
  }
  return r_weight * val;
}

void append_chain_blocks(const ProblemSpec& spec, const VariableLayout& layout,
                         nlp::NLPProblem& problem) {
  const int n_int = spec.n_intervals();
  const int nj = spec.system.n_controls();
  const double dt = spec.dt;

  nlp::ConstraintBlock chain_u;
  chain_u.name = "chain_u";
  chain_u.dim = n_int * nj;
  chain_u.eval = [layout, n_int, nj, dt](const VectorXd& x,
                                         Eigen::Ref<VectorXd> out) {
    for (int k = 0, i = 0; k < n_int; ++k) {
      for (int j = 0; j < nj; ++j, ++i) {
        out[i] = x[layout.u_index(k + 1, j)] - x[layout.u_index(k, j)] -
                 dt * x[layout.du_index(k, j)];
      }
    }
  };
  chain_u.add_jtv = [layout, n_int, nj, dt](const VectorXd&, const VectorXd& y,
                                            VectorXd& grad) {
    for (int k = 0, i = 0; k < n_int; ++k) {
      for (int j = 0; j < nj; ++j, ++i) {
        grad[layout.u_index(k + 1, j)] += y[i];
        grad[layout.u_index(k, j)] -= y[i];
        grad[layout.du_index(k, j)] -= dt * y[i];
      }
    }
  };
  problem.eq_constraints.push_back(std::move(chain_u));

  nlp::ConstraintBlock chain_du;
  chain_du.name = "chain_du";
  chain_du.dim = n_int * nj;
  chain_du.eval = [layout, n_int, nj, dt](const VectorXd& x,
                                          Eigen::Ref<VectorXd> out) {
    for (int k = 0, i = 0; k < n_int; ++k) {
      for (int j = 0; j < nj; ++j, ++i) {
        out[i] = x[layout.du_index(k + 1, j)] - x[layout.du_index(k, j)] -
                 dt * x[layout.ddu_index(k, j)];
      }
    }
  };
  chain_du.add_jtv = [layout, n_int, nj, dt](const VectorXd&, const VectorXd& y,
                                             VectorXd& grad) {
    for (int k = 0, i = 0; k < n_int; ++k) {
      for (int j = 0; j < nj; ++j, ++i) {
        grad[layout.du_index(k + 1, j)] += y[i];
        grad[layout.du_index(k, j)] -= y[i];
        grad[layout.ddu_index(k, j)] -= dt * y[i];
      }
    }
  };
  problem.eq_constraints.push_back(std::move(chain_du));
}

void set_control_bounds(const ProblemSpec& spec, const VariableLayout& layout,
                        nlp::NLPProblem& problem) {
  if (!spec.constrain_controls) return;
  problem.lower = VectorXd::Constant(layout.n_vars, -kInf);
  problem.upper = VectorXd::Constant(layout.n_vars, kInf);
  const int nj = spec.system.n_controls();
  auto cap = [](const VectorXd& caps, int j) {
    return caps.size() > 0 ? caps[j] : kInf;
  };
  for (int k = 0; k < spec.n_knots; ++k) {
    for (int j = 0; j < nj; ++j) {
      const double cu = cap(spec.bounds.u, j);
      problem.lower[layout.u_index(k, j)] = -cu;
      problem.upper[layout.u_index(k, j)] = cu;
      const double cdu = cap(spec.bounds.du, j);
      problem.lower[layout.du_index(k, j)] = -cdu;
      problem.upper[layout.du_index(k, j)] = cdu;
      if (k < spec.n_knots - 1) {
        const double cddu = cap(spec.bounds.ddu, j);
        problem.lower[layout.ddu_index(k, j)] = -cddu;
        problem.upper[layout.ddu_index(k, j)] = cddu;
      }
    }
  }
}

}  // namespace

std::string to_string(Formulation f) {
  return f == Formulation::direct ? "direct" : "indirect";
}

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::none: return "none";
    case ObjectiveKind::toggling: return "toggling";
    case ObjectiveKind::universal: return "universal";
    case ObjectiveKind::adjoint: return "adjoint";
  }
  return "none";
}

Formulation formulation_from_string(const std::string& s) {
  if (s == "direct") return Formulation::direct;
  if (s == "indirect") return Formulation::indirect;
  throw std::invalid_argument("unknown formulation: " + s);
}

ObjectiveKind objective_from_string(const std::string& s) {
  if (s == "none") return ObjectiveKind::none;
  if (s == "toggling") return ObjectiveKind::toggling;
  if (s == "universal") return ObjectiveKind::universal;
  if (s == "adjoint") return ObjectiveKind::adjoint;
  throw std::invalid_argument("unknown objective: " + s);
}

ControlBounds ControlBounds::uniform(int n_controls, double u_cap,
                                     double du_cap, double ddu_cap) {
  ControlBounds b;
  b.u = VectorXd::Constant(n_controls, u_cap);
  b.du = VectorXd::Constant(n_controls, du_cap);
  b.ddu = VectorXd::Constant(n_controls, ddu_cap);
  return b;
}

void ProblemSpec::validate() const {
  system.validate();
  if (n_knots < 2) throw std::invalid_argument("ProblemSpec: n_knots < 2");
  if (!(dt > 0.0)) throw std::invalid_argument("ProblemSpec: dt <= 0");
  if (q_weight < 0.0 || r_weight < 0.0) {
    throw std::invalid_argument("ProblemSpec: Q and R must be >= 0");
  }
  if (fidelity_min) {
    if (!(*fidelity_min > 0.0 && *fidelity_min <= 1.0)) {
      throw std::invalid_argument("ProblemSpec: fidelity_min outside (0, 1]");
    }
    target.validate();
    if (target.goal.rows() != system.dim) {
      throw std::invalid_argument("ProblemSpec: goal dimension mismatch");
    }
  }
  if (objective == ObjectiveKind::toggling ||
      objective == ObjectiveKind::adjoint) {
    error.validate(n_intervals(), system.dim);
  }
  if (objective == ObjectiveKind::universal && !error.channels.empty() &&
      !error.is_static()) {
    throw std::invalid_argument(
        "ProblemSpec: the universal objective applies to quasi-static errors "
        "only; use the toggling or adjoint objective for time-dependent "
        "error models");
  }
  if (objective == ObjectiveKind::toggling ||
      objective == ObjectiveKind::universal) {
    if (order_j < 0 || order_j > metrics::MetricConfig::kMaxOrder) {
      throw std::invalid_argument("ProblemSpec: order_j outside [0, 12]");
    }
  }
  auto check_caps = [&](const VectorXd& caps, const char* which) {
    if (caps.size() > 0 && caps.size() != system.n_controls()) {
      throw std::invalid_argument(std::string("ProblemSpec: ") + which +
                                  " cap count mismatch");
    }
  };
  check_caps(bounds.u, "u");
  check_caps(bounds.du, "du");
  check_caps(bounds.ddu, "ddu");
}

int VariableLayout::state_offset(int k) const {
  return k * state_stride;
}

int VariableLayout::sensitivity_offset(int channel, int k) const {
  return k * state_stride + (1 + channel) * matrix_size();
}

VariableLayout VariableLayout::create(const ProblemSpec& spec) {
  VariableLayout lay;
  lay.formulation = spec.formulation;
  lay.n_knots = spec.n_knots;
  lay.dim = static_cast<int>(spec.system.dim);
  lay.n_controls = spec.system.n_controls();
  const bool adjoint_states = spec.formulation == Formulation::direct &&
                              spec.objective == ObjectiveKind::adjoint;
  lay.n_state_channels = adjoint_states ? spec.error.n_channels() : 0;
  if (spec.formulation == Formulation::direct) {
    lay.state_stride = (1 + lay.n_state_channels) * lay.matrix_size();
  } else {
    lay.state_stride = 0;
  }
  const int states_total = lay.n_knots * lay.state_stride;
  lay.u_offset = states_total;
  lay.du_offset = lay.u_offset + lay.n_knots * lay.n_controls;
  lay.ddu_offset = lay.du_offset + lay.n_knots * lay.n_controls;
  lay.n_vars = lay.ddu_offset + (lay.n_knots - 1) * lay.n_controls;
  return lay;
}

CMatrix read_cmatrix(const VectorXd& x, int offset, int dim) {
  return read_cmatrix_at(x, offset, dim);
}

void write_cmatrix(VectorXd& x, int offset, const CMatrix& m) {
  write_cmatrix_at(x, offset, m);
}

double regularization(const ControlTrajectory& traj) {
  traj.validate();
  return traj.u.squaredNorm() + traj.du.squaredNorm() + traj.ddu.squaredNorm();
}

BuiltProblem build_direct(const ProblemSpec& spec_in) {
  ProblemSpec spec = spec_in;
  spec.formulation = Formulation::direct;
  spec.validate();
  const VariableLayout layout = VariableLayout::create(spec);
  const int d = layout.dim;
  const int n_int = spec.n_intervals();
  const int n_ch = layout.n_state_channels;
  const int msize = layout.matrix_size();

  auto cache = std::make_shared<PropagatorCache>();
  cache->spec = spec;
  cache->layout = layout;
  cache->with_channels = n_ch > 0;
  cache->with_rollout = false;

  nlp::NLPProblem problem;
  problem.n_vars = layout.n_vars;

  const ProblemSpec sp = spec;  // captured by value below
  problem.objective = [sp, layout](const VectorXd& x,
                                   VectorXd* grad) -> double {
    double val = regularization_of(x, layout, sp.r_weight, grad);
    if (sp.objective == ObjectiveKind::none || sp.q_weight == 0.0) return val;

    std::vector<CMatrix> us(sp.n_knots);
    for (int k = 0; k < sp.n_knots; ++k) {
      us[k] = read_cmatrix_at(x, layout.state_offset(k), layout.dim);
    }
    std::vector<CMatrix> hs;
    if (sp.order_j > 0 && sp.objective != ObjectiveKind::adjoint) {
      hs.resize(sp.n_intervals());
      Eigen::VectorXd u_k(layout.n_controls);
      for (int k = 0; k < sp.n_intervals(); ++k) {
        for (int j = 0; j < layout.n_controls; ++j) {
          u_k[j] = x[layout.u_index(k, j)];
        }
        hs[k] = dynamics::hamiltonian_at(sp.system, u_k);
      }
    }

    MetricGradients g;
    MetricGradients* gp = grad != nullptr ? &g : nullptr;
    if (gp != nullptr) {
      g.u_cot.assign(sp.n_knots, CMatrix::Zero(layout.dim, layout.dim));
      g.a_final_cot.assign(sp.error.n_channels(),
                           CMatrix::Zero(layout.dim, layout.dim));
      g.du_direct = Eigen::MatrixXd::Zero(sp.n_knots, layout.n_controls);
    }

    double metric = 0.0;
    switch (sp.objective) {
      case ObjectiveKind::toggling:
        metric = eval_toggling_metric(sp, us, hs, gp);
        break;
      case ObjectiveKind::universal:
        metric = eval_universal_metric(sp, us, hs, gp);
        break;
      case ObjectiveKind::adjoint: {
        std::vector<std::vector<CMatrix>> as(sp.error.n_channels());
        for (int c = 0; c < sp.error.n_channels(); ++c) {
          as[c].resize(sp.n_knots);
          for (int k = 0; k < sp.n_knots; ++k) {
            as[c][k] =
                read_cmatrix_at(x, layout.sensitivity_offset(c, k), layout.dim);
          }
        }
        metric = eval_adjoint_metric(sp, us, as, gp);
        break;
      }
      case ObjectiveKind::none:
        break;
    }
    val += sp.q_weight * metric;

    if (grad != nullptr) {
      for (int k = 0; k < sp.n_knots; ++k) {
        add_cotangent(*grad, layout.state_offset(k), sp.q_weight * g.u_cot[k]);
      }
      for (int c = 0; c < static_cast<int>(g.a_final_cot.size()); ++c) {
        add_cotangent(*grad, layout.sensitivity_offset(c, sp.n_knots - 1),
                      sp.q_weight * g.a_final_cot[c]);
      }
      for (int k = 0; k < sp.n_knots; ++k) {
        for (int j = 0; j < layout.n_controls; ++j) {
          (*grad)[layout.u_index(k, j)] += sp.q_weight * g.du_direct(k, j);
        }
      }
    }
    return val;
  };

  // Initial conditions: U_0 = I and every sensitivity block starts at zero.
  {
    nlp::ConstraintBlock init;
    init.name = "initial_conditions";
    init.dim = (1 + n_ch) * msize;
    init.eval = [layout, d, n_ch, msize](const VectorXd& x,
                                         Eigen::Ref<VectorXd> out) {
      const CMatrix u0 = read_cmatrix_at(x, layout.state_offset(0), d);
      write_cmatrix_at(out, 0, u0 - CMatrix::Identity(d, d));
      for (int c = 0; c < n_ch; ++c) {
        const CMatrix a0 =
            read_cmatrix_at(x, layout.sensitivity_offset(c, 0), d);
        write_cmatrix_at(out, (1 + c) * msize, a0);
      }
    };
    init.add_jtv = [layout, n_ch, msize](const VectorXd&, const VectorXd& y,
                                         VectorXd& grad) {
      grad.segment(layout.state_offset(0), (1 + n_ch) * msize) += y;
    };
    problem.eq_constraints.push_back(std::move(init));
  }

  // Dynamics: U_{k+1} = exp(-i H(u_k) dt) U_k per interval.
  {
    nlp::ConstraintBlock dyn;
    dyn.name = "dynamics";
    dyn.dim = n_int * msize;
    dyn.eval = [cache, layout, d, msize, n_int](const VectorXd& x,
                                                Eigen::Ref<VectorXd> out) {
      cache->ensure(x);
      for (int k = 0; k < n_int; ++k) {
        const CMatrix u_k = read_cmatrix_at(x, layout.state_offset(k), d);
        const CMatrix u_next =
            read_cmatrix_at(x, layout.state_offset(k + 1), d);
        write_cmatrix_at(out, k * msize, u_next - cache->f[k] * u_k);
      }
    };
    const ProblemSpec spc = spec;
    dyn.add_jtv = [cache, layout, spc, d, msize, n_int](
                      const VectorXd& x, const VectorXd& y, VectorXd& grad) {
      cache->ensure(x);
      const double dt = spc.dt;
      for (int k = 0; k < n_int; ++k) {
        const CMatrix yk = read_cmatrix_at(y, k * msize, d);
        add_cotangent(grad, layout.state_offset(k + 1), yk);
        add_cotangent(grad, layout.state_offset(k),
                      CMatrix(-cache->f[k].adjoint() * yk));
        const CMatrix u_k = read_cmatrix_at(x, layout.state_offset(k), d);
        const CMatrix w =
            cache->gens[k].frechet_adjoint(CMatrix(yk * u_k.adjoint()));
        for (int j = 0; j < layout.n_controls; ++j) {
          grad[layout.u_index(k, j)] -=
              dt * (w.adjoint() * spc.system.controls[j]).trace().imag();
        }
      }
    };
    problem.eq_constraints.push_back(std::move(dyn));
  }

  // Sensitivity dynamics per channel (adjoint objective only):
  // A_{c,k+1} = L_c(u_k) U_k + F(u_k) A_{c,k}.
  if (n_ch > 0) {
    nlp::ConstraintBlock adyn;
    adyn.name = "sensitivity_dynamics";
    adyn.dim = n_ch * n_int * msize;
    adyn.eval = [cache, layout, d, msize, n_int, n_ch](
                    const VectorXd& x, Eigen::Ref<VectorXd> out) {
      cache->ensure(x);
      for (int c = 0; c < n_ch; ++c) {
        for (int k = 0; k < n_int; ++k) {
          const CMatrix u_k = read_cmatrix_at(x, layout.state_offset(k), d);
          const CMatrix a_k =
              read_cmatrix_at(x, layout.sensitivity_offset(c, k), d);
          const CMatrix a_next =
              read_cmatrix_at(x, layout.sensitivity_offset(c, k + 1), d);
          write_cmatrix_at(out, (c * n_int + k) * msize,
                           a_next - cache->l[c][k] * u_k - cache->f[k] * a_k);
        }
      }
    };
    const ProblemSpec spc = spec;
    adyn.add_jtv = [cache, layout, spc, d, msize, n_int, n_ch](
                       const VectorXd& x, const VectorXd& y, VectorXd& grad) {
      cache->ensure(x);
      const double dt = spc.dt;
      for (int c = 0; c < n_ch; ++c) {
        const ErrorChannel& ch = spc.error.channels[c];
        for (int k = 0; k < n_int; ++k) {
          const CMatrix yk = read_cmatrix_at(y, (c * n_int + k) * msize, d);
          add_cotangent(grad, layout.sensitivity_offset(c, k + 1), yk);
          add_cotangent(grad, layout.state_offset(k),
                        CMatrix(-cache->l[c][k].adjoint() * yk));
          add_cotangent(grad, layout.sensitivity_offset(c, k),
                        CMatrix(-cache->f[k].adjoint() * yk));
          const CMatrix u_k = read_cmatrix_at(x, layout.state_offset(k), d);
          const CMatrix a_k =
              read_cmatrix_at(x, layout.sensitivity_offset(c, k), d);
          CMatrix block_a_dag = CMatrix::Zero(2 * d, 2 * d);
          block_a_dag.topLeftCorner(d, d) = kPlusI * dt * cache->h[k];
          block_a_dag.bottomRightCorner(d, d) = kPlusI * dt * cache->h[k];
          block_a_dag.topRightCorner(d, d) =
              kPlusI * dt * ch.weight * ch.op_at(k);
          CMatrix y_big = CMatrix::Zero(2 * d, 2 * d);
          y_big.bottomLeftCorner(d, d) = yk * u_k.adjoint();
          y_big.bottomRightCorner(d, d) = yk * a_k.adjoint();
          const CMatrix w = algebra::expm_frechet(block_a_dag, y_big).derivative;
          for (int j = 0; j < layout.n_controls; ++j) {
            const CMatrix& hj = spc.system.controls[j];
            grad[layout.u_index(k, j)] -=
                dt * ((w.topLeftCorner(d, d).adjoint() * hj).trace().imag() +
                      (w.bottomRightCorner(d, d).adjoint() * hj).trace().imag());
          }
        }
      }
    };
    problem.eq_constraints.push_back(std::move(adyn));
  }

  append_chain_blocks(spec, layout, problem);

  if (spec.fidelity_min) {
    const double threshold_sq = *spec.fidelity_min * *spec.fidelity_min;
    const CMatrix goal = spec.target.goal;
    nlp::ConstraintBlock fid;
    fid.name = "fidelity_threshold";
    fid.dim = 1;
    fid.eval = [layout, goal, threshold_sq, d](const VectorXd& x,
                                               Eigen::Ref<VectorXd> out) {
      const CMatrix u_n =
          read_cmatrix_at(x, layout.state_offset(layout.n_knots - 1), d);
      out[0] = threshold_sq - fidelity_sq(u_n, goal, nullptr);
    };
    fid.add_jtv = [layout, goal, d](const VectorXd& x, const VectorXd& y,
                                    VectorXd& grad) {
      const CMatrix u_n =
          read_cmatrix_at(x, layout.state_offset(layout.n_knots - 1), d);
      CMatrix cot;
      fidelity_sq(u_n, goal, &cot);
      add_cotangent(grad, layout.state_offset(layout.n_knots - 1),
                    CMatrix(-y[0] * cot));
    };
    problem.ineq_constraints.push_back(std::move(fid));
  }

  auto precond = std::make_shared<ChainPreconditioner>(spec, layout, cache);
  problem.preconditioner = [precond](const VectorXd& x, double rho,
                                     const VectorXd& r, VectorXd& out) {
    precond->apply(x, rho, r, out);
  };
  set_control_bounds(spec, layout, problem);
  return {std::move(problem), layout};
}

BuiltProblem build_indirect(const ProblemSpec& spec_in) {
  ProblemSpec spec = spec_in;
  spec.formulation = Formulation::indirect;
  spec.validate();
  const VariableLayout layout = VariableLayout::create(spec);

  auto cache = std::make_shared<PropagatorCache>();
  cache->spec = spec;
  cache->layout = layout;
  cache->with_channels = spec.objective == ObjectiveKind::adjoint;
  cache->with_rollout = true;

  nlp::NLPProblem problem;
  problem.n_vars = layout.n_vars;

  const ProblemSpec sp = spec;
  problem.objective = [sp, layout, cache](const VectorXd& x,
                                          VectorXd* grad) -> double {
    double val = regularization_of(x, layout, sp.r_weight, grad);
    if (sp.objective == ObjectiveKind::none || sp.q_weight == 0.0) return val;

    cache->ensure(x);
    MetricGradients g;
    MetricGradients* gp = grad != nullptr ? &g : nullptr;
    if (gp != nullptr) {
      g.u_cot.assign(sp.n_knots, CMatrix::Zero(layout.dim, layout.dim));
      g.a_final_cot.assign(sp.error.n_channels(),
                           CMatrix::Zero(layout.dim, layout.dim));
      g.du_direct = Eigen::MatrixXd::Zero(sp.n_knots, layout.n_controls);
    }

    double metric = 0.0;
    switch (sp.objective) {
      case ObjectiveKind::toggling:
        metric = eval_toggling_metric(sp, cache->us, cache->h, gp);
        break;
      case ObjectiveKind::universal:
        metric = eval_universal_metric(sp, cache->us, cache->h, gp);
        break;
      case ObjectiveKind::adjoint:
        metric = eval_adjoint_metric(sp, cache->us, cache->as, gp);
        break;
      case ObjectiveKind::none:
        break;
    }
    val += sp.q_weight * metric;

    if (grad != nullptr) {
      std::vector<CMatrix> ubar(sp.n_knots);
      for (int k = 0; k < sp.n_knots; ++k) {
        if (g.u_cot[k].squaredNorm() > 0.0) {
          ubar[k] = sp.q_weight * g.u_cot[k];
        }
      }
      std::vector<CMatrix> abar(sp.error.n_channels());
      for (int c = 0; c < sp.error.n_channels(); ++c) {
        if (sp.objective == ObjectiveKind::adjoint) {
          abar[c] = sp.q_weight * g.a_final_cot[c];
        }
      }
      backprop_rollout(sp, layout, *cache, std::move(ubar), std::move(abar),
                       *grad);
      for (int k = 0; k < sp.n_knots; ++k) {
        for (int j = 0; j < layout.n_controls; ++j) {
          (*grad)[layout.u_index(k, j)] += sp.q_weight * g.du_direct(k, j);
        }
      }
    }
    return val;
  };

  append_chain_blocks(spec, layout, problem);

  if (spec.fidelity_min) {
    const double threshold_sq = *spec.fidelity_min * *spec.fidelity_min;
    const CMatrix goal = spec.target.goal;
    nlp::ConstraintBlock fid;
    fid.name = "fidelity_threshold";
    fid.dim = 1;
    fid.eval = [cache, goal, threshold_sq](const VectorXd& x,
                                           Eigen::Ref<VectorXd> out) {
      cache->ensure(x);
      out[0] = threshold_sq - fidelity_sq(cache->us.back(), goal, nullptr);
    };
    const ProblemSpec spc = spec;
    fid.add_jtv = [cache, layout, spc, goal](const VectorXd& x,
                                             const VectorXd& y,
                                             VectorXd& grad) {
      cache->ensure(x);
      CMatrix cot;
      fidelity_sq(cache->us.back(), goal, &cot);
      std::vector<CMatrix> ubar(spc.n_knots);
      ubar[spc.n_knots - 1] = -y[0] * cot;
      backprop_rollout(spc, layout, *cache, std::move(ubar), {}, grad);
    };
    problem.ineq_constraints.push_back(std::move(fid));
  }

  auto precond = std::make_shared<ChainPreconditioner>(spec, layout, cache);
  problem.preconditioner = [precond](const VectorXd& x, double rho,
                                     const VectorXd& r, VectorXd& out) {
    precond->apply(x, rho, r, out);
  };
  set_control_bounds(spec, layout, problem);
  return {std::move(problem), layout};
}

BuiltProblem build(const ProblemSpec& spec) {
  return spec.formulation == Formulation::direct ? build_direct(spec)
                                                 : build_indirect(spec);
}

VectorXd initialize(const ProblemSpec& spec, const VariableLayout& layout,
                    std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto uniform = [&gen]() {
    return 2.0 * ((gen() >> 11) * 0x1.0p-53) - 1.0;  // [-1, 1)
  };

  const int n = spec.n_knots;
  const int nj = spec.system.n_controls();
  ControlTrajectory traj = ControlTrajectory::zeros(n, spec.dt, nj);
  for (int j = 0; j < nj; ++j) {
    double a[4], b[4];
    for (int m = 0; m < 4; ++m) {
      a[m] = uniform();
      b[m] = uniform();
    }
    double peak = 0.0;
    Eigen::VectorXd raw(n);
    for (int k = 0; k < n; ++k) {
      const double phase = 2.0 * M_PI * k / (n - 1);
      double v = 0.0;
      for (int m = 0; m < 4; ++m) {
        v += a[m] * std::cos((m + 1) * phase) + b[m] * std::sin((m + 1) * phase);
      }
      raw[k] = v;
      peak = std::max(peak, std::abs(v));
    }
    double cap = 1.0;
    if (spec.constrain_controls && spec.bounds.u.size() > 0 &&
        std::isfinite(spec.bounds.u[j])) {
      cap = spec.bounds.u[j];
    }
    const double scale = peak > 0.0 ? 0.5 * cap / peak : 0.0;
    for (int k = 0; k < n; ++k) traj.u(k, j) = scale * raw[k];
  }
  for (int k = 0; k < n - 1; ++k) {
    traj.du.row(k) = (traj.u.row(k + 1) - traj.u.row(k)) / spec.dt;
  }
  traj.du.row(n - 1) = traj.du.row(n - 2);
  for (int k = 0; k < n - 1; ++k) {
    traj.ddu.row(k) = (traj.du.row(k + 1) - traj.du.row(k)) / spec.dt;
  }
  if (spec.constrain_controls) {
    auto clip = [](Eigen::MatrixXd& m, const VectorXd& caps) {
      if (caps.size() == 0) return;
      for (int j = 0; j < m.cols(); ++j) {
        m.col(j) = m.col(j).cwiseMax(-caps[j]).cwiseMin(caps[j]);
      }
    };
    clip(traj.u, spec.bounds.u);
    clip(traj.du, spec.bounds.du);
    clip(traj.ddu, spec.bounds.ddu);
  }
  return pack_from_rollout(spec, layout, traj);
}

VectorXd pack_from_rollout(const ProblemSpec& spec,
                           const VariableLayout& layout,
                           const ControlTrajectory& traj) {
  if (traj.n_knots != spec.n_knots ||
      traj.u.cols() != spec.system.n_controls()) {
    throw std::invalid_argument("pack_from_rollout: trajectory shape mismatch");
  }
  VectorXd x = VectorXd::Zero(layout.n_vars);
  for (int k = 0; k < spec.n_knots; ++k) {
    for (int j = 0; j < layout.n_controls; ++j) {
      x[layout.u_index(k, j)] = traj.u(k, j);
      x[layout.du_index(k, j)] = traj.du(k, j);
      if (k < spec.n_knots - 1) x[layout.ddu_index(k, j)] = traj.ddu(k, j);
    }
  }
  if (layout.formulation == Formulation::direct) {
    if (layout.n_state_channels > 0) {
      const dynamics::AdjointRollout joint =
          dynamics::adjoint_rollout(spec.system, traj, spec.error);
      for (int k = 0; k < spec.n_knots; ++k) {
        write_cmatrix_at(x, layout.state_offset(k), joint.unitaries.knots[k]);
        for (int c = 0; c < layout.n_state_channels; ++c) {
          write_cmatrix_at(x, layout.sensitivity_offset(c, k),
                           joint.sensitivities[c][k]);
        }
      }
    } else {
      const dynamics::UnitaryTrajectory us = dynamics::rollout(spec.system, traj);
      for (int k = 0; k < spec.n_knots; ++k) {
        write_cmatrix_at(x, layout.state_offset(k), us.knots[k]);
      }
    }
  }
  return x;
}

ControlTrajectory extract_controls(const VectorXd& x,
                                   const VariableLayout& layout, double dt) {
  ControlTrajectory traj =
      ControlTrajectory::zeros(layout.n_knots, dt, layout.n_controls);
  for (int k = 0; k < layout.n_knots; ++k) {
    for (int j = 0; j < layout.n_controls; ++j) {
      traj.u(k, j) = x[layout.u_index(k, j)];
      traj.du(k, j) = x[layout.du_index(k, j)];
      if (k < layout.n_knots - 1) traj.ddu(k, j) = x[layout.ddu_index(k, j)];
    }
  }
  return traj;
}

std::vector<IterateStats> analyze_iterates(const nlp::SolveReport& report,
                                           const ProblemSpec& spec,
                                           const VariableLayout& layout) {
  if (report.iterate_snapshots.empty()) {
    throw std::invalid_argument(
        "analyze_iterates: the report holds no iterate snapshots");
  }
  std::vector<IterateStats> out;
  out.reserve(report.iterate_snapshots.size());
  for (std::size_t i = 0; i < report.iterate_snapshots.size(); ++i) {
    const VectorXd& x = report.iterate_snapshots[i];
    IterateStats s;
    s.max_du = x.segment(layout.du_offset, layout.n_knots * layout.n_controls)
                   .cwiseAbs()
                   .maxCoeff();
    s.max_ddu =
        x.segment(layout.ddu_offset, (layout.n_knots - 1) * layout.n_controls)
            .cwiseAbs()
            .maxCoeff();
    s.objective = i < report.iterate_objectives.size()
                      ? report.iterate_objectives[i]
                      : 0.0;
    CMatrix u_final;
    if (layout.formulation == Formulation::direct) {
      u_final =
          read_cmatrix_at(x, layout.state_offset(layout.n_knots - 1), layout.dim);
    } else {
      const ControlTrajectory traj = extract_controls(x, layout, spec.dt);
      u_final = dynamics::rollout(spec.system, traj).final_unitary();
    }
    s.fidelity = spec.target.goal.size() > 0
                     ? dynamics::fidelity(u_final, spec.target)
                     : 0.0;
    out.push_back(s);
  }
  return out;
}

}  // namespace rqoc::trajopt
