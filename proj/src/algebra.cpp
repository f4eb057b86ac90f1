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

#include "rqoc/algebra.hpp"

#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace rqoc::algebra {

namespace {

void require_square_same_dim(const CMatrix& a, const CMatrix& b,
                             const char* what) {
  if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows()) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  }
}

bool all_finite(const CMatrix& a) { return a.allFinite(); }

}  // namespace

PauliString PauliString::parse(std::string_view label, double coefficient) {
  if (label.empty()) {
    throw std::invalid_argument("PauliString::parse: empty label");
  }
  std::vector<Pauli> factors;
  factors.reserve(label.size());
  for (char c : label) {
    switch (c) {
      case 'I': factors.push_back(Pauli::I); break;
      case 'X': factors.push_back(Pauli::X); break;
      case 'Y': factors.push_back(Pauli::Y); break;
      case 'Z': factors.push_back(Pauli::Z); break;
      default:
        throw std::invalid_argument("PauliString::parse: bad label character");
    }
  }
  return PauliString(std::move(factors), coefficient);
}

std::string PauliString::label() const {
  std::string out;
  out.reserve(factors.size());
  for (Pauli p : factors) out.push_back(static_cast<char>(p));
  return out;
}

CMatrix pauli_matrix(Pauli p) {
  CMatrix m(2, 2);
  const Complex i(0.0, 1.0);
  switch (p) {
    case Pauli::I: m << 1, 0, 0, 1; break;
    case Pauli::X: m << 0, 1, 1, 0; break;
    case Pauli::Y: m << 0, -i, i, 0; break;
    case Pauli::Z: m << 1, 0, 0, -1; break;
  }
  return m;
}

CMatrix pauli_string_matrix(const PauliString& s) {
  if (s.factors.empty()) {
    throw std::invalid_argument("pauli_string_matrix: empty factor list");
  }
  CMatrix m = pauli_matrix(s.factors.front());
  for (std::size_t q = 1; q < s.factors.size(); ++q) {
    m = kron(m, pauli_matrix(s.factors[q]));
  }
  return s.coefficient * m;
}

std::vector<PauliString> nontrivial_pauli_strings(int n_qubits) {
  if (n_qubits < 1) {
    throw std::invalid_argument("nontrivial_pauli_strings: n_qubits < 1");
  }
  static constexpr Pauli kOrder[4] = {Pauli::I, Pauli::X, Pauli::Y, Pauli::Z};
  const long total = 1L << (2 * n_qubits);  // 4^n
  std::vector<PauliString> out;
  out.reserve(total - 1);
  for (long code = 1; code < total; ++code) {
    std::vector<Pauli> factors(n_qubits);
    long rem = code;
    for (int q = n_qubits - 1; q >= 0; --q) {
      factors[q] = kOrder[rem % 4];
      rem /= 4;
    }
    out.emplace_back(std::move(factors), 1.0);
  }
  return out;
}

double hs_norm_sq(const CMatrix& a) {
  return a.squaredNorm() / static_cast<double>(a.rows());
}

double frobenius_sq(const CMatrix& a) { return a.squaredNorm(); }

CMatrix commutator(const CMatrix& a, const CMatrix& b) {
  require_square_same_dim(a, b, "commutator");
  return a * b - b * a;
}

CMatrix iterated_ad(const CMatrix& h, const CMatrix& x, int n) {
  require_square_same_dim(h, x, "iterated_ad");
  if (n < 0 || n > kMaxAdOrder) {
    throw std::invalid_argument("iterated_ad: order out of range");
  }
  CMatrix out = x;
  for (int k = 0; k < n; ++k) out = commutator(h, out);
  return out;
}

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

CMatrix kron_sum(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != a.cols() || b.rows() != b.cols()) {
    throw std::invalid_argument("kron_sum: inputs must be square");
  }
  const CMatrix ia = CMatrix::Identity(a.rows(), a.rows());
  const CMatrix ib = CMatrix::Identity(b.rows(), b.rows());
  return kron(a, ib) + kron(ia, b);
}

CVector vec(const CMatrix& a) {
  return Eigen::Map<const CVector>(a.data(), a.size());
}

CMatrix unvec(const CVector& v, Eigen::Index rows) {
  if (rows <= 0 || v.size() % rows != 0) {
    throw std::invalid_argument("unvec: size not divisible by rows");
  }
  return Eigen::Map<const CMatrix>(v.data(), rows, v.size() / rows);
}

CMatrix expm(const CMatrix& a) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("expm: matrix must be square");
  }
  if (!all_finite(a)) {
    throw std::invalid_argument("expm: non-finite entries");
  }
  CMatrix out = a.exp();
  if (!all_finite(out)) {
    throw std::overflow_error("expm: result overflowed");
  }
  return out;
}

ExpmWithDerivative expm_frechet(const CMatrix& a, const CMatrix& d) {
  require_square_same_dim(a, d, "expm_frechet");
  const Eigen::Index n = a.rows();
  CMatrix block = CMatrix::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.bottomRightCorner(n, n) = a;
  block.bottomLeftCorner(n, n) = d;
  const CMatrix e = expm(block);
  return {e.topLeftCorner(n, n), e.bottomLeftCorner(n, n)};
}

namespace {

double sinc(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

}  // namespace

HermitianGenerator::HermitianGenerator(const CMatrix& h, double dt) {
  if (h.rows() != h.cols()) {
    throw std::invalid_argument("HermitianGenerator: matrix must be square");
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(h);
  vectors_ = eig.eigenvectors();
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const Eigen::Index n = h.rows();

  // a_p = -i dt lambda_p; phi_pq = (e^{a_p} - e^{a_q}) / (a_p - a_q)
  //      = e^{(a_p + a_q)/2} sinc(dt (lambda_p - lambda_q) / 2).
  phi_.resize(n, n);
  CVector exps(n);
  for (Eigen::Index p = 0; p < n; ++p) {
    exps[p] = std::polar(1.0, -dt * lam[p]);
  }
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index q = 0; q < n; ++q) {
      const double theta = 0.5 * dt * (lam[p] - lam[q]);
      phi_(p, q) = std::polar(1.0, -0.5 * dt * (lam[p] + lam[q])) * sinc(theta);
    }
  }
  propagator_ = vectors_ * exps.asDiagonal() * vectors_.adjoint();
}

CMatrix HermitianGenerator::frechet(const CMatrix& dir) const {
  const CMatrix inner = vectors_.adjoint() * dir * vectors_;
  return vectors_ * inner.cwiseProduct(phi_) * vectors_.adjoint();
}

CMatrix HermitianGenerator::frechet_adjoint(const CMatrix& dir) const {
  const CMatrix inner = vectors_.adjoint() * dir * vectors_;
  return vectors_ * inner.cwiseProduct(phi_.conjugate()) * vectors_.adjoint();
}

bool is_hermitian(const CMatrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

bool is_unitary(const CMatrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  const CMatrix res =
      a.adjoint() * a - CMatrix::Identity(a.rows(), a.cols());
  return res.norm() <= tol;
}

}  // namespace rqoc::algebra
