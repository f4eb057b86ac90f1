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

#include <complex>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rqoc::algebra {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Single-qubit Pauli labels.
enum class Pauli : char { I = 'I', X = 'X', Y = 'Y', Z = 'Z' };

/// A weighted tensor product of single-qubit Paulis, e.g. 0.5 * Z (x) Z.
struct PauliString {
  std::vector<Pauli> factors;
  double coefficient = 1.0;

  PauliString() = default;
  PauliString(std::vector<Pauli> f, double c = 1.0)
      : factors(std::move(f)), coefficient(c) {}

  /// Parses labels like "Z", "XI" or "ZZ" (one character per qubit).
  static PauliString parse(std::string_view label, double coefficient = 1.0);

  int n_qubits() const { return static_cast<int>(factors.size()); }
  Eigen::Index dim() const { return Eigen::Index(1) << factors.size(); }
  std::string label() const;
};

/// 2x2 matrix of a single Pauli label.
CMatrix pauli_matrix(Pauli p);

/// Dense matrix of a Pauli string: coefficient times the tensor product of
/// its factors. Always Hermitian (real coefficient, Hermitian factors).
CMatrix pauli_string_matrix(const PauliString& s);

/// All non-identity Pauli strings on n qubits (4^n - 1 of them, unit
/// coefficient), ordered lexicographically in (I, X, Y, Z) per qubit.
std::vector<PauliString> nontrivial_pauli_strings(int n_qubits);

/// Squared Hilbert-Schmidt norm normalized by the matrix's own dimension:
/// (1/d) Tr(A^dag A) = (1/d) sum |A_ij|^2.
double hs_norm_sq(const CMatrix& a);

/// Unnormalized squared Frobenius norm, Tr(A^dag A).
double frobenius_sq(const CMatrix& a);

/// [A, B] = AB - BA. Throws on dimension mismatch.
CMatrix commutator(const CMatrix& a, const CMatrix& b);

/// Iterated commutator ad_H^n(X): ad^0 = X, ad^n = [H, ad^{n-1}].
CMatrix iterated_ad(const CMatrix& h, const CMatrix& x, int n);

/// Maximum supported iterated-commutator / series order.
inline constexpr int kMaxAdOrder = 64;

CMatrix kron(const CMatrix& a, const CMatrix& b);

/// Kronecker sum A (+) B = A (x) I + I (x) B for square A, B.
CMatrix kron_sum(const CMatrix& a, const CMatrix& b);

/// Column-major vectorization. Satisfies vec(AXB) = (B^T (x) A) vec(X).
CVector vec(const CMatrix& a);

/// Inverse of vec for a square matrix of dimension `rows`.
CMatrix unvec(const CVector& v, Eigen::Index rows);

/// Matrix exponential. Throws std::invalid_argument on non-finite input and
/// std::overflow_error if the result overflows.
CMatrix expm(const CMatrix& a);

struct ExpmWithDerivative {
  CMatrix value;       // exp(A)
  CMatrix derivative;  // Frechet derivative of exp at A in direction D
};

/// exp(A) together with its directional (Frechet) derivative, both read off
/// the 2d x 2d block exponential exp([[A, 0], [D, A]]).
ExpmWithDerivative expm_frechet(const CMatrix& a, const CMatrix& d);

/// Spectral machinery for exp(-i dt H) with Hermitian H: the propagator and
/// its Frechet derivatives via divided differences in the eigenbasis.
/// Equivalent to expm/expm_frechet on skew-Hermitian input, much cheaper
/// when many directions share one generator.
class HermitianGenerator {
 public:
  HermitianGenerator(const CMatrix& h, double dt);

  const CMatrix& propagator() const { return propagator_; }
  /// L_exp(-i dt H; dir).
  CMatrix frechet(const CMatrix& dir) const;
  /// L_exp(+i dt H; dir), the adjoint of `frechet` under the Frobenius
  /// inner product.
  CMatrix frechet_adjoint(const CMatrix& dir) const;

 private:
  CMatrix vectors_;
  CMatrix propagator_;
  CMatrix phi_;  // divided differences of exp at the scaled eigenvalues
};

bool is_hermitian(const CMatrix& a, double tol = 1e-12);
bool is_unitary(const CMatrix& a, double tol = 1e-10);

}  // namespace rqoc::algebra
