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

#include <random>

#include "rqoc/algebra.hpp"

namespace rqoc::testing {

using algebra::CMatrix;
using algebra::Complex;

inline double urand(std::mt19937_64& gen) {
  return 2.0 * ((gen() >> 11) * 0x1.0p-53) - 1.0;  // uniform in [-1, 1)
}

inline CMatrix random_cmatrix(std::mt19937_64& gen, int d) {
  CMatrix m(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) m(r, c) = Complex(urand(gen), urand(gen));
  }
  return m;
}

inline CMatrix random_hermitian(std::mt19937_64& gen, int d,
                                double scale = 1.0) {
  const CMatrix a = random_cmatrix(gen, d);
  return scale * 0.5 * (a + a.adjoint());
}

inline CMatrix random_unitary(std::mt19937_64& gen, int d) {
  return algebra::expm(Complex(0.0, -1.0) * random_hermitian(gen, d));
}

inline double rel_err(const CMatrix& got, const CMatrix& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace rqoc::testing
