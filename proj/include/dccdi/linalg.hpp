// Copyright 2026 The DCCDI Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DCCDI_LINALG_HPP_
#define DCCDI_LINALG_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccdi/matrix.hpp"

namespace dccdi {

class LinalgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public LinalgError {
 public:
  ConvergenceError(const std::string& what, int sweeps) : LinalgError(what), sweeps_(sweeps) {}
  int sweeps() const { return sweeps_; }

 private:
  int sweeps_;
};

/// Raised by inv_sqrt_sym when an eigenvalue is at or below the floor. The
/// index refers to the descending eigenvalue order.
class NotPositiveDefinite : public LinalgError {
 public:
  NotPositiveDefinite(std::size_t index, double eigenvalue);
  std::size_t index() const { return index_; }
  double eigenvalue() const { return eigenvalue_; }

 private:
  std::size_t index_;
  double eigenvalue_;
};

struct SvdResult {
  Matrix u;                   // m x r, orthonormal columns
  std::vector<double> s;      // r values, descending, non-negative
  Matrix vt;                  // r x n, orthonormal rows
};

struct EigResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // column i pairs with values[i]
};

inline constexpr double kDefaultEigenFloor = 1e-10;

/// Thin SVD by one-sided (Hestenes) Jacobi rotations, r = min(m, n). Left
/// singular vectors of zero singular values are completed to an orthonormal
/// set. Throws ConvergenceError if the sweeps budget runs out.
SvdResult svd(const Matrix& a);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
EigResult sym_eig(const Matrix& m);

/// R with R * M * R = I. Throws NotPositiveDefinite when an eigenvalue is
/// <= eps, which upstream means the covariance regularizer is too small.
Matrix inv_sqrt_sym(const Matrix& m, double eps = kDefaultEigenFloor);

/// Subtracts the column means. Columns whose mean is already at rounding
/// level are left untouched, so centering is idempotent bit-for-bit.
Matrix center_rows(const Matrix& z);

/// Lower Cholesky factor of an SPD matrix.
Matrix cholesky(const Matrix& m);

/// Solves L X = B for lower-triangular L.
Matrix forward_substitute(const Matrix& lower, const Matrix& b);

/// Solves L' X = B for lower-triangular L.
Matrix backward_substitute_t(const Matrix& lower, const Matrix& b);

bool is_symmetric(const Matrix& m, double tol);

}  // namespace dccdi

#endif  // DCCDI_LINALG_HPP_
