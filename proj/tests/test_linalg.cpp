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

#include <algorithm>
#include <cmath>
#include <vector>

#include "dccdi/linalg.hpp"
#include "dccdi/matrix.hpp"
#include "dccdi/random.hpp"
#include "doctest.h"

using namespace dccdi;

namespace {

// Power iteration with deflation on A'A. Slow but shares nothing with the
// Jacobi code.
std::vector<double> singular_values_by_power(const Matrix& a) {
  Matrix g = matmul_tn(a, a);
  const std::size_t n = g.rows();
  const std::size_t r = std::min(a.rows(), a.cols());
  std::vector<double> out;
  for (std::size_t k = 0; k < r; ++k) {
    Matrix v(n, 1, 1.0);
    for (std::size_t i = 0; i < n; ++i) v(i, 0) += 0.01 * static_cast<double>(i);
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      Matrix w = matmul(g, v);
      const double norm = frobenius_norm(w);
      if (norm == 0.0) break;
      w *= 1.0 / norm;
      const double next = sum(hadamard(w, matmul(g, w)));
      v = w;
      if (std::abs(next - lambda) < 1e-15 * std::max(1.0, next)) {
        lambda = next;
        break;
      }
      lambda = next;
    }
    out.push_back(std::sqrt(std::max(lambda, 0.0)));
    g -= matmul_nt(v, v) * lambda;
  }
  return out;
}

Matrix reconstruct(const SvdResult& f) {
  Matrix us = f.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= f.s[j];
  return matmul(us, f.vt);
}

Matrix random_spd(Rng& rng, std::size_t n) {
  const Matrix a = rng.normal_matrix(n, n);
  Matrix m = matmul_tn(a, a);
  for (std::size_t i = 0; i < n; ++i) m(i, i) += 0.5;
  return m;
}

}  // namespace

TEST_CASE("svd reconstructs and matches power iteration") {
  Rng rng(7);
  for (auto [m, n] : std::vector<std::pair<std::size_t, std::size_t>>{{6, 4}, {4, 6}, {5, 5}, {1, 3}, {9, 1}}) {
    const Matrix a = rng.normal_matrix(m, n);
    const SvdResult f = svd(a);
    CHECK(max_abs_diff(reconstruct(f), a) < 1e-12);
    CHECK(max_abs_diff(matmul_tn(f.u, f.u), Matrix::identity(f.u.cols())) < 1e-12);
    CHECK(max_abs_diff(matmul_nt(f.vt, f.vt), Matrix::identity(f.vt.rows())) < 1e-12);
    CHECK(std::is_sorted(f.s.rbegin(), f.s.rend()));
    const std::vector<double> ref = singular_values_by_power(a);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(f.s[i] - ref[i]) < 1e-8);
  }
}

TEST_CASE("svd of a 2x2 matches the closed form") {
  const Matrix a{{3.0, 1.0}, {-2.0, 4.0}};
  const double fro2 = 9 + 1 + 4 + 16;
  const double det = 3 * 4 - (1 * -2);
  const double disc = std::sqrt(fro2 * fro2 - 4 * det * det);
  const SvdResult f = svd(a);
  CHECK(f.s[0] == doctest::Approx(std::sqrt((fro2 + disc) / 2)).epsilon(1e-14));
  CHECK(f.s[1] == doctest::Approx(std::sqrt((fro2 - disc) / 2)).epsilon(1e-14));
}

TEST_CASE("svd of a rank-deficient matrix keeps U orthonormal") {
  Matrix a(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    a(i, 0) = static_cast<double>(i);
    a(i, 1) = 2.0 * static_cast<double>(i);
    a(i, 2) = 0.0;
  }
  const SvdResult f = svd(a);
  CHECK(f.s[1] < 1e-12);
  CHECK(f.s[2] < 1e-12);
  CHECK(max_abs_diff(matmul_tn(f.u, f.u), Matrix::identity(3)) < 1e-12);
  CHECK(max_abs_diff(reconstruct(f), a) < 1e-12);
}

TEST_CASE("svd of the zero matrix") {
  const SvdResult f = svd(Matrix(3, 2));
  CHECK(f.s == std::vector<double>{0.0, 0.0});
  CHECK(max_abs_diff(matmul_tn(f.u, f.u), Matrix::identity(2)) < 1e-14);
}

TEST_CASE("sym_eig diagonalizes") {
  Rng rng(11);
  for (std::size_t n : {1u, 2u, 5u, 12u}) {
    const Matrix m = random_spd(rng, n);
    const EigResult e = sym_eig(m);
    CHECK(std::is_sorted(e.values.rbegin(), e.values.rend()));
    const Matrix d = matmul(matmul_tn(e.vectors, m), e.vectors);
    CHECK(max_abs_diff(d, Matrix::diagonal(e.values)) < 1e-10 * std::max(1.0, e.values[0]));
    CHECK(max_abs_diff(matmul_tn(e.vectors, e.vectors), Matrix::identity(n)) < 1e-12);
  }
}

TEST_CASE("sym_eig rejects asymmetric input") {
  const Matrix m{{1.0, 2.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(sym_eig(m), std::invalid_argument);
}

TEST_CASE("inv_sqrt_sym whitens") {
  Rng rng(3);
  const Matrix m = random_spd(rng, 6);
  const Matrix r = inv_sqrt_sym(m);
  CHECK(r == r.transpose());
  CHECK(max_abs_diff(matmul(matmul(r, m), r), Matrix::identity(6)) < 1e-10);
}

TEST_CASE("inv_sqrt_sym reports the offending eigenvalue") {
  const Matrix m{{1.0, 0.0}, {0.0, 0.0}};
  try {
    inv_sqrt_sym(m);
    FAIL("expected NotPositiveDefinite");
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.index() == 1);
    CHECK(e.eigenvalue() == 0.0);
    CHECK(std::string(e.what()).find("regularizer") != std::string::npos);
  }
}

TEST_CASE("center_rows zeroes column means and is idempotent") {
  Rng rng(5);
  Matrix z = rng.normal_matrix(40, 7, 3.0);
  for (std::size_t i = 0; i < z.rows(); ++i) z(i, 2) += 1e6;
  const Matrix c = center_rows(z);
  for (std::size_t j = 0; j < c.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) mean += c(i, j);
    CHECK(std::abs(mean / 40.0) < 1e-9);
  }
  CHECK(center_rows(c) == c);
  CHECK_THROWS(center_rows(Matrix(1, 3)));
}

TEST_CASE("cholesky and triangular solves") {
  Rng rng(9);
  const Matrix m = random_spd(rng, 5);
  const Matrix l = cholesky(m);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) CHECK(l(i, j) == 0.0);
  CHECK(max_abs_diff(matmul_nt(l, l), m) < 1e-10);
  const Matrix b = rng.normal_matrix(5, 3);
  CHECK(max_abs_diff(matmul(l, forward_substitute(l, b)), b) < 1e-10);
  CHECK(max_abs_diff(matmul_tn(l, backward_substitute_t(l, b)), b) < 1e-10);
  CHECK_THROWS_AS(cholesky(Matrix{{1.0, 2.0}, {2.0, 1.0}}), LinalgError);
}
