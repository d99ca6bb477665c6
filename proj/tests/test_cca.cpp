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

#include <cmath>
#include <limits>
#include <vector>

#include "dccdi/cca.hpp"
#include "dccdi/errors.hpp"
#include "dccdi/gradcheck.hpp"
#include "dccdi/random.hpp"
#include "doctest.h"

using namespace dccdi;

namespace {

Matrix naive_cov(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  std::vector<double> ma(a.cols(), 0.0), mb(b.cols(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) ma[j] += a(i, j) / static_cast<double>(n);
    for (std::size_t j = 0; j < b.cols(); ++j) mb[j] += b(i, j) / static_cast<double>(n);
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t p = 0; p < a.cols(); ++p)
    for (std::size_t q = 0; q < b.cols(); ++q) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (a(i, p) - ma[p]) * (b(i, q) - mb[q]);
      c(p, q) = s / static_cast<double>(n - 1);
    }
  return c;
}

// Two views sharing a few latent directions.
std::pair<Matrix, Matrix> correlated_views(Rng& rng, std::size_t n, std::size_t d1, std::size_t d2) {
  const Matrix shared = rng.normal_matrix(n, 2);
  Matrix a = rng.normal_matrix(n, d1, 0.7);
  Matrix b = rng.normal_matrix(n, d2, 0.7);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, 0) += shared(i, 0);
    b(i, 0) += shared(i, 0);
    a(i, 1 % d1) += 0.5 * shared(i, 1);
    b(i, d2 - 1) -= 0.5 * shared(i, 1);
  }
  return {a, b};
}

}  // namespace

TEST_CASE("covariance matches a two-loop computation") {
  Rng rng(1);
  const Matrix z1 = rng.normal_matrix(50, 4);
  const Matrix z2 = rng.normal_matrix(50, 3);
  const CcaStats s = covariance_matrices(z1, z2, 0.0);
  CHECK(max_abs_diff(s.sigma11, naive_cov(z1, z1)) < 1e-12);
  CHECK(max_abs_diff(s.sigma22, naive_cov(z2, z2)) < 1e-12);
  CHECK(max_abs_diff(s.sigma12, naive_cov(z1, z2)) < 1e-12);
  const CcaStats r = covariance_matrices(z1, z2, 0.25);
  CHECK(max_abs_diff(r.sigma11 - s.sigma11, Matrix::identity(4) * 0.25) < 1e-15);
  CHECK(r.sigma12 == s.sigma12);
  CHECK(r.sigma11 == r.sigma11.transpose());
}

TEST_CASE("covariance rejects bad input") {
  CHECK_THROWS_AS(covariance_matrices(Matrix(1, 2), Matrix(1, 2), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(covariance_matrices(Matrix(3, 2), Matrix(4, 2), 0.0), std::invalid_argument);
  Matrix bad(3, 2);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(covariance_matrices(bad, Matrix(3, 2), 0.0), std::invalid_argument);
}

TEST_CASE("objective agrees with the Cholesky oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    auto [a, b] = correlated_views(rng, 60, 5, 4);
    for (std::size_t k = 1; k <= 4; ++k) {
      const CorrelationResult res = correlation_objective(a, b, 1e-4, k);
      const LinearCcaResult ora = linear_cca_oracle(a, b, k, 1e-4);
      double s = 0.0;
      for (double c : ora.correlations) s += c;
      CHECK(std::abs(res.corr - s) < 1e-10);
    }
  }
}

TEST_CASE("oracle directions whiten and diagonalize") {
  Rng rng(3);
  auto [a, b] = correlated_views(rng, 80, 4, 3);
  const LinearCcaResult o = linear_cca_oracle(a, b, 3, 1e-3);
  const CcaStats s = covariance_matrices(a, b, 1e-3);
  CHECK(max_abs_diff(matmul(matmul_tn(o.wx, s.sigma11), o.wx), Matrix::identity(3)) < 1e-10);
  CHECK(max_abs_diff(matmul(matmul_tn(o.wy, s.sigma22), o.wy), Matrix::identity(3)) < 1e-10);
  CHECK(max_abs_diff(matmul(matmul_tn(o.wx, s.sigma12), o.wy), Matrix::diagonal(o.correlations)) < 1e-10);
}

TEST_CASE("oracle preconditions") {
  CHECK_THROWS_AS(linear_cca_oracle(Matrix(3, 3), Matrix(3, 2), 1, 1e-4), std::invalid_argument);
  Rng rng(4);
  const Matrix a = rng.normal_matrix(10, 2);
  Matrix collinear(10, 2);
  for (std::size_t i = 0; i < 10; ++i) collinear(i, 0) = collinear(i, 1) = a(i, 0);
  CHECK_THROWS_AS(linear_cca_oracle(collinear, a, 1, 0.0), LinalgError);
  CHECK_NOTHROW(linear_cca_oracle(a, a, 2, 0.0));
}

TEST_CASE("objective is symmetric in its views") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto [a, b] = correlated_views(rng, 30, 4, 4);
    for (std::size_t k = 1; k <= 4; ++k) {
      CHECK(correlation_objective(a, b, 1e-4, k).corr == correlation_objective(b, a, 1e-4, k).corr);
    }
  }
}

TEST_CASE("full trace norm is the sum of all singular values") {
  Rng rng(6);
  auto [a, b] = correlated_views(rng, 40, 3, 3);
  const CorrelationResult r = correlation_objective(a, b, 1e-4, 3);
  double s = 0.0;
  for (double v : r.stats.singular_values) s += v;
  CHECK(r.corr == s);
  CHECK(r.corr >= 0.0);
  CHECK(r.corr <= 3.0);
}

TEST_CASE("objective ignores constant shifts") {
  Rng rng(7);
  auto [a, b] = correlated_views(rng, 40, 3, 3);
  Matrix shifted = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    shifted(i, 0) += 12.5;
    shifted(i, 2) -= 3.0;
  }
  CHECK(std::abs(correlation_objective(a, b, 1e-4, 3).corr - correlation_objective(shifted, b, 1e-4, 3).corr) <
        1e-10);
}

TEST_CASE("identical views are perfectly correlated and flagged degenerate") {
  Rng rng(8);
  const Matrix a = rng.normal_matrix(50, 3);
  const CorrelationResult r = correlation_objective(a, a, 1e-12, 3);
  CHECK(r.corr == doctest::Approx(3.0).epsilon(1e-9));
  const CorrelationGradient g = correlation_gradient(r.stats, a, a);
  CHECK(g.near_degenerate);
}

TEST_CASE("analytic gradient matches finite differences") {
  for (std::size_t k : {1u, 2u, 3u}) {
    GraphBuilder b = [k](std::uint64_t seed) {
      Rng rng(seed);
      auto [a, c] = correlated_views(rng, 25, 3, 3);
      GradcheckGraph gg;
      const NodeId z1 = gg.graph.parameter(a);
      const NodeId z2 = gg.graph.parameter(c);
      gg.loss = correlation_loss(gg.graph, z1, z2, 1e-3, k);
      gg.parameters = {{"z1", z1}, {"z2", z2}};
      return gg;
    };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) CHECK(gradcheck(b, seed).max_rel_error() < 1e-6);
  }
}

TEST_CASE("loss node returns NaN on non-finite embeddings") {
  Graph g;
  Matrix bad(4, 2, 1.0);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const NodeId z = g.input(bad);
  correlation_loss(g, z, z, 1e-4, 1);
  CHECK(std::isnan(g.forward()));
}

TEST_CASE("dcca block initialization") {
  DccaArchitecture arch;
  arch.visual_in = 6;
  arch.text_in = 5;
  arch.hidden = {8};
  arch.output_dim = 3;
  const DccaBlock b = init_dcca_block(arch, 9);
  CHECK(b.g.input_dim() == 6);
  CHECK(b.h.input_dim() == 5);
  CHECK(b.g.output_dim() == 3);
  CHECK(b.top_k == 3);
  CHECK(b.g.layers.back().activation == Activation::kLinear);
  CHECK(b.g.layers.front().activation == Activation::kTanh);
  CHECK(init_dcca_block(arch, 9) == b);
  CHECK_FALSE(init_dcca_block(arch, 10) == b);
  arch.top_k = 4;
  CHECK_THROWS(init_dcca_block(arch, 9));
}

TEST_CASE("training raises the correlation") {
  Rng rng(10);
  auto [a, b] = correlated_views(rng, 40, 6, 5);
  DccaArchitecture arch;
  arch.visual_in = 6;
  arch.text_in = 5;
  arch.hidden = {8};
  arch.output_dim = 3;
  const DccaBlock init = init_dcca_block(arch, 1);
  DccaTrainOptions opt;
  opt.steps = 30;
  opt.lr = 0.01;
  const DccaTrainResult r = train_dcca(init, a, b, opt);
  REQUIRE(r.trace.size() == 31);
  CHECK(r.trace.back() > r.trace.front());
  CHECK_FALSE(r.undersampled);
  CHECK(r.trace.front() == correlation_objective(mlp_apply(init.g, a), mlp_apply(init.h, b), init.r1, 3).corr);
}

TEST_CASE("zero steps leaves the block untouched") {
  Rng rng(11);
  auto [a, b] = correlated_views(rng, 3, 2, 2);
  DccaArchitecture arch;
  arch.visual_in = 2;
  arch.text_in = 2;
  arch.hidden = {};
  arch.output_dim = 2;
  const DccaBlock init = init_dcca_block(arch, 3);
  DccaTrainOptions opt;
  opt.steps = 0;
  const DccaTrainResult r = train_dcca(init, a, b, opt);
  CHECK(r.block == init);
  CHECK(r.trace.size() == 1);
  CHECK(r.undersampled);
  CHECK_THROWS_AS(train_dcca(init, a, Matrix(4, 2), opt), std::invalid_argument);
  CHECK_THROWS_AS(train_dcca(init, Matrix(1, 2), Matrix(1, 2), opt), std::invalid_argument);
}

TEST_CASE("divergence raises a training error with the step") {
  Rng rng(12);
  auto [a, b] = correlated_views(rng, 10, 2, 2);
  DccaArchitecture arch;
  arch.visual_in = 2;
  arch.text_in = 2;
  arch.hidden = {};
  arch.output_dim = 2;
  DccaBlock init = init_dcca_block(arch, 3);
  init.g.layers[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  try {
    train_dcca(init, a, b, {});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.index() == 0);
  }
}
