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

#ifndef DCCDI_CCA_HPP_
#define DCCDI_CCA_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dccdi/autodiff.hpp"
#include "dccdi/linalg.hpp"
#include "dccdi/matrix.hpp"
#include "dccdi/mlp.hpp"

namespace dccdi {

// Canonical correlation between two views Z1 (N x d1) and Z2 (N x d2), rows
// are samples. With centered views Zc1, Zc2:
//
//   S11 = Zc1' Zc1 / (N - 1) + r1 I
//   S22 = Zc2' Zc2 / (N - 1) + r1 I
//   S12 = Zc1' Zc2 / (N - 1)
//   T   = S11^{-1/2} S12 S22^{-1/2}
//
// and the correlation of the top k components is the sum of the k largest
// singular values of T (the trace norm of T when k = min(d1, d2)).

inline constexpr double kDefaultR1 = 1e-4;

struct CcaStats {
  Matrix sigma11;
  Matrix sigma22;
  Matrix sigma12;
  Matrix inv_sqrt11;
  Matrix inv_sqrt22;
  Matrix t;
  SvdResult t_svd;
  std::vector<double> singular_values;
  std::size_t top_k = 0;
  std::size_t samples = 0;
};

/// Fills the sigma fields only.
CcaStats covariance_matrices(const Matrix& z1, const Matrix& z2, double r1);

struct CorrelationResult {
  double corr = 0.0;
  CcaStats stats;
};

/// k must be in [1, min(d1, d2)].
CorrelationResult correlation_objective(const Matrix& z1, const Matrix& z2, double r1, std::size_t k);

struct CorrelationGradient {
  Matrix dz1;
  Matrix dz2;
  double min_gap = 0.0;
  // Set when two singular values of T are within 1e-9 of each other; the
  // gradient is still computed from the SVD as is.
  bool near_degenerate = false;
};

inline constexpr double kDegenerateGap = 1e-9;

/// Analytic d corr / d Z1 and d corr / d Z2 for stats produced by
/// correlation_objective on the same Z1, Z2.
CorrelationGradient correlation_gradient(const CcaStats& stats, const Matrix& z1, const Matrix& z2);

/// Records -corr(Z1, Z2) as a 1 x 1 custom-gradient node whose backward uses
/// correlation_gradient. Non-finite inputs give a NaN value rather than throw.
NodeId correlation_loss(Graph& graph, NodeId z1, NodeId z2, double r1, std::size_t k);

struct LinearCcaResult {
  std::vector<double> correlations;  // k values, descending
  Matrix wx;                         // p x k
  Matrix wy;                         // q x k
};

/// Closed-form linear CCA. Whitens with Cholesky factors rather than the
/// symmetric inverse square roots used by correlation_objective, so the two
/// agree only if both routes are right. Throws LinalgError when a
/// regularized covariance is not positive definite.
LinearCcaResult linear_cca_oracle(const Matrix& x, const Matrix& y, std::size_t k, double r1);

struct DccaArchitecture {
  std::size_t visual_in = 512;
  std::size_t text_in = 768;
  std::vector<std::size_t> hidden{1024, 1024};
  Activation hidden_activation = Activation::kTanh;
  std::size_t output_dim = 20;
  double r1 = kDefaultR1;
  std::size_t top_k = 0;  // 0 means output_dim
};

struct DccaBlock {
  MlpParams g;  // visual branch
  MlpParams h;  // textual branch
  std::size_t output_dim = 0;
  double r1 = kDefaultR1;
  std::size_t top_k = 0;

  friend bool operator==(const DccaBlock&, const DccaBlock&) = default;
};

DccaBlock init_dcca_block(const DccaArchitecture& arch, std::uint64_t seed);

struct DccaTrainOptions {
  std::size_t steps = 20;
  double lr = 0.001;
  double decay = 0.9;
  double epsilon = 1e-8;
};

struct DccaTrainResult {
  DccaBlock block;
  // trace[0] is the correlation before training, trace[i] after i updates.
  std::vector<double> trace;
  // Fewer than 2 * output_dim samples; covariance estimates are unstable.
  bool undersampled = false;
  bool near_degenerate = false;
};

/// Full-batch RMSprop on -corr(g(V), h(T)). Throws TrainingError on a
/// non-finite loss.
DccaTrainResult train_dcca(DccaBlock block, const Matrix& visual, const Matrix& text,
                           const DccaTrainOptions& options = {});

}  // namespace dccdi

#endif  // DCCDI_CCA_HPP_
