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

#include "dccdi/cca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "dccdi/errors.hpp"
#include "dccdi/optimizer.hpp"
#include "dccdi/random.hpp"

namespace dccdi {

namespace {

void add_ridge(Matrix& m, double r1) {
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += r1;
}

std::size_t resolve_k(std::size_t k, std::size_t d1, std::size_t d2) {
  const std::size_t r = std::min(d1, d2);
  if (k == 0 || k > r) {
    throw std::invalid_argument("cca: top-k must be in [1, " + std::to_string(r) + "], got " + std::to_string(k));
  }
  return k;
}

double min_adjacent_gap(const std::vector<double>& s) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < s.size(); ++i) gap = std::min(gap, s[i - 1] - s[i]);
  return gap;
}

}  // namespace

CcaStats covariance_matrices(const Matrix& z1, const Matrix& z2, double r1) {
  if (z1.rows() != z2.rows()) {
    throw std::invalid_argument("covariance_matrices: sample counts differ (" + z1.shape_string() + ", " +
                                z2.shape_string() + ")");
  }
  if (z1.rows() < 2) {
    throw std::invalid_argument("covariance_matrices: need at least 2 samples, got " + std::to_string(z1.rows()));
  }
  if (!z1.all_finite() || !z2.all_finite()) throw std::invalid_argument("covariance_matrices: non-finite input");
  if (!(r1 >= 0.0)) throw std::invalid_argument("covariance_matrices: r1 must be non-negative");

  const Matrix c1 = center_rows(z1);
  const Matrix c2 = center_rows(z2);
  const double inv = 1.0 / static_cast<double>(z1.rows() - 1);

  CcaStats s;
  s.samples = z1.rows();
  s.sigma11 = matmul_tn(c1, c1) * inv;
  s.sigma22 = matmul_tn(c2, c2) * inv;
  s.sigma12 = matmul_tn(c1, c2) * inv;
  add_ridge(s.sigma11, r1);
  add_ridge(s.sigma22, r1);
  return s;
}

CorrelationResult correlation_objective(const Matrix& z1, const Matrix& z2, double r1, std::size_t k) {
  CorrelationResult out;
  CcaStats& s = out.stats;
  s = covariance_matrices(z1, z2, r1);
  s.top_k = resolve_k(k, z1.cols(), z2.cols());
  s.inv_sqrt11 = inv_sqrt_sym(s.sigma11);
  s.inv_sqrt22 = inv_sqrt_sym(s.sigma22);

  // T is assembled from both association orders so that swapping the views
  // yields exactly T' (and hence exactly the same correlation).
  const Matrix forward = matmul(matmul(s.inv_sqrt11, s.sigma12), s.inv_sqrt22);
  const Matrix reverse = matmul(matmul(s.inv_sqrt22, s.sigma12.transpose()), s.inv_sqrt11);
  s.t = (forward + reverse.transpose()) * 0.5;

  s.t_svd = svd(s.t);
  const SvdResult other = svd(s.t.transpose());
  s.singular_values.resize(s.t_svd.s.size());
  for (std::size_t i = 0; i < s.singular_values.size(); ++i) {
    s.singular_values[i] = 0.5 * (s.t_svd.s[i] + other.s[i]);
  }
  for (std::size_t i = 0; i < s.top_k; ++i) out.corr += s.singular_values[i];
  return out;
}

CorrelationGradient correlation_gradient(const CcaStats& stats, const Matrix& z1, const Matrix& z2) {
  if (stats.t_svd.s.empty() || stats.top_k == 0) {
    throw std::invalid_argument("correlation_gradient: stats were not produced by correlation_objective");
  }
  if (z1.rows() != stats.samples || z2.rows() != stats.samples || z1.cols() != stats.sigma11.rows() ||
      z2.cols() != stats.sigma22.rows()) {
    throw std::invalid_argument("correlation_gradient: views do not match the stats");
  }
  const std::size_t k = stats.top_k;
  const std::size_t d1 = z1.cols();
  const std::size_t d2 = z2.cols();
  const SvdResult& f = stats.t_svd;

  Matrix uk(d1, k);
  Matrix vk(d2, k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d1; ++i) uk(i, j) = f.u(i, j);
    for (std::size_t i = 0; i < d2; ++i) vk(i, j) = f.vt(j, i);
  }
  Matrix uk_d = uk;
  Matrix vk_d = vk;
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d1; ++i) uk_d(i, j) *= f.s[j];
    for (std::size_t i = 0; i < d2; ++i) vk_d(i, j) *= f.s[j];
  }

  const Matrix& a = stats.inv_sqrt11;
  const Matrix& b = stats.inv_sqrt22;
  const Matrix nabla12 = matmul(matmul(a, matmul_nt(uk, vk)), b);
  const Matrix nabla11 = matmul(matmul(a, matmul_nt(uk_d, uk)), a) * -0.5;
  const Matrix nabla22 = matmul(matmul(b, matmul_nt(vk_d, vk)), b) * -0.5;

  const Matrix c1 = center_rows(z1);
  const Matrix c2 = center_rows(z2);
  const double inv = 1.0 / static_cast<double>(stats.samples - 1);

  CorrelationGradient g;
  g.dz1 = (matmul(c1, nabla11) * 2.0 + matmul_nt(c2, nabla12)) * inv;
  g.dz2 = (matmul(c2, nabla22) * 2.0 + matmul(c1, nabla12)) * inv;
  g.min_gap = min_adjacent_gap(stats.singular_values);
  g.near_degenerate = g.min_gap < kDegenerateGap;
  return g;
}

NodeId correlation_loss(Graph& graph, NodeId z1, NodeId z2, double r1, std::size_t k) {
  auto cache = std::make_shared<CcaStats>();
  CustomOp op;
  op.name = "cca-correlation";
  op.forward = [cache, r1, k](const std::vector<const Matrix*>& in) {
    // Diverged embeddings surface as a non-finite loss for the caller.
    if (!in[0]->all_finite() || !in[1]->all_finite()) {
      return Matrix(1, 1, std::numeric_limits<double>::quiet_NaN());
    }
    CorrelationResult res = correlation_objective(*in[0], *in[1], r1, k);
    *cache = std::move(res.stats);
    return Matrix(1, 1, -res.corr);
  };
  op.backward = [cache](const std::vector<const Matrix*>& in, const Matrix&, const Matrix& upstream) {
    const CorrelationGradient g = correlation_gradient(*cache, *in[0], *in[1]);
    const double scale = -upstream(0, 0);
    return std::vector<Matrix>{g.dz1 * scale, g.dz2 * scale};
  };
  return graph.custom({z1, z2}, std::move(op));
}

LinearCcaResult linear_cca_oracle(const Matrix& x, const Matrix& y, std::size_t k, double r1) {
  const std::size_t p = x.cols();
  const std::size_t q = y.cols();
  if (x.rows() <= std::max(p, q)) {
    throw std::invalid_argument("linear_cca_oracle: need more samples (" + std::to_string(x.rows()) +
                                ") than features (" + std::to_string(std::max(p, q)) + ")");
  }
  k = resolve_k(k, p, q);
  const CcaStats s = covariance_matrices(x, y, r1);

  Matrix lx;
  Matrix ly;
  try {
    lx = cholesky(s.sigma11);
    ly = cholesky(s.sigma22);
  } catch (const NotPositiveDefinite& e) {
    throw LinalgError(std::string("linear_cca_oracle: covariance is rank deficient despite r1 (") + e.what() + ")");
  }
  // M = Lx^{-1} Sxy Ly^{-T}
  const Matrix left = forward_substitute(lx, s.sigma12);
  const Matrix m = forward_substitute(ly, left.transpose()).transpose();
  const SvdResult f = svd(m);

  LinearCcaResult out;
  out.correlations.assign(f.s.begin(), f.s.begin() + static_cast<long>(k));
  Matrix uk(p, k);
  Matrix vk(q, k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < p; ++i) uk(i, j) = f.u(i, j);
    for (std::size_t i = 0; i < q; ++i) vk(i, j) = f.vt(j, i);
  }
  out.wx = backward_substitute_t(lx, uk);
  out.wy = backward_substitute_t(ly, vk);
  return out;
}

DccaBlock init_dcca_block(const DccaArchitecture& arch, std::uint64_t seed) {
  if (!(arch.r1 > 0.0)) throw std::invalid_argument("init_dcca_block: r1 must be positive");
  if (arch.output_dim == 0) throw std::invalid_argument("init_dcca_block: output_dim must be >= 1");
  auto branch = [&](std::size_t in, std::uint64_t s) {
    std::vector<std::size_t> dims{in};
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(arch.output_dim);
    std::vector<Activation> acts(arch.hidden.size(), arch.hidden_activation);
    acts.push_back(Activation::kLinear);
    return init_mlp(dims, acts, s);
  };
  DccaBlock b;
  b.g = branch(arch.visual_in, derive_seed(seed, "visual-branch"));
  b.h = branch(arch.text_in, derive_seed(seed, "text-branch"));
  b.output_dim = arch.output_dim;
  b.r1 = arch.r1;
  b.top_k = arch.top_k == 0 ? arch.output_dim : arch.top_k;
  if (b.top_k > b.output_dim) throw std::invalid_argument("init_dcca_block: top_k exceeds output_dim");
  return b;
}

DccaTrainResult train_dcca(DccaBlock block, const Matrix& visual, const Matrix& text, const DccaTrainOptions& options) {
  if (visual.rows() != text.rows()) {
    throw std::invalid_argument("train_dcca: visual and text sample counts differ (" + visual.shape_string() +
                                ", " + text.shape_string() + ")");
  }
  if (visual.rows() < 2) throw std::invalid_argument("train_dcca: need at least 2 samples");
  const std::size_t k = block.top_k == 0 ? block.output_dim : block.top_k;

  DccaTrainResult out;
  out.undersampled = visual.rows() < 2 * block.output_dim;
  OptimizerState opt = make_rmsprop(options.lr, options.decay, options.epsilon);

  for (std::size_t step = 0;; ++step) {
    Graph graph;
    const NodeId v = graph.input(visual);
    const NodeId t = graph.input(text);
    const MlpNodes gn = bind_mlp(graph, block.g);
    const MlpNodes hn = bind_mlp(graph, block.h);
    const NodeId z1 = mlp_forward(graph, block.g, gn, v);
    const NodeId z2 = mlp_forward(graph, block.h, hn, t);
    const NodeId loss = correlation_loss(graph, z1, z2, block.r1, k);
    const double value = graph.forward();
    if (!std::isfinite(value)) throw TrainingError("train_dcca", step, value);
    out.trace.push_back(-value);
    if (step == options.steps) break;

    graph.backward(loss);
    std::vector<Matrix> grads = mlp_gradients(graph, gn);
    std::vector<Matrix> hg = mlp_gradients(graph, hn);
    grads.insert(grads.end(), std::make_move_iterator(hg.begin()), std::make_move_iterator(hg.end()));
    std::vector<Matrix*> params = block.g.tensors();
    std::vector<Matrix*> hp = block.h.tensors();
    params.insert(params.end(), hp.begin(), hp.end());
    optimizer_step(opt, params, grads);
  }
  const CorrelationResult last =
      correlation_objective(mlp_apply(block.g, visual), mlp_apply(block.h, text), block.r1, k);
  out.near_degenerate = min_adjacent_gap(last.stats.singular_values) < kDegenerateGap;
  out.block = std::move(block);
  return out;
}

}  // namespace dccdi
