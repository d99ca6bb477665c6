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

#include "dccdi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dccdi {

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::kInput: return "input";
    case OpTag::kMatMul: return "matmul";
    case OpTag::kAddBias: return "add-bias";
    case OpTag::kTanh: return "tanh";
    case OpTag::kRelu: return "relu";
    case OpTag::kSoftmaxCrossEntropy: return "softmax-cross-entropy";
    case OpTag::kNegSqDistance: return "neg-sq-distance";
    case OpTag::kCustomGrad: return "custom-grad";
    case OpTag::kAdd: return "add";
    case OpTag::kScale: return "scale";
    case OpTag::kSum: return "sum";
    case OpTag::kTranspose: return "transpose";
    case OpTag::kConcatCols: return "concat-cols";
    case OpTag::kGatherRows: return "gather-rows";
    case OpTag::kReshape: return "reshape";
    case OpTag::kRowSoftmax: return "row-softmax";
    case OpTag::kPairwiseAbsDiff: return "pairwise-abs-diff";
    case OpTag::kRowNormalize: return "row-normalize";
  }
  return "unknown";
}

NodeId Graph::push(Node node) {
  for (NodeId p : node.parents) {
    check_id(p);
    node.needs_grad = node.needs_grad || nodes_[p].needs_grad;
  }
  nodes_.push_back(std::move(node));
  forwarded_ = false;
  backwarded_ = false;
  return nodes_.size() - 1;
}

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw GraphError("graph: unknown node " + std::to_string(id));
}

NodeId Graph::input(Matrix value, bool requires_grad) {
  Node n;
  n.tag = OpTag::kInput;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

Graph::Node Graph::make_node(OpTag tag, std::vector<NodeId> parents) {
  Node n;
  n.tag = tag;
  n.parents = std::move(parents);
  return n;
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push(make_node(OpTag::kMatMul, {a, b})); }
NodeId Graph::add_bias(NodeId x, NodeId bias) { return push(make_node(OpTag::kAddBias, {x, bias})); }
NodeId Graph::tanh(NodeId x) { return push(make_node(OpTag::kTanh, {x})); }
NodeId Graph::relu(NodeId x) { return push(make_node(OpTag::kRelu, {x})); }
NodeId Graph::neg_sq_distance(NodeId a, NodeId b) { return push(make_node(OpTag::kNegSqDistance, {a, b})); }
NodeId Graph::add(NodeId a, NodeId b) { return push(make_node(OpTag::kAdd, {a, b})); }
NodeId Graph::sum(NodeId x) { return push(make_node(OpTag::kSum, {x})); }
NodeId Graph::transpose(NodeId x) { return push(make_node(OpTag::kTranspose, {x})); }
NodeId Graph::concat_cols(NodeId a, NodeId b) { return push(make_node(OpTag::kConcatCols, {a, b})); }
NodeId Graph::row_softmax(NodeId x) { return push(make_node(OpTag::kRowSoftmax, {x})); }
NodeId Graph::pairwise_abs_diff(NodeId x) { return push(make_node(OpTag::kPairwiseAbsDiff, {x})); }
NodeId Graph::row_normalize(NodeId x) { return push(make_node(OpTag::kRowNormalize, {x})); }

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
  Node n = make_node(OpTag::kSoftmaxCrossEntropy, {logits});
  n.indices = std::move(labels);
  return push(std::move(n));
}

NodeId Graph::custom(std::vector<NodeId> parents, CustomOp op) {
  if (!op.forward || !op.backward) throw GraphError("graph: custom op '" + op.name + "' is incomplete");
  Node n = make_node(OpTag::kCustomGrad, std::move(parents));
  n.custom = std::make_shared<CustomOp>(std::move(op));
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  Node n = make_node(OpTag::kScale, {x});
  n.scalar = factor;
  return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId x, std::vector<std::size_t> rows) {
  Node n = make_node(OpTag::kGatherRows, {x});
  n.indices = std::move(rows);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, std::size_t rows, std::size_t cols) {
  Node n = make_node(OpTag::kReshape, {x});
  n.shape_rows = rows;
  n.shape_cols = cols;
  return push(std::move(n));
}

const Matrix& Graph::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

const Matrix& Graph::grad(NodeId id) const {
  check_id(id);
  if (!backwarded_) throw GraphError("graph: gradients requested before backward()");
  return nodes_[id].grad;
}

void Graph::set_value(NodeId id, Matrix value) {
  check_id(id);
  if (nodes_[id].tag != OpTag::kInput) {
    throw GraphError("graph: set_value on non-input node " + std::to_string(id));
  }
  nodes_[id].value = std::move(value);
  forwarded_ = false;
  backwarded_ = false;
}

void Graph::shape_error(NodeId id, const Matrix& a, const Matrix& b, const char* detail) const {
  throw GraphError("graph: shape mismatch at node " + std::to_string(id) + " (" +
                   op_name(nodes_[id].tag) + "): " + a.shape_string() + " vs " + b.shape_string() +
                   (detail[0] ? std::string(", ") + detail : std::string()));
}

double Graph::forward() {
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].tag != OpTag::kInput) evaluate(id);
  }
  forwarded_ = true;
  backwarded_ = false;
  if (nodes_.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Matrix& last = nodes_.back().value;
  return last.rows() == 1 && last.cols() == 1 ? last(0, 0) : std::numeric_limits<double>::quiet_NaN();
}

void Graph::evaluate(NodeId id) {
  Node& node = nodes_[id];
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[node.parents[k]].value; };

  switch (node.tag) {
    case OpTag::kInput:
      break;
    case OpTag::kMatMul: {
      if (in(0).cols() != in(1).rows()) shape_error(id, in(0), in(1), "inner dimensions differ");
      node.value = dccdi::matmul(in(0), in(1));
      break;
    }
    case OpTag::kAddBias: {
      const Matrix& x = in(0);
      const Matrix& b = in(1);
      if (b.rows() != 1 || b.cols() != x.cols()) shape_error(id, x, b, "bias must be 1 x cols");
      node.value = x;
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) node.value(r, c) += b(0, c);
      break;
    }
    case OpTag::kTanh: {
      node.value = in(0);
      for (double& v : node.value.data()) v = std::tanh(v);
      break;
    }
    case OpTag::kRelu: {
      node.value = in(0);
      for (double& v : node.value.data()) v = v > 0.0 ? v : 0.0;
      break;
    }
    case OpTag::kSoftmaxCrossEntropy: {
      const Matrix& logits = in(0);
      if (node.indices.size() != logits.rows() || logits.rows() == 0) {
        shape_error(id, logits, Matrix(node.indices.size(), 1), "one label per row required");
      }
      double total = 0.0;
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        const std::size_t label = node.indices[r];
        if (label >= logits.cols()) {
          throw GraphError("graph: label " + std::to_string(label) + " out of range [0, " +
                           std::to_string(logits.cols()) + ") at node " + std::to_string(id));
        }
        const auto row = logits.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        total += std::log(z) + mx - row[label];
      }
      node.value = Matrix(1, 1, total / static_cast<double>(logits.rows()));
      break;
    }
    case OpTag::kNegSqDistance: {
      const Matrix& a = in(0);
      const Matrix& b = in(1);
      if (a.cols() != b.cols()) shape_error(id, a, b, "feature widths differ");
      node.value = Matrix(a.rows(), b.rows());
      for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
          double d = 0.0;
          for (std::size_t k = 0; k < a.cols(); ++k) {
            const double diff = a(i, k) - b(j, k);
            d += diff * diff;
          }
          node.value(i, j) = -d;
        }
      }
      break;
    }
    case OpTag::kCustomGrad: {
      std::vector<const Matrix*> inputs;
      for (NodeId p : node.parents) inputs.push_back(&nodes_[p].value);
      node.value = node.custom->forward(inputs);
      break;
    }
    case OpTag::kAdd: {
      if (!in(0).same_shape(in(1))) shape_error(id, in(0), in(1), "");
      node.value = in(0) + in(1);
      break;
    }
    case OpTag::kScale:
      node.value = in(0) * node.scalar;
      break;
    case OpTag::kSum:
      node.value = Matrix(1, 1, dccdi::sum(in(0)));
      break;
    case OpTag::kTranspose:
      node.value = in(0).transpose();
      break;
    case OpTag::kConcatCols: {
      if (in(0).rows() != in(1).rows()) shape_error(id, in(0), in(1), "row counts differ");
      node.value = dccdi::concat_cols(in(0), in(1));
      break;
    }
    case OpTag::kGatherRows: {
      for (std::size_t r : node.indices) {
        if (r >= in(0).rows()) {
          throw GraphError("graph: gather index " + std::to_string(r) + " out of range at node " +
                           std::to_string(id) + " (" + in(0).shape_string() + ")");
        }
      }
      node.value = select_rows(in(0), node.indices);
      break;
    }
    case OpTag::kReshape: {
      if (node.shape_rows * node.shape_cols != in(0).size()) {
        shape_error(id, in(0), Matrix(node.shape_rows, node.shape_cols), "reshape size differs");
      }
      node.value = Matrix(node.shape_rows, node.shape_cols, in(0).data());
      break;
    }
    case OpTag::kRowSoftmax: {
      node.value = in(0);
      for (std::size_t r = 0; r < node.value.rows(); ++r) {
        auto row = node.value.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double& v : row) {
          v = std::exp(v - mx);
          z += v;
        }
        for (double& v : row) v /= z;
      }
      break;
    }
    case OpTag::kPairwiseAbsDiff: {
      const Matrix& x = in(0);
      const std::size_t n = x.rows();
      node.value = Matrix(n * n, x.cols());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < x.cols(); ++k) node.value(i * n + j, k) = std::abs(x(i, k) - x(j, k));
      break;
    }
    case OpTag::kRowNormalize: {
      node.value = in(0);
      for (std::size_t r = 0; r < node.value.rows(); ++r) {
        auto row = node.value.row(r);
        double norm = 0.0;
        for (double v : row) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (double& v : row) v /= norm;
      }
      break;
    }
  }
}

void Graph::backward(NodeId loss) {
  check_id(loss);
  if (!forwarded_) throw GraphError("graph: backward() called before forward()");
  const Matrix& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw GraphError("graph: loss node " + std::to_string(loss) + " is " + lv.shape_string() + ", expected 1x1");
  }
  for (auto& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  nodes_[loss].grad(0, 0) = 1.0;
  for (NodeId id = loss + 1; id-- > 0;) {
    if (nodes_[id].needs_grad && nodes_[id].tag != OpTag::kInput) propagate(id);
  }
  backwarded_ = true;
}

void Graph::propagate(NodeId id) {
  Node& node = nodes_[id];
  const Matrix& g = node.grad;
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[node.parents[k]].value; };
  auto want = [&](std::size_t k) { return nodes_[node.parents[k]].needs_grad; };
  auto acc = [&](std::size_t k) -> Matrix& { return nodes_[node.parents[k]].grad; };

  switch (node.tag) {
    case OpTag::kInput:
      break;
    case OpTag::kMatMul:
      if (want(0)) acc(0) += matmul_nt(g, in(1));
      if (want(1)) acc(1) += matmul_tn(in(0), g);
      break;
    case OpTag::kAddBias:
      if (want(0)) acc(0) += g;
      if (want(1)) {
        Matrix& db = acc(1);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
      }
      break;
    case OpTag::kTanh:
      if (want(0)) {
        Matrix& dx = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = node.value.data()[i];
          dx.data()[i] += g.data()[i] * (1.0 - y * y);
        }
      }
      break;
    case OpTag::kRelu:
      if (want(0)) {
        Matrix& dx = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (in(0).data()[i] > 0.0) dx.data()[i] += g.data()[i];
      }
      break;
    case OpTag::kSoftmaxCrossEntropy:
      if (want(0)) {
        const Matrix& logits = in(0);
        Matrix& dx = acc(0);
        const double scale = g(0, 0) / static_cast<double>(logits.rows());
        for (std::size_t r = 0; r < logits.rows(); ++r) {
          const auto row = logits.row(r);
          const double mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (double v : row) z += std::exp(v - mx);
          for (std::size_t c = 0; c < logits.cols(); ++c) {
            const double p = std::exp(row[c] - mx) / z;
            dx(r, c) += scale * (p - (c == node.indices[r] ? 1.0 : 0.0));
          }
        }
      }
      break;
    case OpTag::kNegSqDistance: {
      const Matrix& a = in(0);
      const Matrix& b = in(1);
      if (want(0)) {
        Matrix gb = dccdi::matmul(g, b);
        Matrix& da = acc(0);
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double rs = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) rs += g(i, j);
          for (std::size_t k = 0; k < a.cols(); ++k) da(i, k) += -2.0 * (rs * a(i, k) - gb(i, k));
        }
      }
      if (want(1)) {
        Matrix gta = matmul_tn(g, a);
        Matrix& db = acc(1);
        for (std::size_t j = 0; j < b.rows(); ++j) {
          double cs = 0.0;
          for (std::size_t i = 0; i < g.rows(); ++i) cs += g(i, j);
          for (std::size_t k = 0; k < b.cols(); ++k) db(j, k) += 2.0 * (gta(j, k) - cs * b(j, k));
        }
      }
      break;
    }
    case OpTag::kCustomGrad: {
      std::vector<const Matrix*> inputs;
      for (NodeId p : node.parents) inputs.push_back(&nodes_[p].value);
      std::vector<Matrix> grads = node.custom->backward(inputs, node.value, g);
      if (grads.size() != node.parents.size()) {
        throw GraphError("graph: custom op '" + node.custom->name + "' returned " +
                         std::to_string(grads.size()) + " gradients for " +
                         std::to_string(node.parents.size()) + " parents");
      }
      for (std::size_t k = 0; k < grads.size(); ++k) {
        if (!want(k)) continue;
        if (!grads[k].same_shape(in(k))) shape_error(id, grads[k], in(k), "custom gradient shape");
        acc(k) += grads[k];
      }
      break;
    }
    case OpTag::kAdd:
      if (want(0)) acc(0) += g;
      if (want(1)) acc(1) += g;
      break;
    case OpTag::kScale:
      if (want(0)) acc(0) += g * node.scalar;
      break;
    case OpTag::kSum:
      if (want(0)) {
        for (double& v : acc(0).data()) v += g(0, 0);
      }
      break;
    case OpTag::kTranspose:
      if (want(0)) acc(0) += g.transpose();
      break;
    case OpTag::kConcatCols: {
      const std::size_t left = in(0).cols();
      if (want(0)) acc(0) += slice_cols(g, 0, left);
      if (want(1)) acc(1) += slice_cols(g, left, g.cols());
      break;
    }
    case OpTag::kGatherRows:
      if (want(0)) {
        Matrix& dx = acc(0);
        for (std::size_t i = 0; i < node.indices.size(); ++i)
          for (std::size_t c = 0; c < g.cols(); ++c) dx(node.indices[i], c) += g(i, c);
      }
      break;
    case OpTag::kReshape:
      if (want(0)) {
        Matrix& dx = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) dx.data()[i] += g.data()[i];
      }
      break;
    case OpTag::kRowSoftmax:
      if (want(0)) {
        Matrix& dx = acc(0);
        const Matrix& y = node.value;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dotgy = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dotgy += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (g(r, c) - dotgy);
        }
      }
      break;
    case OpTag::kPairwiseAbsDiff:
      if (want(0)) {
        const Matrix& x = in(0);
        Matrix& dx = acc(0);
        const std::size_t n = x.rows();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t row = i * n + j;
            for (std::size_t k = 0; k < x.cols(); ++k) {
              const double diff = x(i, k) - x(j, k);
              if (diff == 0.0) continue;
              const double s = diff > 0.0 ? g(row, k) : -g(row, k);
              dx(i, k) += s;
              dx(j, k) -= s;
            }
          }
        }
      }
      break;
    case OpTag::kRowNormalize:
      if (want(0)) {
        const Matrix& x = in(0);
        const Matrix& y = node.value;
        Matrix& dx = acc(0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double norm = 0.0;
          double dotgy = 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) {
            norm += x(r, c) * x(r, c);
            dotgy += g(r, c) * y(r, c);
          }
          norm = std::sqrt(norm);
          if (norm == 0.0) continue;
          for (std::size_t c = 0; c < x.cols(); ++c) dx(r, c) += (g(r, c) - y(r, c) * dotgy) / norm;
        }
      }
      break;
  }
}

}  // namespace dccdi
