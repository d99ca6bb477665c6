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

#ifndef DCCDI_AUTODIFF_HPP_
#define DCCDI_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccdi/matrix.hpp"

namespace dccdi {

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Graph is a tape: nodes are appended in construction order, which is a
// topological order. Building a node only records it; forward() evaluates
// every node, backward() propagates d(loss)/d(node) in reverse order. Leaf
// values may be replaced with set_value() and the graph re-run, which is how
// the finite-difference checker perturbs parameters.

using NodeId = std::size_t;

enum class OpTag {
  kInput,
  kMatMul,
  kAddBias,
  kTanh,
  kRelu,
  kSoftmaxCrossEntropy,
  kNegSqDistance,
  kCustomGrad,
  kAdd,
  kScale,
  kSum,
  kTranspose,
  kConcatCols,
  kGatherRows,
  kReshape,
  kRowSoftmax,
  kPairwiseAbsDiff,
  kRowNormalize,
};

const char* op_name(OpTag tag);

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A node whose backward rule is supplied by the caller. `forward` maps the
/// parent values to the output value; `backward` maps (parent values, output
/// value, upstream gradient) to one gradient per parent, each shaped like
/// its parent.
struct CustomOp {
  std::string name;
  std::function<Matrix(const std::vector<const Matrix*>& inputs)> forward;
  std::function<std::vector<Matrix>(const std::vector<const Matrix*>& inputs, const Matrix& output,
                                    const Matrix& upstream)>
      backward;
};

class Graph {
 public:
  NodeId input(Matrix value, bool requires_grad = false);
  NodeId parameter(Matrix value) { return input(std::move(value), true); }

  NodeId matmul(NodeId a, NodeId b);
  /// x (n x m) plus a 1 x m bias broadcast over rows.
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  /// Mean over rows of -log softmax(logits)[label]; 1 x 1.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels);
  /// out(i, j) = -||a_i - b_j||^2 for rows of a and b.
  NodeId neg_sq_distance(NodeId a, NodeId b);
  NodeId custom(std::vector<NodeId> parents, CustomOp op);

  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId sum(NodeId x);
  NodeId transpose(NodeId x);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId gather_rows(NodeId x, std::vector<std::size_t> rows);
  NodeId reshape(NodeId x, std::size_t rows, std::size_t cols);
  NodeId row_softmax(NodeId x);
  /// For an n x f input, row i * n + j of the (n * n) x f output is |x_i - x_j|.
  NodeId pairwise_abs_diff(NodeId x);
  /// Divides each row by its L2 norm. Zero rows stay zero and pass no gradient.
  NodeId row_normalize(NodeId x);

  /// Evaluates every node in order and returns the value of the last node
  /// if it is 1 x 1, otherwise NaN.
  double forward();
  /// Requires a prior forward(). Populates gradients of `loss` (1 x 1) with
  /// respect to every node that depends on a trainable input.
  void backward(NodeId loss);

  const Matrix& value(NodeId id) const;
  const Matrix& grad(NodeId id) const;
  void set_value(NodeId id, Matrix value);

  OpTag tag(NodeId id) const { return nodes_.at(id).tag; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_.at(id).parents; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool forwarded() const { return forwarded_; }

 private:
  struct Node {
    OpTag tag = OpTag::kInput;
    std::vector<NodeId> parents;
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    double scalar = 0.0;
    std::size_t shape_rows = 0;
    std::size_t shape_cols = 0;
    std::vector<std::size_t> indices;
    std::shared_ptr<CustomOp> custom;
  };

  static Node make_node(OpTag tag, std::vector<NodeId> parents);
  NodeId push(Node node);
  void check_id(NodeId id) const;
  void evaluate(NodeId id);
  void propagate(NodeId id);
  [[noreturn]] void shape_error(NodeId id, const Matrix& a, const Matrix& b, const char* detail) const;

  std::vector<Node> nodes_;
  bool forwarded_ = false;
  bool backwarded_ = false;
};

}  // namespace dccdi

#endif  // DCCDI_AUTODIFF_HPP_
