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

#ifndef DCCDI_MLP_HPP_
#define DCCDI_MLP_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dccdi/autodiff.hpp"
#include "dccdi/matrix.hpp"
#include "json.hpp"

namespace dccdi {

enum class Activation { kTanh, kRelu, kLinear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::kLinear;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Glorot-uniform weights, zero biases. `dims` has one more entry than
/// `activations`.
MlpParams init_mlp(std::span<const std::size_t> dims, std::span<const Activation> activations,
                   std::uint64_t seed);

/// Graph handles for one MLP's parameters. Layers before `first_trainable`
/// are bound as constants.
struct MlpNodes {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
  std::size_t first_trainable = 0;
};

MlpNodes bind_mlp(Graph& graph, const MlpParams& params, std::size_t first_trainable = 0);

/// Records the forward pass of `params` on node `x` (N x in) and returns
/// the N x out output node.
NodeId mlp_forward(Graph& graph, const MlpParams& params, const MlpNodes& nodes, NodeId x);

/// Value-only forward pass.
Matrix mlp_apply(const MlpParams& params, const Matrix& x);

/// Gradients of the trainable layers, in tensors() order restricted to
/// layers >= first_trainable.
std::vector<Matrix> mlp_gradients(const Graph& graph, const MlpNodes& nodes);

/// Mean softmax cross-entropy of logits against labels as a 1 x 1 node.
NodeId cross_entropy(Graph& graph, NodeId logits, std::span<const std::size_t> labels);

void to_json(nlohmann::json& j, const MlpParams& p);
void from_json(const nlohmann::json& j, MlpParams& p);

}  // namespace dccdi

#endif  // DCCDI_MLP_HPP_
