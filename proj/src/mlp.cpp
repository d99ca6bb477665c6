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

#include "dccdi/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "dccdi/random.hpp"

namespace dccdi {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "linear") return Activation::kLinear;
  throw std::invalid_argument("unknown activation '" + name + "' (expected tanh, relu or linear)");
}

std::size_t MlpParams::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
std::size_t MlpParams::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

std::vector<Matrix*> MlpParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Matrix*> MlpParams::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

MlpParams init_mlp(std::span<const std::size_t> dims, std::span<const Activation> activations,
                   std::uint64_t seed) {
  if (dims.size() != activations.size() + 1) {
    throw std::invalid_argument("init_mlp: " + std::to_string(dims.size()) + " dims need " +
                                std::to_string(dims.size() - 1) + " activations, got " +
                                std::to_string(activations.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("init_mlp: layer dims must be >= 1");
  }
  Rng rng(seed);
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    DenseLayer layer;
    layer.weight = Matrix(dims[i], dims[i + 1]);
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    layer.bias = Matrix(1, dims[i + 1]);
    layer.activation = activations[i];
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpNodes bind_mlp(Graph& graph, const MlpParams& params, std::size_t first_trainable) {
  MlpNodes nodes;
  nodes.first_trainable = first_trainable;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const bool trainable = i >= first_trainable;
    nodes.weights.push_back(graph.input(params.layers[i].weight, trainable));
    nodes.biases.push_back(graph.input(params.layers[i].bias, trainable));
  }
  return nodes;
}

NodeId mlp_forward(Graph& graph, const MlpParams& params, const MlpNodes& nodes, NodeId x) {
  if (nodes.weights.size() != params.layers.size()) {
    throw std::invalid_argument("mlp_forward: node binding does not match the parameters");
  }
  const Matrix& xv = graph.value(x);
  if (graph.tag(x) == OpTag::kInput && !params.layers.empty() && xv.cols() != params.input_dim()) {
    throw std::invalid_argument("mlp_forward: layer 0 expects " + std::to_string(params.input_dim()) +
                                " inputs, got " + xv.shape_string());
  }
  NodeId h = x;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    h = graph.add_bias(graph.matmul(h, nodes.weights[i]), nodes.biases[i]);
    switch (params.layers[i].activation) {
      case Activation::kTanh: h = graph.tanh(h); break;
      case Activation::kRelu: h = graph.relu(h); break;
      case Activation::kLinear: break;
    }
  }
  return h;
}

Matrix mlp_apply(const MlpParams& params, const Matrix& x) {
  Matrix h = x;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const DenseLayer& l = params.layers[i];
    if (h.cols() != l.in_dim()) {
      throw std::invalid_argument("mlp_apply: layer " + std::to_string(i) + " expects " +
                                  std::to_string(l.in_dim()) + " inputs, got " + h.shape_string());
    }
    h = matmul(h, l.weight);
    for (std::size_t r = 0; r < h.rows(); ++r) {
      auto row = h.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        double v = row[c] + l.bias(0, c);
        if (l.activation == Activation::kTanh) v = std::tanh(v);
        else if (l.activation == Activation::kRelu) v = v > 0.0 ? v : 0.0;
        row[c] = v;
      }
    }
  }
  return h;
}

std::vector<Matrix> mlp_gradients(const Graph& graph, const MlpNodes& nodes) {
  std::vector<Matrix> out;
  for (std::size_t i = nodes.first_trainable; i < nodes.weights.size(); ++i) {
    out.push_back(graph.grad(nodes.weights[i]));
    out.push_back(graph.grad(nodes.biases[i]));
  }
  return out;
}

NodeId cross_entropy(Graph& graph, NodeId logits, std::span<const std::size_t> labels) {
  return graph.softmax_cross_entropy(logits, std::vector<std::size_t>(labels.begin(), labels.end()));
}

void to_json(nlohmann::json& j, const MlpParams& p) {
  j = nlohmann::json::array();
  for (const auto& l : p.layers) {
    j.push_back({{"in", l.in_dim()},
                 {"out", l.out_dim()},
                 {"activation", to_string(l.activation)},
                 {"weight", l.weight.data()},
                 {"bias", l.bias.data()}});
  }
}

void from_json(const nlohmann::json& j, MlpParams& p) {
  p.layers.clear();
  for (const auto& jl : j) {
    const auto in = jl.at("in").get<std::size_t>();
    const auto out = jl.at("out").get<std::size_t>();
    DenseLayer l;
    l.weight = Matrix(in, out, jl.at("weight").get<std::vector<double>>());
    l.bias = Matrix(1, out, jl.at("bias").get<std::vector<double>>());
    l.activation = activation_from_string(jl.at("activation").get<std::string>());
    if (!p.layers.empty() && p.layers.back().out_dim() != in) {
      throw std::invalid_argument("checkpoint: layer dims do not chain");
    }
    p.layers.push_back(std::move(l));
  }
}

}  // namespace dccdi
