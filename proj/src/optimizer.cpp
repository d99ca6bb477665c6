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

#include "dccdi/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dccdi {

OptimizerState make_sgd(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::kSgd;
  s.lr = lr;
  return s;
}

OptimizerState make_rmsprop(double lr, double decay, double epsilon) {
  OptimizerState s;
  s.kind = OptimizerKind::kRmsProp;
  s.lr = lr;
  s.decay = decay;
  s.epsilon = epsilon;
  return s;
}

void optimizer_step(OptimizerState& state, std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("optimizer_step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i], grads[i], "optimizer_step");

  if (state.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->data();
      const auto& g = grads[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= state.lr * g[k];
    }
    return;
  }

  if (state.accumulators.empty()) {
    for (const Matrix& g : grads) state.accumulators.emplace_back(g.rows(), g.cols());
  }
  if (state.accumulators.size() != params.size()) {
    throw std::invalid_argument("optimizer_step: optimizer state tracks " +
                                std::to_string(state.accumulators.size()) + " tensors, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(state.accumulators[i], grads[i], "optimizer_step accumulator");
    auto& p = params[i]->data();
    auto& acc = state.accumulators[i].data();
    const auto& g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      acc[k] = state.decay * acc[k] + (1.0 - state.decay) * g[k] * g[k];
      p[k] -= state.lr * g[k] / (std::sqrt(acc[k]) + state.epsilon);
    }
  }
}

}  // namespace dccdi
