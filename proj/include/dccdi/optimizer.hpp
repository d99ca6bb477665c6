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

#ifndef DCCDI_OPTIMIZER_HPP_
#define DCCDI_OPTIMIZER_HPP_

#include <span>
#include <vector>

#include "dccdi/matrix.hpp"

namespace dccdi {

enum class OptimizerKind { kRmsProp, kSgd };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.01;
  double decay = 0.9;
  double epsilon = 1e-8;
  // Running mean of squared gradients, one per parameter tensor. Allocated
  // on the first RMSprop step.
  std::vector<Matrix> accumulators;
};

OptimizerState make_sgd(double lr);
OptimizerState make_rmsprop(double lr, double decay = 0.9, double epsilon = 1e-8);

/// rmsprop: acc = decay * acc + (1 - decay) * g^2; p -= lr * g / (sqrt(acc) + eps)
/// sgd:     p -= lr * g
void optimizer_step(OptimizerState& state, std::span<Matrix* const> params, std::span<const Matrix> grads);

}  // namespace dccdi

#endif  // DCCDI_OPTIMIZER_HPP_
