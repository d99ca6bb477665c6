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

#ifndef DCCDI_GRADCHECK_HPP_
#define DCCDI_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dccdi/autodiff.hpp"

namespace dccdi {

struct GradcheckGraph {
  Graph graph;
  NodeId loss = 0;
  std::vector<std::pair<std::string, NodeId>> parameters;
};

using GraphBuilder = std::function<GradcheckGraph(std::uint64_t seed)>;

struct ParameterError {
  std::string name;
  std::size_t entries = 0;
  double max_abs_error = 0.0;
  // max |analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8), with
  // the maxima taken over the whole tensor.
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<ParameterError> parameters;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

/// Compares backward() against central differences with step h for every
/// entry of every listed parameter.
GradcheckReport gradcheck(const GraphBuilder& builder, std::uint64_t seed, double h = 1e-6);

}  // namespace dccdi

#endif  // DCCDI_GRADCHECK_HPP_
