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

#include "dccdi/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dccdi {

double GradcheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& p : parameters) worst = std::max(worst, p.max_rel_error);
  return worst;
}

GradcheckReport gradcheck(const GraphBuilder& builder, std::uint64_t seed, double h) {
  GradcheckGraph built = builder(seed);
  Graph& g = built.graph;
  g.forward();
  g.backward(built.loss);

  // set_value discards gradients, so read them all before probing.
  std::vector<Matrix> analytic_grads;
  for (const auto& entry : built.parameters) analytic_grads.push_back(g.grad(entry.second));

  GradcheckReport report;
  for (std::size_t p = 0; p < built.parameters.size(); ++p) {
    const auto& [name, id] = built.parameters[p];
    const Matrix& analytic = analytic_grads[p];
    const Matrix original = g.value(id);
    Matrix numeric(original.rows(), original.cols());
    for (std::size_t i = 0; i < original.size(); ++i) {
      Matrix probe = original;
      probe.data()[i] = original.data()[i] + h;
      g.set_value(id, probe);
      g.forward();
      const double up = g.value(built.loss)(0, 0);
      probe.data()[i] = original.data()[i] - h;
      g.set_value(id, probe);
      g.forward();
      const double down = g.value(built.loss)(0, 0);
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    g.set_value(id, original);

    ParameterError err;
    err.name = name;
    err.entries = original.size();
    err.max_abs_error = max_abs_diff(analytic, numeric);
    const double scale = std::max({max_abs(analytic), max_abs(numeric), 1e-8});
    err.max_rel_error = err.max_abs_error / scale;
    report.parameters.push_back(err);
  }
  return report;
}

}  // namespace dccdi
