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

#ifndef DCCDI_GRADCHECK_SUITE_HPP_
#define DCCDI_GRADCHECK_SUITE_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dccdi {

struct SuiteCheck {
  std::string module;  // autodiff, mlp, cca or heads
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SuiteReport {
  std::vector<SuiteCheck> checks;
  bool passed() const;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  // Name of a check whose analytic gradient is deliberately scaled by 1.5
  // before comparison. Used as a negative control; empty for a real run.
  std::string corrupt;
};

/// Finite-difference checks of every differentiable op, the MLP, the
/// correlation loss (100 instances over N in {20, 50}, d in {2, 3, 5},
/// r1 in {1e-4, 1e-3}) and the trainable heads.
SuiteReport run_gradcheck_suite(const SuiteOptions& opt = {});

void to_json(nlohmann::json& j, const SuiteCheck& c);
void to_json(nlohmann::json& j, const SuiteReport& r);

}  // namespace dccdi

#endif  // DCCDI_GRADCHECK_SUITE_HPP_
