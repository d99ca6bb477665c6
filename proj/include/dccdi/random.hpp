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

#ifndef DCCDI_RANDOM_HPP_
#define DCCDI_RANDOM_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "dccdi/matrix.hpp"

namespace dccdi {

std::uint64_t splitmix64(std::uint64_t x);

/// Combines a base seed with a stream tag into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

/// Seeded generator. Every random draw in the library goes through one of
/// these so runs are reproducible from the configured seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace dccdi

#endif  // DCCDI_RANDOM_HPP_
