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

#ifndef DCCDI_ERRORS_HPP_
#define DCCDI_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dccdi {

/// A training loop hit a non-finite loss. `index` is the step or episode.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& loop, std::size_t index, double loss)
      : std::runtime_error(loop + ": non-finite loss " + std::to_string(loss) + " at index " +
                           std::to_string(index)),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

}  // namespace dccdi

#endif  // DCCDI_ERRORS_HPP_
