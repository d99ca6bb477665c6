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

#ifndef DCCDI_DATASET_HPP_
#define DCCDI_DATASET_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccdi/matrix.hpp"

namespace dccdi {

struct MultimodalSample {
  std::string id;
  int label = 0;
  std::vector<double> visual;
  std::vector<double> text;

  friend bool operator==(const MultimodalSample&, const MultimodalSample&) = default;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<MultimodalSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t visual_dim() const { return empty() ? 0 : samples.front().visual.size(); }
  std::size_t text_dim() const { return empty() ? 0 : samples.front().text.size(); }
  /// Sorted distinct labels.
  std::vector<int> classes() const;
  /// Throws DatasetError on ragged widths or non-finite entries.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// A C-way N-shot task. Labels inside the episode are re-indexed to [0, C);
/// `classes[c]` is the original label of episode class c. Both sets are
/// ordered class-major.
struct Episode {
  std::vector<MultimodalSample> support;
  std::vector<MultimodalSample> query;
  std::vector<int> classes;

  std::size_t way() const { return classes.size(); }
  Matrix support_visual() const;
  Matrix support_text() const;
  Matrix query_visual() const;
  Matrix query_text() const;
  std::vector<std::size_t> support_labels() const;
  std::vector<std::size_t> query_labels() const;
};

/// Draws episodes from one dataset. Construction indexes samples by class
/// once; each draw is independent and reproducible from its seed.
class TaskSampler {
 public:
  explicit TaskSampler(const Dataset& dataset);

  /// C classes uniformly without replacement, then N + M samples per class
  /// without replacement, the first N going to the support set.
  Episode sample(std::size_t way, std::size_t shot, std::size_t query, std::uint64_t seed) const;

  std::size_t num_classes() const { return by_class_.size(); }

 private:
  const Dataset* dataset_;
  std::vector<int> labels_;
  std::vector<std::vector<std::size_t>> by_class_;
};

Episode sample_task(const Dataset& dataset, std::size_t way, std::size_t shot, std::size_t query, std::uint64_t seed);

/// Seed of episode `index` in a run with base seed `base`.
inline std::uint64_t episode_seed(std::uint64_t base, std::size_t index) { return base ^ index; }

/// JSON lines, one {"id", "label", "visual", "text"} object per line.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& dataset, const std::string& path);

}  // namespace dccdi

#endif  // DCCDI_DATASET_HPP_
