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

#ifndef DCCDI_CONFIG_HPP_
#define DCCDI_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dccdi/dataset.hpp"
#include "dccdi/meta.hpp"
#include "dccdi/synth.hpp"
#include "json.hpp"

namespace dccdi {

// A dataset is either a JSON-lines file or a synthetic generator config.
// Unset synth seeds are derived from the experiment seed.
struct DatasetSpec {
  std::string path;
  SynthConfig synth;
  bool synth_seed_set = false;
  bool mixer_seed_set = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string checkpoint;
  DatasetSpec source;
  DatasetSpec target;
  ModelConfig model;
  EpisodeShape episode;
  Stage1Options stage1;
  Stage2Options stage2;
  RelationOptions relation;
  MetaTestOptions meta_test;
  std::size_t eval_episodes = 600;
  std::vector<std::size_t> shots{5, 10, 20};
  std::vector<std::string> methods{"prototypical", "matching", "relation", "dccdi-no-text", "dccdi"};
  std::vector<std::size_t> ablation_dims{10, 15, 20, 25};

  ExperimentConfig();
};

/// Throws ConfigError on unknown keys, bad types or bad enum names.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Every knob, with derived seeds resolved.
nlohmann::json config_to_json(const ExperimentConfig& c);
/// Empty path gives the defaults.
ExperimentConfig load_config(const std::string& path);

SynthConfig resolved_synth(const ExperimentConfig& c, bool target);
/// Loads the file or generates the synthetic set.
Dataset resolve_dataset(const ExperimentConfig& c, bool target);

// Per-stage options with the episode shape and derived seeds filled in.
Stage1Options stage1_options(const ExperimentConfig& c);
Stage2Options stage2_options(const ExperimentConfig& c);
RelationOptions relation_options(const ExperimentConfig& c);
EvalOptions eval_options(const ExperimentConfig& c, std::size_t shot);
MetaTestOptions meta_test_options(const ExperimentConfig& c, std::size_t shot);
std::uint64_t model_seed(const ExperimentConfig& c);

/// Runs one evaluation cell. `method` is a baseline head name, "dccdi" or
/// "dccdi-no-text".
EvalReport evaluate_method(const Model& model, const Dataset& target, const std::string& method,
                           const MetaTestOptions& opt);

}  // namespace dccdi

#endif  // DCCDI_CONFIG_HPP_
