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

#ifndef DCCDI_META_HPP_
#define DCCDI_META_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dccdi/autodiff.hpp"
#include "dccdi/cca.hpp"
#include "dccdi/dataset.hpp"
#include "dccdi/heads.hpp"
#include "dccdi/mlp.hpp"
#include "dccdi/optimizer.hpp"
#include "json.hpp"

namespace dccdi {

struct ModelConfig {
  std::vector<std::size_t> trunk_hidden;
  std::size_t trunk_output = 128;
  Activation trunk_activation = Activation::kRelu;
  // Number of leading trunk layers kept frozen at meta-test and in Stage 1;
  // unset means all but the last layer.
  std::optional<std::size_t> frozen_prefix;
  GnnConfig gnn;
  std::size_t relation_hidden = 32;
};

struct Model {
  MlpParams trunk;
  std::size_t frozen_prefix = 0;
  DenseLayer classifier;  // Stage-1 classifier over all source classes
  GnnParams gnn;
  MlpParams relation;

  std::size_t trainable_layers() const { return trunk.layers.size() - frozen_prefix; }
  friend bool operator==(const Model&, const Model&) = default;
};

Model init_model(const ModelConfig& cfg, std::size_t visual_dim, std::size_t way, std::size_t source_classes,
                 std::uint64_t seed);

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);
nlohmann::json model_to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);

struct EpisodeShape {
  std::size_t way = 5;
  std::size_t shot = 5;
  std::size_t query = 15;
};

struct TraceRow {
  std::size_t episode = 0;
  std::string stage;
  double support_loss = 0.0;
  std::optional<double> query_loss;
};

struct Stage1Options {
  std::size_t episodes = 100;
  double lr = 0.01;
  EpisodeShape shape;
  std::uint64_t seed = 1;
};

/// Supervised warm-up: per episode, cross-entropy of the global classifier on
/// the support embeddings only, SGD on the trainable trunk layers and the
/// classifier. Throws std::logic_error if a frozen layer changes.
void stage1_train(Model& model, const Dataset& source, const Stage1Options& opt, std::vector<TraceRow>* trace);

struct Stage2Options {
  std::size_t episodes = 100;
  std::size_t inner_steps = 5;
  double inner_lr = 0.01;
  double outer_lr = 0.001;
  OptimizerKind outer_optimizer = OptimizerKind::kRmsProp;
  HeadKind head = HeadKind::kGraph;
  EpisodeShape shape;
  std::uint64_t seed = 2;
};

/// Called with the query-loss graph of every Stage-2 episode and the nodes
/// holding the adapted parameters.
using QueryGraphObserver = std::function<void(const Graph&, const std::vector<NodeId>&)>;

/// First-order MAML over all trunk layers (and the graph module when it is
/// the configured head). The adapted parameters enter the query graph as
/// leaves, so no second derivatives are formed; the query gradient at the
/// adapted point updates the original parameters through the outer optimizer.
void stage2_train(Model& model, const Dataset& source, const Stage2Options& opt, std::vector<TraceRow>* trace,
                  const QueryGraphObserver& observer = {});

struct RelationOptions {
  std::size_t episodes = 100;
  double lr = 0.001;
  EpisodeShape shape;
  std::uint64_t seed = 3;
};

/// Episodic training of the relation module on a frozen trunk.
void train_relation(Model& model, const Dataset& source, const RelationOptions& opt, std::vector<TraceRow>* trace);

struct EvalOptions {
  std::size_t episodes = 600;
  EpisodeShape shape;
  std::uint64_t seed = 4;
  std::size_t threads = 1;
};

struct EvalReport {
  std::string method;
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;
  std::string fingerprint;
  std::uint64_t seed = 0;
  EpisodeShape shape;
};

/// mean and 1.96 * sample standard deviation / sqrt(n).
EvalReport summarize(std::string method, std::vector<double> accuracies, const EvalOptions& opt,
                     const nlohmann::json& settings);

/// Frozen-trunk evaluation on visual features with one of the metric heads.
EvalReport evaluate_baseline(const Model& model, const Dataset& target, HeadKind head, const EvalOptions& opt);

enum class FuseMode { kConcatTextProj, kConcatBothProj };
std::string to_string(FuseMode f);
FuseMode fuse_mode_from_string(const std::string& name);

// Rescaling of the projected text block before fusion. kPerDim matches its
// mean per-dimension support variance to the visual block's; kTotal matches
// the summed variance, so the block's energy does not grow with its width.
enum class TextBalance { kNone, kPerDim, kTotal };
std::string to_string(TextBalance b);
TextBalance text_balance_from_string(const std::string& name);

struct MetaTestOptions {
  EvalOptions eval;
  std::size_t cca_steps = 20;
  double cca_lr = 0.001;
  std::vector<std::size_t> cca_hidden{1024, 1024};
  Activation cca_activation = Activation::kTanh;
  std::size_t output_dim = 20;
  double r1 = kDefaultR1;
  std::size_t top_k = 0;
  std::size_t adapt_steps = 50;
  double adapt_lr = 0.01;
  bool use_text = true;
  FuseMode fuse_mode = FuseMode::kConcatTextProj;
  // The correlation objective is invariant to the scale of h, so training
  // leaves the size of the text block unidentified. text_balance picks a
  // reference scale; text_scale multiplies the result.
  TextBalance text_balance = TextBalance::kNone;
  double text_scale = 1.0;
  double ensemble_weight = 0.5;
  LinearInit linear_init = LinearInit::kPrototype;
};

struct DccdiEpisode {
  double accuracy = 0.0;
  MlpParams adapted_trunk;
  std::vector<double> cca_trace;
  bool undersampled = false;
};

/// One episode of the meta-test protocol; `seed` seeds the fresh DCCA block
/// and the linear head.
DccdiEpisode run_dccdi_episode(const Model& model, const Episode& ep, const MetaTestOptions& opt,
                               std::uint64_t seed);

EvalReport meta_test_dccdi(const Model& model, const Dataset& target, const MetaTestOptions& opt);

void to_json(nlohmann::json& j, const TraceRow& r);
void to_json(nlohmann::json& j, const EvalReport& r);

}  // namespace dccdi

#endif  // DCCDI_META_HPP_
