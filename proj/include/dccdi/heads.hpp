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

#ifndef DCCDI_HEADS_HPP_
#define DCCDI_HEADS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dccdi/autodiff.hpp"
#include "dccdi/matrix.hpp"
#include "dccdi/mlp.hpp"
#include "json.hpp"

namespace dccdi {

enum class HeadKind { kPrototypical, kMatching, kRelation, kGraph, kLinear, kEnsemble };

std::string to_string(HeadKind h);
HeadKind head_from_string(const std::string& name);

struct HeadScores {
  Matrix logits;  // queries x way
  HeadKind tag = HeadKind::kPrototypical;
};

/// Number of classes implied by support labels, checking every class in
/// [0, way) has at least one member.
std::size_t way_of(std::span<const std::size_t> labels);

// Graph versions take one embedding node holding the support rows followed
// by the query rows; `support_labels` covers the first rows.

NodeId prototypical_node(Graph& g, NodeId emb, std::span<const std::size_t> support_labels, std::size_t queries);
NodeId matching_node(Graph& g, NodeId emb, std::span<const std::size_t> support_labels, std::size_t queries);
NodeId relation_node(Graph& g, NodeId emb, std::span<const std::size_t> support_labels, std::size_t queries,
                     const MlpParams& relation, const MlpNodes& nodes);

/// logit[q][c] = -|query_q - mean of class c support|^2
HeadScores prototypical_logits(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query);
/// logit[q][c] = sum of cosine(query_q, s) over class c support s
HeadScores matching_logits(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query);
/// logit[q][c] = mean of relation(concat(query_q, s)) over class c support s
HeadScores relation_scores(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query,
                           const MlpParams& relation);

MlpParams init_relation(std::size_t embedding_dim, std::size_t hidden, std::uint64_t seed);

// Graph metric module over one fully connected episode graph. Node features
// start as [embedding, label slot] where the label slot is one-hot for
// labeled nodes and uniform 1/C for unlabeled ones. Each round r computes
//
//   A   = row_softmax(edge_r(|F_i - F_j|))
//   F  <- node_r(concat(F, A F))
//
// and the readout maps the final features of unlabeled nodes to C logits.
struct GnnParams {
  std::vector<MlpParams> edge;  // f_r -> hidden (relu) -> 1
  std::vector<MlpParams> node;  // 2 f_r -> width (relu)
  MlpParams readout;            // f_R -> C
  std::size_t embedding_dim = 0;
  std::size_t way = 0;

  std::vector<Matrix*> tensors();
  friend bool operator==(const GnnParams&, const GnnParams&) = default;
};

struct GnnConfig {
  std::size_t rounds = 2;
  std::size_t edge_hidden = 16;
  std::size_t node_width = 32;
  // Start as plain label propagation: each node layer copies its own and its
  // aggregated label channels into its first `way` outputs, and the readout
  // reads them back out. Without this the module sits on a long plateau
  // before it discovers the label path.
  bool label_passthrough = true;
};

GnnParams init_gnn(std::size_t embedding_dim, std::size_t way, const GnnConfig& cfg, std::uint64_t seed);

/// Inserts `extra` zero-weight embedding inputs after the existing ones, so
/// the widened module ignores them until trained.
GnnParams widen_gnn_input(const GnnParams& p, std::size_t extra);

struct GnnNodes {
  std::vector<MlpNodes> edge;
  std::vector<MlpNodes> node;
  MlpNodes readout;
};

GnnNodes bind_gnn(Graph& g, const GnnParams& p);
std::vector<Matrix> gnn_gradients(const Graph& g, const GnnNodes& n);

struct GnnForward {
  NodeId logits;                   // one row per unlabeled node, in order
  std::vector<NodeId> adjacency;   // n x n per round
};

/// `labels[i]` is the class of node i, or `kUnlabeled`.
inline constexpr std::size_t kUnlabeled = static_cast<std::size_t>(-1);
GnnForward gnn_forward(Graph& g, const GnnParams& p, const GnnNodes& n, NodeId emb,
                       std::span<const std::size_t> labels);

HeadScores graph_metric_scores(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query,
                               const GnnParams& p);

/// Support-only training loss for the graph module. With two or more shots,
/// one support node per class (rotating with `step`) has its label hidden
/// and is classified from the rest. With one shot, unlabeled copies of the
/// support nodes are appended and classified instead.
NodeId gnn_support_loss(Graph& g, const GnnParams& p, const GnnNodes& n, NodeId support_emb,
                        std::span<const std::size_t> labels, std::size_t step);

// Linear classifier.
enum class LinearInit { kZero, kRandom, kPrototype };

std::string to_string(LinearInit i);
LinearInit linear_init_from_string(const std::string& name);

/// kRandom draws N(0, 0.01^2) weights from `seed`; kPrototype starts at the
/// prototypical classifier (w_c = 2 p_c, b_c = -|p_c|^2).
DenseLayer init_linear_head(const Matrix& emb, std::span<const std::size_t> labels, LinearInit init,
                            std::uint64_t seed);

/// Full-batch gradient descent on mean cross-entropy.
DenseLayer linear_head_fit(const Matrix& emb, std::span<const std::size_t> labels, std::size_t epochs, double lr,
                           LinearInit init = LinearInit::kRandom, std::uint64_t seed = 0);
HeadScores linear_head_logits(const DenseLayer& head, const Matrix& query);

/// weight * softmax(a) + (1 - weight) * softmax(b), row-wise.
HeadScores ensemble_scores(const HeadScores& a, const HeadScores& b, double weight = 0.5);

/// Row-wise argmax.
std::vector<std::size_t> predictions(const Matrix& logits);
double accuracy(const Matrix& logits, std::span<const std::size_t> labels);

void to_json(nlohmann::json& j, const GnnParams& p);
void from_json(const nlohmann::json& j, GnnParams& p);

}  // namespace dccdi

#endif  // DCCDI_HEADS_HPP_
