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

#include "dccdi/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dccdi/random.hpp"

namespace dccdi {

namespace {

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

// way x ns matrix whose row c averages the class-c support rows.
Matrix class_average(std::span<const std::size_t> labels, std::size_t way) {
  Matrix m(way, labels.size());
  std::vector<double> counts(way, 0.0);
  for (std::size_t l : labels) counts[l] += 1.0;
  for (std::size_t s = 0; s < labels.size(); ++s) m(labels[s], s) = 1.0 / counts[labels[s]];
  return m;
}

// Class means of the support rows. Each coordinate is summed in sorted
// order, which makes the prototypes exactly independent of support order.
NodeId class_means(Graph& g, NodeId support, std::span<const std::size_t> labels, std::size_t way) {
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  CustomOp op;
  op.name = "class-mean";
  op.forward = [lab, way](const std::vector<const Matrix*>& in) {
    const Matrix& x = *in[0];
    Matrix out(way, x.cols());
    std::vector<double> vals;
    for (std::size_t c = 0; c < way; ++c) {
      for (std::size_t k = 0; k < x.cols(); ++k) {
        vals.clear();
        for (std::size_t s = 0; s < lab.size(); ++s)
          if (lab[s] == c) vals.push_back(x(s, k));
        std::sort(vals.begin(), vals.end());
        double sum = 0.0;
        for (double v : vals) sum += v;
        out(c, k) = sum / static_cast<double>(vals.size());
      }
    }
    return out;
  };
  op.backward = [lab, way](const std::vector<const Matrix*>& in, const Matrix&, const Matrix& up) {
    std::vector<double> counts(way, 0.0);
    for (std::size_t l : lab) counts[l] += 1.0;
    Matrix grad(in[0]->rows(), in[0]->cols());
    for (std::size_t s = 0; s < lab.size(); ++s)
      for (std::size_t k = 0; k < grad.cols(); ++k) grad(s, k) = up(lab[s], k) / counts[lab[s]];
    return std::vector<Matrix>{grad};
  };
  return g.custom({support}, std::move(op));
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t way) {
  Matrix m(labels.size(), way);
  for (std::size_t s = 0; s < labels.size(); ++s) m(s, labels[s]) = 1.0;
  return m;
}

Matrix row_softmax_value(const Matrix& x) {
  Matrix p = x;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v - m));
    for (double& v : row) v /= z;
  }
  return p;
}

void check_embedding_pair(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query) {
  if (support.rows() != labels.size()) {
    throw std::invalid_argument("head: " + std::to_string(support.rows()) + " support rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (query.rows() > 0 && support.cols() != query.cols()) {
    throw std::invalid_argument("head: support width " + std::to_string(support.cols()) + " != query width " +
                                std::to_string(query.cols()));
  }
}

// Rows of a first-layer weight, with `extra` zero rows inserted after the
// first `keep` rows of each of `blocks` consecutive blocks of `block` rows.
Matrix insert_zero_rows(const Matrix& w, std::size_t blocks, std::size_t block, std::size_t keep,
                        std::size_t extra) {
  Matrix out(w.rows() + blocks * extra, w.cols());
  std::size_t dst = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t r = 0; r < block; ++r) {
      if (r == keep) dst += extra;
      const auto src = w.row(b * block + r);
      std::copy(src.begin(), src.end(), out.row(dst++).begin());
    }
    if (keep == block) dst += extra;
  }
  return out;
}

}  // namespace

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kPrototypical: return "prototypical";
    case HeadKind::kMatching: return "matching";
    case HeadKind::kRelation: return "relation";
    case HeadKind::kGraph: return "graph";
    case HeadKind::kLinear: return "linear";
    case HeadKind::kEnsemble: return "ensemble";
  }
  return "unknown";
}

HeadKind head_from_string(const std::string& name) {
  for (HeadKind h : {HeadKind::kPrototypical, HeadKind::kMatching, HeadKind::kRelation, HeadKind::kGraph,
                     HeadKind::kLinear, HeadKind::kEnsemble}) {
    if (to_string(h) == name) return h;
  }
  throw std::invalid_argument("unknown head '" + name + "'");
}

std::size_t way_of(std::span<const std::size_t> labels) {
  if (labels.empty()) throw std::invalid_argument("head: empty support set");
  const std::size_t way = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<bool> seen(way, false);
  for (std::size_t l : labels) seen[l] = true;
  for (std::size_t c = 0; c < way; ++c) {
    if (!seen[c]) throw std::invalid_argument("head: class " + std::to_string(c) + " has no support samples");
  }
  return way;
}

NodeId prototypical_node(Graph& g, NodeId emb, std::span<const std::size_t> support_labels, std::size_t queries) {
  const std::size_t ns = support_labels.size();
  const std::size_t way = way_of(support_labels);
  const NodeId support = g.gather_rows(emb, range(0, ns));
  const NodeId query = g.gather_rows(emb, range(ns, ns + queries));
  return g.neg_sq_distance(query, class_means(g, support, support_labels, way));
}

NodeId matching_node(Graph& g, NodeId emb, std::span<const std::size_t> support_labels, std::size_t queries) {
  const std::size_t ns = support_labels.size();
  const std::size_t way = way_of(support_labels);
  const NodeId support = g.row_normalize(g.gather_rows(emb, range(0, ns)));
  const NodeId query = g.row_normalize(g.gather_rows(emb, range(ns, ns + queries)));
  const NodeId cos = g.matmul(query, g.transpose(support));
  return g.matmul(cos, g.input(one_hot(support_labels, way)));
}

NodeId relation_node(Graph& g, NodeId emb, std::span<const std::size_t> support_labels, std::size_t queries,
                     const MlpParams& relation, const MlpNodes& nodes) {
  const std::size_t ns = support_labels.size();
  const std::size_t way = way_of(support_labels);
  // Values of computed nodes only exist after forward(); widths of those are
  // checked by the ops themselves.
  const std::size_t width = g.tag(emb) == OpTag::kInput ? g.value(emb).cols() : relation.input_dim() / 2;
  if (relation.input_dim() != 2 * width || relation.output_dim() != 1) {
    throw std::invalid_argument("relation head: module maps " + std::to_string(relation.input_dim()) + " -> " +
                                std::to_string(relation.output_dim()) + ", need " + std::to_string(2 * width) +
                                " -> 1");
  }
  std::vector<std::size_t> qi, si;
  qi.reserve(queries * ns);
  si.reserve(queries * ns);
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::size_t s = 0; s < ns; ++s) {
      qi.push_back(ns + q);
      si.push_back(s);
    }
  }
  const NodeId pairs = g.concat_cols(g.gather_rows(emb, std::move(qi)), g.gather_rows(emb, std::move(si)));
  const NodeId rel = g.reshape(mlp_forward(g, relation, nodes, pairs), queries, ns);
  return g.matmul(rel, g.input(class_average(support_labels, way).transpose()));
}

HeadScores prototypical_logits(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query) {
  check_embedding_pair(support, labels, query);
  Graph g;
  const NodeId out = prototypical_node(g, g.input(stack_rows(support, query)), labels, query.rows());
  g.forward();
  return {g.value(out), HeadKind::kPrototypical};
}

HeadScores matching_logits(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query) {
  check_embedding_pair(support, labels, query);
  Graph g;
  const NodeId out = matching_node(g, g.input(stack_rows(support, query)), labels, query.rows());
  g.forward();
  return {g.value(out), HeadKind::kMatching};
}

HeadScores relation_scores(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query,
                           const MlpParams& relation) {
  check_embedding_pair(support, labels, query);
  Graph g;
  const MlpNodes nodes = bind_mlp(g, relation, relation.layers.size());
  const NodeId out = relation_node(g, g.input(stack_rows(support, query)), labels, query.rows(), relation, nodes);
  g.forward();
  return {g.value(out), HeadKind::kRelation};
}

MlpParams init_relation(std::size_t embedding_dim, std::size_t hidden, std::uint64_t seed) {
  const std::vector<std::size_t> dims{2 * embedding_dim, hidden, 1};
  const std::vector<Activation> acts{Activation::kRelu, Activation::kLinear};
  return init_mlp(dims, acts, seed);
}

std::vector<Matrix*> GnnParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& e : edge)
    for (Matrix* t : e.tensors()) out.push_back(t);
  for (auto& n : node)
    for (Matrix* t : n.tensors()) out.push_back(t);
  for (Matrix* t : readout.tensors()) out.push_back(t);
  return out;
}

GnnParams init_gnn(std::size_t embedding_dim, std::size_t way, const GnnConfig& cfg, std::uint64_t seed) {
  if (cfg.rounds == 0) throw std::invalid_argument("init_gnn: rounds must be >= 1");
  if (cfg.label_passthrough && cfg.node_width < way) {
    throw std::invalid_argument("init_gnn: label pass-through needs node width >= way");
  }
  GnnParams p;
  p.embedding_dim = embedding_dim;
  p.way = way;
  std::size_t f = embedding_dim + way;
  const std::vector<Activation> edge_acts{Activation::kRelu, Activation::kLinear};
  const std::vector<Activation> node_acts{Activation::kRelu};
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    const std::vector<std::size_t> edge_dims{f, cfg.edge_hidden, 1};
    p.edge.push_back(init_mlp(edge_dims, edge_acts, derive_seed(seed, "edge" + std::to_string(r))));
    const std::vector<std::size_t> node_dims{2 * f, cfg.node_width};
    p.node.push_back(init_mlp(node_dims, node_acts, derive_seed(seed, "node" + std::to_string(r))));
    if (cfg.label_passthrough) {
      // Label channels sit at [label_at, label_at + way) of F; route own and
      // aggregated labels into output columns [0, way).
      const std::size_t label_at = r == 0 ? embedding_dim : 0;
      Matrix& w = p.node.back().layers[0].weight;
      for (std::size_t c = 0; c < way; ++c) {
        for (std::size_t i = 0; i < w.rows(); ++i) w(i, c) = 0.0;
        w(label_at + c, c) = 1.0;
        w(f + label_at + c, c) = 1.0;
      }
    }
    f = cfg.node_width;
  }
  const std::vector<std::size_t> out_dims{f, way};
  const std::vector<Activation> out_acts{Activation::kLinear};
  p.readout = init_mlp(out_dims, out_acts, derive_seed(seed, "readout"));
  if (cfg.label_passthrough) {
    Matrix& w = p.readout.layers[0].weight;
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t c = 0; c < way; ++c) w(i, c) = i == c ? 1.0 : 0.0;
  }
  return p;
}

GnnParams widen_gnn_input(const GnnParams& p, std::size_t extra) {
  GnnParams out = p;
  if (extra == 0) return out;
  const std::size_t f0 = p.embedding_dim + p.way;
  Matrix& ew = out.edge.at(0).layers.at(0).weight;
  ew = insert_zero_rows(ew, 1, f0, p.embedding_dim, extra);
  Matrix& nw = out.node.at(0).layers.at(0).weight;
  nw = insert_zero_rows(nw, 2, f0, p.embedding_dim, extra);
  out.embedding_dim += extra;
  return out;
}

GnnNodes bind_gnn(Graph& g, const GnnParams& p) {
  GnnNodes n;
  for (const auto& e : p.edge) n.edge.push_back(bind_mlp(g, e));
  for (const auto& v : p.node) n.node.push_back(bind_mlp(g, v));
  n.readout = bind_mlp(g, p.readout);
  return n;
}

std::vector<Matrix> gnn_gradients(const Graph& g, const GnnNodes& n) {
  std::vector<Matrix> out;
  auto append = [&](const MlpNodes& m) {
    for (Matrix& t : mlp_gradients(g, m)) out.push_back(std::move(t));
  };
  for (const auto& e : n.edge) append(e);
  for (const auto& v : n.node) append(v);
  append(n.readout);
  return out;
}

GnnForward gnn_forward(Graph& g, const GnnParams& p, const GnnNodes& n, NodeId emb,
                       std::span<const std::size_t> labels) {
  const std::size_t count = labels.size();
  if (g.tag(emb) == OpTag::kInput) {
    const Matrix& ev = g.value(emb);
    if (ev.cols() != p.embedding_dim) {
      throw std::invalid_argument("graph head: embedding width " + std::to_string(ev.cols()) +
                                  ", module expects " + std::to_string(p.embedding_dim));
    }
    if (ev.rows() != count) {
      throw std::invalid_argument("graph head: " + std::to_string(ev.rows()) + " nodes but " +
                                  std::to_string(count) + " labels");
    }
  }
  Matrix slot(count, p.way);
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < count; ++i) {
    if (labels[i] == kUnlabeled) {
      unlabeled.push_back(i);
      for (std::size_t c = 0; c < p.way; ++c) slot(i, c) = 1.0 / static_cast<double>(p.way);
    } else {
      if (labels[i] >= p.way) {
        throw std::invalid_argument("graph head: label " + std::to_string(labels[i]) + " outside a " +
                                    std::to_string(p.way) + "-way module");
      }
      slot(i, labels[i]) = 1.0;
    }
  }
  GnnForward out;
  NodeId f = g.concat_cols(emb, g.input(std::move(slot)));
  for (std::size_t r = 0; r < p.edge.size(); ++r) {
    const NodeId scores = mlp_forward(g, p.edge[r], n.edge[r], g.pairwise_abs_diff(f));
    const NodeId adj = g.row_softmax(g.reshape(scores, count, count));
    out.adjacency.push_back(adj);
    f = mlp_forward(g, p.node[r], n.node[r], g.concat_cols(f, g.matmul(adj, f)));
  }
  out.logits = mlp_forward(g, p.readout, n.readout, g.gather_rows(f, std::move(unlabeled)));
  return out;
}

HeadScores graph_metric_scores(const Matrix& support, std::span<const std::size_t> labels, const Matrix& query,
                               const GnnParams& p) {
  check_embedding_pair(support, labels, query);
  std::vector<std::size_t> all(labels.begin(), labels.end());
  all.resize(labels.size() + query.rows(), kUnlabeled);
  Graph g;
  const GnnNodes n = bind_gnn(g, p);
  const NodeId emb = g.input(stack_rows(support, query));
  const GnnForward fw = gnn_forward(g, p, n, emb, all);
  g.forward();
  return {g.value(fw.logits), HeadKind::kGraph};
}

NodeId gnn_support_loss(Graph& g, const GnnParams& p, const GnnNodes& n, NodeId support_emb,
                        std::span<const std::size_t> labels, std::size_t step) {
  const std::size_t way = way_of(labels);
  std::vector<std::vector<std::size_t>> members(way);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  const std::size_t min_shot =
      std::min_element(members.begin(), members.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); })
          ->size();

  std::vector<std::size_t> node_labels(labels.begin(), labels.end());
  std::vector<std::size_t> targets;
  NodeId emb = support_emb;
  if (min_shot >= 2) {
    std::vector<bool> hidden(labels.size(), false);
    for (const auto& m : members) hidden[m[step % m.size()]] = true;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (hidden[i]) {
        targets.push_back(labels[i]);
        node_labels[i] = kUnlabeled;
      }
    }
  } else {
    std::vector<std::size_t> rows = range(0, labels.size());
    rows.insert(rows.end(), rows.begin(), rows.end());
    emb = g.gather_rows(support_emb, std::move(rows));
    node_labels.resize(2 * labels.size(), kUnlabeled);
    targets.assign(labels.begin(), labels.end());
  }
  const GnnForward fw = gnn_forward(g, p, n, emb, node_labels);
  return g.softmax_cross_entropy(fw.logits, std::move(targets));
}

std::string to_string(LinearInit i) {
  switch (i) {
    case LinearInit::kZero: return "zero";
    case LinearInit::kRandom: return "random";
    case LinearInit::kPrototype: return "prototype";
  }
  return "unknown";
}

LinearInit linear_init_from_string(const std::string& name) {
  for (LinearInit i : {LinearInit::kZero, LinearInit::kRandom, LinearInit::kPrototype}) {
    if (to_string(i) == name) return i;
  }
  throw std::invalid_argument("unknown linear head init '" + name + "'");
}

DenseLayer init_linear_head(const Matrix& emb, std::span<const std::size_t> labels, LinearInit init,
                            std::uint64_t seed) {
  if (emb.rows() != labels.size()) throw std::invalid_argument("linear head: rows and labels differ");
  const std::size_t way = way_of(labels);
  DenseLayer head;
  head.weight = Matrix(emb.cols(), way);
  head.bias = Matrix(1, way);
  head.activation = Activation::kLinear;
  if (init == LinearInit::kRandom) {
    Rng rng(seed);
    head.weight = rng.normal_matrix(emb.cols(), way, 0.01);
  } else if (init == LinearInit::kPrototype) {
    const Matrix protos = matmul(class_average(labels, way), emb);
    for (std::size_t c = 0; c < way; ++c) {
      double sq = 0.0;
      for (std::size_t k = 0; k < emb.cols(); ++k) {
        head.weight(k, c) = 2.0 * protos(c, k);
        sq += protos(c, k) * protos(c, k);
      }
      head.bias(0, c) = -sq;
    }
  }
  return head;
}

DenseLayer linear_head_fit(const Matrix& emb, std::span<const std::size_t> labels, std::size_t epochs, double lr,
                           LinearInit init, std::uint64_t seed) {
  DenseLayer head = init_linear_head(emb, labels, init, seed);
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    Matrix logits = matmul(emb, head.weight);
    for (std::size_t r = 0; r < logits.rows(); ++r)
      for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) += head.bias(0, c);
    Matrix delta = row_softmax_value(logits);
    for (std::size_t r = 0; r < labels.size(); ++r) delta(r, labels[r]) -= 1.0;
    delta *= inv_n;
    head.weight -= matmul_tn(emb, delta) * lr;
    for (std::size_t c = 0; c < delta.cols(); ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < delta.rows(); ++r) s += delta(r, c);
      head.bias(0, c) -= lr * s;
    }
  }
  return head;
}

HeadScores linear_head_logits(const DenseLayer& head, const Matrix& query) {
  if (query.cols() != head.in_dim()) {
    throw std::invalid_argument("linear head: expects width " + std::to_string(head.in_dim()) + ", got " +
                                query.shape_string());
  }
  Matrix logits = matmul(query, head.weight);
  for (std::size_t r = 0; r < logits.rows(); ++r)
    for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) += head.bias(0, c);
  return {std::move(logits), HeadKind::kLinear};
}

HeadScores ensemble_scores(const HeadScores& a, const HeadScores& b, double weight) {
  require_same_shape(a.logits, b.logits, "ensemble_scores");
  if (!(weight >= 0.0 && weight <= 1.0)) throw std::invalid_argument("ensemble_scores: weight must be in [0, 1]");
  return {row_softmax_value(a.logits) * weight + row_softmax_value(b.logits) * (1.0 - weight), HeadKind::kEnsemble};
}

std::vector<std::size_t> predictions(const Matrix& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double accuracy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (logits.rows() != labels.size()) throw std::invalid_argument("accuracy: rows and labels differ");
  if (labels.empty()) return 0.0;
  const std::vector<std::size_t> pred = predictions(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void to_json(nlohmann::json& j, const GnnParams& p) {
  j = {{"embedding_dim", p.embedding_dim}, {"way", p.way}, {"edge", p.edge}, {"node", p.node},
       {"readout", p.readout}};
}

void from_json(const nlohmann::json& j, GnnParams& p) {
  p.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  p.way = j.at("way").get<std::size_t>();
  p.edge = j.at("edge").get<std::vector<MlpParams>>();
  p.node = j.at("node").get<std::vector<MlpParams>>();
  p.readout = j.at("readout").get<MlpParams>();
  if (p.edge.size() != p.node.size() || p.edge.empty()) throw std::invalid_argument("checkpoint: malformed graph head");
}

}  // namespace dccdi
