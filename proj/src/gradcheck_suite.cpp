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

#include "dccdi/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <utility>

#include "dccdi/autodiff.hpp"
#include "dccdi/cca.hpp"
#include "dccdi/gradcheck.hpp"
#include "dccdi/heads.hpp"
#include "dccdi/mlp.hpp"
#include "dccdi/random.hpp"

namespace dccdi {
namespace {

constexpr double kTolerance = 1e-6;
constexpr double kCcaTolerance = 1e-5;
constexpr double kGraphHeadTolerance = 1e-5;

// Identity in the forward pass, upstream * 1.5 in the backward pass.
NodeId corrupt_node(Graph& g, NodeId x) {
  CustomOp op;
  op.name = "corrupt";
  op.forward = [](const std::vector<const Matrix*>& in) { return *in[0]; };
  op.backward = [](const std::vector<const Matrix*>&, const Matrix&, const Matrix& up) {
    Matrix d = up;
    d *= 1.5;
    return std::vector<Matrix>{d};
  };
  return g.custom({x}, op);
}

GraphBuilder maybe_corrupt(GraphBuilder b, bool corrupt) {
  if (!corrupt) return b;
  return [b = std::move(b)](std::uint64_t seed) {
    GradcheckGraph gg = b(seed);
    gg.loss = corrupt_node(gg.graph, gg.loss);
    return gg;
  };
}

// Scalar loss sum(y .* r) for a fixed random r, so every entry of an op's
// output contributes with a distinct weight.
NodeId weighted_sum(Graph& g, Rng& rng, NodeId y) {
  g.forward();  // for the shape of y
  const std::size_t n = g.value(y).rows() * g.value(y).cols();
  const NodeId r = g.input(rng.normal_matrix(n, 1));
  return g.sum(g.matmul(g.reshape(y, 1, n), r));
}

GraphBuilder unary(std::size_t rows, std::size_t cols, std::function<NodeId(Graph&, NodeId)> op) {
  return [=](std::uint64_t seed) {
    Rng rng(seed);
    GradcheckGraph gg;
    const NodeId x = gg.graph.parameter(rng.normal_matrix(rows, cols));
    gg.loss = weighted_sum(gg.graph, rng, op(gg.graph, x));
    gg.parameters = {{"x", x}};
    return gg;
  };
}

GraphBuilder binary(std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc,
                    std::function<NodeId(Graph&, NodeId, NodeId)> op) {
  return [=](std::uint64_t seed) {
    Rng rng(seed);
    GradcheckGraph gg;
    const NodeId a = gg.graph.parameter(rng.normal_matrix(ar, ac));
    const NodeId b = gg.graph.parameter(rng.normal_matrix(br, bc));
    gg.loss = weighted_sum(gg.graph, rng, op(gg.graph, a, b));
    gg.parameters = {{"a", a}, {"b", b}};
    return gg;
  };
}

struct ToyEpisode {
  Matrix embeddings;  // support rows, then query rows
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query_labels;
};

ToyEpisode toy_episode(Rng& rng, std::size_t way, std::size_t shot, std::size_t queries, std::size_t dim) {
  const Matrix centers = rng.normal_matrix(way, dim);
  ToyEpisode t;
  t.embeddings = Matrix(way * (shot + queries), dim);
  std::size_t row = 0;
  for (std::size_t c = 0; c < way; ++c)
    for (std::size_t i = 0; i < shot; ++i, ++row) {
      for (std::size_t k = 0; k < dim; ++k) t.embeddings(row, k) = centers(c, k) + rng.normal();
      t.support_labels.push_back(c);
    }
  for (std::size_t c = 0; c < way; ++c)
    for (std::size_t i = 0; i < queries; ++i, ++row) {
      for (std::size_t k = 0; k < dim; ++k) t.embeddings(row, k) = centers(c, k) + rng.normal();
      t.query_labels.push_back(c);
    }
  return t;
}

GraphBuilder metric_head(std::function<NodeId(Graph&, NodeId, std::span<const std::size_t>, std::size_t)> head) {
  return [head = std::move(head)](std::uint64_t seed) {
    Rng rng(seed);
    const ToyEpisode t = toy_episode(rng, 3, 2, 2, 4);
    GradcheckGraph gg;
    const NodeId emb = gg.graph.parameter(t.embeddings);
    const NodeId logits = head(gg.graph, emb, t.support_labels, t.query_labels.size());
    gg.loss = gg.graph.softmax_cross_entropy(logits, t.query_labels);
    gg.parameters = {{"emb", emb}};
    return gg;
  };
}

GradcheckGraph relation_graph(std::uint64_t seed) {
  Rng rng(seed);
  const ToyEpisode t = toy_episode(rng, 3, 2, 2, 3);
  MlpParams rel = init_relation(3, 5, seed);
  for (Matrix* m : rel.tensors()) *m += rng.normal_matrix(m->rows(), m->cols(), 0.1);
  GradcheckGraph gg;
  const NodeId emb = gg.graph.parameter(t.embeddings);
  const MlpNodes n = bind_mlp(gg.graph, rel);
  const NodeId logits = relation_node(gg.graph, emb, t.support_labels, t.query_labels.size(), rel, n);
  gg.loss = gg.graph.softmax_cross_entropy(logits, t.query_labels);
  gg.parameters = {{"emb", emb}, {"w0", n.weights[0]}, {"b0", n.biases[0]}, {"w1", n.weights[1]}};
  return gg;
}

GradcheckGraph graph_head_graph(std::uint64_t seed) {
  Rng rng(seed);
  const ToyEpisode t = toy_episode(rng, 3, 2, 1, 3);
  GnnConfig cfg;
  cfg.edge_hidden = 4;
  cfg.node_width = 5;
  const GnnParams p = init_gnn(3, 3, cfg, seed);
  GradcheckGraph gg;
  const GnnNodes n = bind_gnn(gg.graph, p);
  std::vector<std::size_t> labels = t.support_labels;
  labels.resize(t.embeddings.rows(), kUnlabeled);
  const NodeId emb = gg.graph.parameter(t.embeddings);
  const GnnForward fw = gnn_forward(gg.graph, p, n, emb, labels);
  gg.loss = gg.graph.softmax_cross_entropy(fw.logits, t.query_labels);
  gg.parameters = {{"emb", emb},
                   {"edge0", n.edge[0].weights[0]},
                   {"node0", n.node[0].weights[0]},
                   {"readout", n.readout.weights[0]}};
  return gg;
}

GradcheckGraph mlp_graph(std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::size_t> dims{4, 6, 5, 3};
  const std::vector<Activation> acts{Activation::kTanh, Activation::kRelu, Activation::kLinear};
  const MlpParams p = init_mlp(dims, acts, seed);
  GradcheckGraph gg;
  const MlpNodes n = bind_mlp(gg.graph, p);
  const NodeId x = gg.graph.input(rng.normal_matrix(7, 4));
  const NodeId logits = mlp_forward(gg.graph, p, n, x);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 7; ++i) labels.push_back(i % 3);
  gg.loss = cross_entropy(gg.graph, logits, labels);
  for (std::size_t l = 0; l < n.weights.size(); ++l) {
    gg.parameters.emplace_back("w" + std::to_string(l), n.weights[l]);
    gg.parameters.emplace_back("b" + std::to_string(l), n.biases[l]);
  }
  return gg;
}

// Two d-wide views sharing a d-dimensional signal with random loadings.
GraphBuilder correlation_instance(std::size_t n, std::size_t d, double r1) {
  return [=](std::uint64_t seed) {
    Rng rng(seed);
    const Matrix s = rng.normal_matrix(n, d);
    Matrix a = matmul(s, rng.normal_matrix(d, d));
    Matrix b = matmul(s, rng.normal_matrix(d, d));
    a += rng.normal_matrix(n, d, 0.7);
    b += rng.normal_matrix(n, d, 0.7);
    GradcheckGraph gg;
    const NodeId z1 = gg.graph.parameter(a);
    const NodeId z2 = gg.graph.parameter(b);
    gg.loss = correlation_loss(gg.graph, z1, z2, r1, d);
    gg.parameters = {{"z1", z1}, {"z2", z2}};
    return gg;
  };
}

struct Named {
  std::string module;
  std::string name;
  GraphBuilder builder;
  double tolerance;
};

std::vector<Named> single_checks() {
  using G = Graph;
  std::vector<Named> v;
  auto ad = [&](std::string name, GraphBuilder b) { v.push_back({"autodiff", std::move(name), std::move(b), kTolerance}); };
  ad("tanh", unary(3, 4, [](G& g, NodeId x) { return g.tanh(x); }));
  ad("relu", unary(3, 4, [](G& g, NodeId x) { return g.relu(x); }));
  ad("scale", unary(3, 4, [](G& g, NodeId x) { return g.scale(x, -2.5); }));
  ad("transpose", unary(3, 4, [](G& g, NodeId x) { return g.transpose(x); }));
  ad("reshape", unary(3, 4, [](G& g, NodeId x) { return g.reshape(x, 2, 6); }));
  ad("sum", unary(3, 4, [](G& g, NodeId x) { return g.sum(x); }));
  ad("row_softmax", unary(3, 4, [](G& g, NodeId x) { return g.row_softmax(x); }));
  ad("row_normalize", unary(3, 4, [](G& g, NodeId x) { return g.row_normalize(x); }));
  ad("pairwise_abs_diff", unary(3, 4, [](G& g, NodeId x) { return g.pairwise_abs_diff(x); }));
  ad("gather_rows", unary(4, 2, [](G& g, NodeId x) { return g.gather_rows(x, {3, 0, 3, 1}); }));
  ad("concat_cols", unary(3, 4, [](G& g, NodeId x) { return g.concat_cols(x, g.tanh(x)); }));
  ad("matmul", binary(3, 4, 4, 2, [](G& g, NodeId a, NodeId b) { return g.matmul(a, b); }));
  ad("add", binary(3, 4, 3, 4, [](G& g, NodeId a, NodeId b) { return g.add(a, b); }));
  ad("add_bias", binary(3, 4, 1, 4, [](G& g, NodeId a, NodeId b) { return g.add_bias(a, b); }));
  ad("neg_sq_distance", binary(3, 4, 2, 4, [](G& g, NodeId a, NodeId b) { return g.neg_sq_distance(a, b); }));
  ad("softmax_cross_entropy", binary(5, 3, 3, 3, [](G& g, NodeId a, NodeId b) {
       return g.softmax_cross_entropy(g.matmul(a, b), {0, 2, 1, 1, 0});
     }));
  v.push_back({"mlp", "mlp_cross_entropy", mlp_graph, kTolerance});
  v.push_back({"heads", "prototypical", metric_head(prototypical_node), kTolerance});
  v.push_back({"heads", "matching", metric_head(matching_node), kTolerance});
  v.push_back({"heads", "relation", relation_graph, kTolerance});
  v.push_back({"heads", "graph", graph_head_graph, kGraphHeadTolerance});
  return v;
}

SuiteCheck run_check(const Named& c, const std::vector<std::uint64_t>& seeds, bool corrupt) {
  const GraphBuilder b = maybe_corrupt(c.builder, corrupt);
  SuiteCheck out{c.module, c.name, seeds.size(), 0.0, c.tolerance, false};
  for (std::uint64_t s : seeds) out.max_rel_error = std::max(out.max_rel_error, gradcheck(b, s).max_rel_error());
  out.passed = out.max_rel_error < c.tolerance;
  return out;
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const SuiteCheck& c) { return c.passed; });
}

SuiteReport run_gradcheck_suite(const SuiteOptions& opt) {
  SuiteReport report;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 3; ++i) seeds.push_back(derive_seed(opt.seed, "gradcheck-" + std::to_string(i)));
  for (const Named& c : single_checks()) report.checks.push_back(run_check(c, seeds, opt.corrupt == c.name));

  // 100 correlation-loss instances cycling through the 12 (N, d, r1) cells.
  const std::size_t ns[] = {20, 50};
  const std::size_t ds[] = {2, 3, 5};
  const double r1s[] = {1e-4, 1e-3};
  for (std::size_t ni = 0; ni < 2; ++ni)
    for (std::size_t di = 0; di < 3; ++di)
      for (std::size_t ri = 0; ri < 2; ++ri) {
        const std::size_t cell = (ni * 3 + di) * 2 + ri;
        std::vector<std::uint64_t> cell_seeds;
        for (std::size_t i = cell; i < 100; i += 12) cell_seeds.push_back(derive_seed(opt.seed, "cca-" + std::to_string(i)));
        const std::string name = "correlation_loss_n" + std::to_string(ns[ni]) + "_d" + std::to_string(ds[di]) +
                                 (ri == 0 ? "_r1e-4" : "_r1e-3");
        const Named c{"cca", name, correlation_instance(ns[ni], ds[di], r1s[ri]), kCcaTolerance};
        report.checks.push_back(run_check(c, cell_seeds, opt.corrupt == name || opt.corrupt == "correlation_loss"));
      }
  return report;
}

void to_json(nlohmann::json& j, const SuiteCheck& c) {
  j = {{"module", c.module},       {"name", c.name},           {"instances", c.instances},
       {"max_rel_error", c.max_rel_error}, {"tolerance", c.tolerance}, {"passed", c.passed}};
}

void to_json(nlohmann::json& j, const SuiteReport& r) {
  j = {{"passed", r.passed()}, {"checks", r.checks}};
}

}  // namespace dccdi
