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

#include "dccdi/meta.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <stdexcept>
#include <thread>
#include <utility>

#include "dccdi/errors.hpp"
#include "dccdi/json_util.hpp"
#include "dccdi/linalg.hpp"
#include "dccdi/optimizer.hpp"
#include "dccdi/random.hpp"

namespace dccdi {
namespace {

constexpr const char* kCheckpointFormat = "dccdi-model";
constexpr int kCheckpointVersion = 1;

std::vector<Matrix*> layer_tensors(MlpParams& p, std::size_t first) {
  std::vector<Matrix*> out;
  for (std::size_t i = first; i < p.layers.size(); ++i) {
    out.push_back(&p.layers[i].weight);
    out.push_back(&p.layers[i].bias);
  }
  return out;
}

void append(std::vector<Matrix>& to, std::vector<Matrix> from) {
  for (Matrix& m : from) to.push_back(std::move(m));
}

void append(std::vector<Matrix*>& to, const std::vector<Matrix*>& from) { to.insert(to.end(), from.begin(), from.end()); }

void check_loss(const char* loop, std::size_t index, double loss) {
  if (!std::isfinite(loss)) throw TrainingError(loop, index, loss);
}

void check_frozen(const MlpParams& before, const MlpParams& after, std::size_t prefix, const char* where) {
  for (std::size_t i = 0; i < prefix; ++i) {
    if (!(before.layers[i] == after.layers[i])) {
      throw std::logic_error(std::string(where) + ": frozen layer " + std::to_string(i) + " changed");
    }
  }
}

void check_shape(const EpisodeShape& s, const char* where) {
  if (s.way == 0 || s.shot == 0 || s.query == 0) {
    throw std::invalid_argument(std::string(where) + ": way, shot and query must be positive");
  }
}

std::vector<std::size_t> stacked_labels(std::span<const std::size_t> support, std::size_t queries) {
  std::vector<std::size_t> all(support.begin(), support.end());
  all.resize(support.size() + queries, kUnlabeled);
  return all;
}

// Head over a stacked [support; query] embedding node, for the heads that
// take no parameters of their own.
NodeId metric_node(Graph& g, HeadKind head, NodeId emb, std::span<const std::size_t> labels, std::size_t queries) {
  switch (head) {
    case HeadKind::kPrototypical:
      return prototypical_node(g, emb, labels, queries);
    case HeadKind::kMatching:
      return matching_node(g, emb, labels, queries);
    default:
      throw std::invalid_argument("metric head " + to_string(head) + " is not parameter-free");
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string model_digest(const Model& m) { return hex(fnv1a(model_to_json(m).dump())); }

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// independent, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

GnnConfig gnn_config_of(const GnnParams& p) {
  GnnConfig c;
  c.rounds = p.edge.size();
  c.edge_hidden = p.edge.at(0).layers.at(0).out_dim();
  c.node_width = p.node.at(0).output_dim();
  return c;
}

double mean_column_variance(const Matrix& x) {
  if (x.rows() < 2 || x.cols() == 0) return 0.0;
  const Matrix c = center_rows(x);
  return sum(hadamard(c, c)) / static_cast<double>((x.rows() - 1) * x.cols());
}

nlohmann::json shape_json(const EpisodeShape& s) { return {{"way", s.way}, {"shot", s.shot}, {"query", s.query}}; }

}  // namespace

Model init_model(const ModelConfig& cfg, std::size_t visual_dim, std::size_t way, std::size_t source_classes,
                 std::uint64_t seed) {
  if (visual_dim == 0 || cfg.trunk_output == 0) throw std::invalid_argument("init_model: zero width");
  if (way < 1 || source_classes < 1) throw std::invalid_argument("init_model: need at least one class");
  std::vector<std::size_t> dims{visual_dim};
  dims.insert(dims.end(), cfg.trunk_hidden.begin(), cfg.trunk_hidden.end());
  dims.push_back(cfg.trunk_output);
  const std::vector<Activation> acts(dims.size() - 1, cfg.trunk_activation);

  Model m;
  m.trunk = init_mlp(dims, acts, derive_seed(seed, "trunk"));
  const std::size_t layers = m.trunk.layers.size();
  m.frozen_prefix = cfg.frozen_prefix.value_or(layers - 1);
  if (m.frozen_prefix > layers) {
    throw std::invalid_argument("init_model: frozen prefix " + std::to_string(m.frozen_prefix) + " exceeds " +
                                std::to_string(layers) + " trunk layers");
  }
  const std::vector<std::size_t> cdims{cfg.trunk_output, source_classes};
  const std::vector<Activation> cacts{Activation::kLinear};
  m.classifier = init_mlp(cdims, cacts, derive_seed(seed, "classifier")).layers.front();
  m.gnn = init_gnn(cfg.trunk_output, way, cfg.gnn, derive_seed(seed, "gnn"));
  m.relation = init_relation(cfg.trunk_output, cfg.relation_hidden, derive_seed(seed, "relation"));
  return m;
}

nlohmann::json model_to_json(const Model& m) {
  MlpParams classifier;
  classifier.layers.push_back(m.classifier);
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"frozen_prefix", m.frozen_prefix},
          {"trunk", m.trunk},           {"classifier", classifier},       {"gnn", m.gnn},
          {"relation", m.relation}};
}

Model model_from_json(const nlohmann::json& j) {
  require_keys(j, {"format", "version", "frozen_prefix", "trunk", "classifier", "gnn", "relation"}, "checkpoint");
  if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported format or version");
  }
  Model m;
  try {
    m.frozen_prefix = j.at("frozen_prefix").get<std::size_t>();
    m.trunk = j.at("trunk").get<MlpParams>();
    const auto classifier = j.at("classifier").get<MlpParams>();
    if (classifier.layers.size() != 1) throw ConfigError("checkpoint: classifier must have one layer");
    m.classifier = classifier.layers.front();
    m.gnn = j.at("gnn").get<GnnParams>();
    m.relation = j.at("relation").get<MlpParams>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  if (m.trunk.layers.empty() || m.frozen_prefix > m.trunk.layers.size()) {
    throw ConfigError("checkpoint: frozen prefix exceeds trunk depth");
  }
  return m;
}

void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << model_to_json(m).dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return model_from_json(j);
}

void stage1_train(Model& model, const Dataset& source, const Stage1Options& opt, std::vector<TraceRow>* trace) {
  check_shape(opt.shape, "stage1_train");
  const TaskSampler sampler(source);
  const std::vector<int> classes = source.classes();
  if (classes.size() != model.classifier.out_dim()) {
    throw std::invalid_argument("stage1_train: classifier has " + std::to_string(model.classifier.out_dim()) +
                                " outputs for " + std::to_string(classes.size()) + " source classes");
  }
  std::map<int, std::size_t> global;
  for (std::size_t i = 0; i < classes.size(); ++i) global[classes[i]] = i;

  const MlpParams before = model.trunk;
  OptimizerState sgd = make_sgd(opt.lr);
  for (std::size_t e = 0; e < opt.episodes; ++e) {
    const Episode ep = sampler.sample(opt.shape.way, opt.shape.shot, opt.shape.query, episode_seed(opt.seed, e));
    std::vector<std::size_t> labels;
    for (const auto& s : ep.support) labels.push_back(global.at(ep.classes[static_cast<std::size_t>(s.label)]));

    Graph g;
    const MlpNodes tn = bind_mlp(g, model.trunk, model.frozen_prefix);
    const NodeId emb = mlp_forward(g, model.trunk, tn, g.input(ep.support_visual()));
    const NodeId w = g.parameter(model.classifier.weight);
    const NodeId b = g.parameter(model.classifier.bias);
    const NodeId loss = cross_entropy(g, g.add_bias(g.matmul(emb, w), b), labels);
    const double value = g.forward();
    check_loss("stage1_train", e, value);
    g.backward(loss);

    std::vector<Matrix> grads = mlp_gradients(g, tn);
    grads.push_back(g.grad(w));
    grads.push_back(g.grad(b));
    std::vector<Matrix*> params = layer_tensors(model.trunk, model.frozen_prefix);
    params.push_back(&model.classifier.weight);
    params.push_back(&model.classifier.bias);
    optimizer_step(sgd, params, grads);
    if (trace) trace->push_back({e, "stage1", value, std::nullopt});
  }
  check_frozen(before, model.trunk, model.frozen_prefix, "stage1_train");
}

void stage2_train(Model& model, const Dataset& source, const Stage2Options& opt, std::vector<TraceRow>* trace,
                  const QueryGraphObserver& observer) {
  check_shape(opt.shape, "stage2_train");
  const bool graph_head = opt.head == HeadKind::kGraph;
  if (!graph_head && opt.head != HeadKind::kPrototypical && opt.head != HeadKind::kMatching) {
    throw std::invalid_argument("stage2_train: unsupported head " + to_string(opt.head));
  }
  if (graph_head && model.gnn.way != opt.shape.way) {
    throw std::invalid_argument("stage2_train: graph module is " + std::to_string(model.gnn.way) + "-way, episodes are " +
                                std::to_string(opt.shape.way) + "-way");
  }
  const TaskSampler sampler(source);
  OptimizerState outer =
      opt.outer_optimizer == OptimizerKind::kSgd ? make_sgd(opt.outer_lr) : make_rmsprop(opt.outer_lr);
  OptimizerState inner = make_sgd(opt.inner_lr);

  // Support loss of (trunk, gnn); fills gradients when `grads` is given.
  auto support_loss = [&](const MlpParams& trunk, const GnnParams& gnn, const Matrix& sv,
                          const std::vector<std::size_t>& ys, std::size_t step, std::vector<Matrix>* grads) {
    Graph g;
    const MlpNodes tn = bind_mlp(g, trunk);
    const NodeId emb = mlp_forward(g, trunk, tn, g.input(sv));
    NodeId loss;
    GnnNodes gn;
    if (graph_head) {
      gn = bind_gnn(g, gnn);
      loss = gnn_support_loss(g, gnn, gn, emb, ys, step);
    } else {
      // Every support row is classified against prototypes of the full set.
      std::vector<std::size_t> twice(2 * ys.size());
      for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = i % ys.size();
      const NodeId logits = metric_node(g, opt.head, g.gather_rows(emb, twice), ys, ys.size());
      loss = cross_entropy(g, logits, ys);
    }
    const double value = g.forward();
    if (grads && std::isfinite(value)) {
      g.backward(loss);
      *grads = mlp_gradients(g, tn);
      if (graph_head) append(*grads, gnn_gradients(g, gn));
    }
    return value;
  };

  for (std::size_t e = 0; e < opt.episodes; ++e) {
    const Episode ep = sampler.sample(opt.shape.way, opt.shape.shot, opt.shape.query, episode_seed(opt.seed, e));
    const Matrix sv = ep.support_visual();
    const Matrix qv = ep.query_visual();
    const std::vector<std::size_t> ys = ep.support_labels();
    const std::vector<std::size_t> yq = ep.query_labels();

    MlpParams fast = model.trunk;
    GnnParams fast_gnn = model.gnn;
    double first_support = 0.0;
    if (opt.inner_steps == 0) first_support = support_loss(fast, fast_gnn, sv, ys, 0, nullptr);
    for (std::size_t s = 0; s < opt.inner_steps; ++s) {
      std::vector<Matrix> grads;
      const double value = support_loss(fast, fast_gnn, sv, ys, s, &grads);
      check_loss("stage2_train", e, value);
      if (s == 0) first_support = value;
      std::vector<Matrix*> params = fast.tensors();
      if (graph_head) append(params, fast_gnn.tensors());
      optimizer_step(inner, params, grads);
    }
    check_loss("stage2_train", e, first_support);

    // Query loss at the adapted point. The adapted tensors are fresh leaves
    // of this graph, which is what makes the update first order.
    Graph g;
    const MlpNodes tn = bind_mlp(g, fast);
    const NodeId emb = mlp_forward(g, fast, tn, g.input(stack_rows(sv, qv)));
    GnnNodes gn;
    NodeId logits;
    if (graph_head) {
      gn = bind_gnn(g, fast_gnn);
      logits = gnn_forward(g, fast_gnn, gn, emb, stacked_labels(ys, qv.rows())).logits;
    } else {
      logits = metric_node(g, opt.head, emb, ys, qv.rows());
    }
    const NodeId loss = cross_entropy(g, logits, yq);
    const double query_loss = g.forward();
    check_loss("stage2_train", e, query_loss);
    if (observer) {
      std::vector<NodeId> leaves;
      auto collect = [&](const MlpNodes& n) {
        for (std::size_t i = 0; i < n.weights.size(); ++i) {
          leaves.push_back(n.weights[i]);
          leaves.push_back(n.biases[i]);
        }
      };
      collect(tn);
      if (graph_head) {
        for (const auto& n : gn.edge) collect(n);
        for (const auto& n : gn.node) collect(n);
        collect(gn.readout);
      }
      observer(g, leaves);
    }
    g.backward(loss);
    std::vector<Matrix> grads = mlp_gradients(g, tn);
    std::vector<Matrix*> params = model.trunk.tensors();
    if (graph_head) {
      append(grads, gnn_gradients(g, gn));
      append(params, model.gnn.tensors());
    }
    optimizer_step(outer, params, grads);
    if (trace) trace->push_back({e, "stage2", first_support, query_loss});
  }
}

void train_relation(Model& model, const Dataset& source, const RelationOptions& opt, std::vector<TraceRow>* trace) {
  check_shape(opt.shape, "train_relation");
  const TaskSampler sampler(source);
  OptimizerState rms = make_rmsprop(opt.lr);
  for (std::size_t e = 0; e < opt.episodes; ++e) {
    const Episode ep = sampler.sample(opt.shape.way, opt.shape.shot, opt.shape.query, episode_seed(opt.seed, e));
    const std::vector<std::size_t> ys = ep.support_labels();
    const Matrix emb = mlp_apply(model.trunk, stack_rows(ep.support_visual(), ep.query_visual()));
    Graph g;
    const MlpNodes rn = bind_mlp(g, model.relation);
    const NodeId scores = relation_node(g, g.input(emb), ys, ep.query.size(), model.relation, rn);
    const NodeId loss = cross_entropy(g, scores, ep.query_labels());
    const double value = g.forward();
    check_loss("train_relation", e, value);
    g.backward(loss);
    const std::vector<Matrix> grads = mlp_gradients(g, rn);
    optimizer_step(rms, model.relation.tensors(), grads);
    if (trace) trace->push_back({e, "relation", std::nan(""), value});
  }
}

EvalReport summarize(std::string method, std::vector<double> accuracies, const EvalOptions& opt,
                     const nlohmann::json& settings) {
  EvalReport r;
  r.method = std::move(method);
  r.seed = opt.seed;
  r.shape = opt.shape;
  const double n = static_cast<double>(accuracies.size());
  if (!accuracies.empty()) {
    double s = 0.0;
    for (double a : accuracies) s += a;
    r.mean = s / n;
  }
  if (accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  r.accuracies = std::move(accuracies);
  r.fingerprint = hex(fnv1a(settings.dump()));
  return r;
}

EvalReport evaluate_baseline(const Model& model, const Dataset& target, HeadKind head, const EvalOptions& opt) {
  check_shape(opt.shape, "evaluate_baseline");
  if (head != HeadKind::kPrototypical && head != HeadKind::kMatching && head != HeadKind::kRelation &&
      head != HeadKind::kGraph) {
    throw std::invalid_argument("evaluate_baseline: unsupported head " + to_string(head));
  }
  if (head == HeadKind::kGraph && model.gnn.way != opt.shape.way) {
    throw std::invalid_argument("evaluate_baseline: graph module way does not match episodes");
  }
  const TaskSampler sampler(target);
  std::vector<double> acc(opt.episodes, 0.0);
  parallel_for(opt.episodes, opt.threads, [&](std::size_t i) {
    const Episode ep = sampler.sample(opt.shape.way, opt.shape.shot, opt.shape.query, episode_seed(opt.seed, i));
    const std::vector<std::size_t> ys = ep.support_labels();
    const Matrix s = mlp_apply(model.trunk, ep.support_visual());
    const Matrix q = mlp_apply(model.trunk, ep.query_visual());
    HeadScores scores;
    switch (head) {
      case HeadKind::kPrototypical:
        scores = prototypical_logits(s, ys, q);
        break;
      case HeadKind::kMatching:
        scores = matching_logits(s, ys, q);
        break;
      case HeadKind::kRelation:
        scores = relation_scores(s, ys, q, model.relation);
        break;
      default:
        scores = graph_metric_scores(s, ys, q, model.gnn);
        break;
    }
    acc[i] = accuracy(scores.logits, ep.query_labels());
  });
  const nlohmann::json settings = {{"method", to_string(head)}, {"shape", shape_json(opt.shape)},
                                   {"episodes", opt.episodes},  {"seed", opt.seed},
                                   {"model", model_digest(model)}};
  return summarize(to_string(head), std::move(acc), opt, settings);
}

std::string to_string(FuseMode f) {
  return f == FuseMode::kConcatTextProj ? "concat-text-proj" : "concat-both-proj";
}

FuseMode fuse_mode_from_string(const std::string& name) {
  if (name == "concat-text-proj") return FuseMode::kConcatTextProj;
  if (name == "concat-both-proj") return FuseMode::kConcatBothProj;
  throw std::invalid_argument("unknown fuse mode '" + name + "'");
}

std::string to_string(TextBalance b) {
  switch (b) {
    case TextBalance::kNone: return "none";
    case TextBalance::kPerDim: return "per-dim";
    case TextBalance::kTotal: return "total";
  }
  return "unknown";
}

TextBalance text_balance_from_string(const std::string& name) {
  for (TextBalance b : {TextBalance::kNone, TextBalance::kPerDim, TextBalance::kTotal})
    if (to_string(b) == name) return b;
  throw std::invalid_argument("unknown text balance '" + name + "'");
}

DccdiEpisode run_dccdi_episode(const Model& model, const Episode& ep, const MetaTestOptions& opt,
                               std::uint64_t seed) {
  const std::size_t n_support = ep.support.size();
  if (n_support < 2) {
    throw std::invalid_argument("meta_test_dccdi: need at least 2 support samples, got " + std::to_string(n_support));
  }
  const Matrix sv = ep.support_visual();
  const Matrix qv = ep.query_visual();
  const std::vector<std::size_t> ys = ep.support_labels();
  const std::size_t way = ep.way();
  const std::size_t l = model.frozen_prefix;

  DccdiEpisode out;
  const bool both = opt.use_text && opt.fuse_mode == FuseMode::kConcatBothProj;

  // The frozen prefix is applied once; only the tail layers are adapted.
  MlpParams prefix, tail;
  prefix.layers.assign(model.trunk.layers.begin(), model.trunk.layers.begin() + static_cast<long>(l));
  tail.layers.assign(model.trunk.layers.begin() + static_cast<long>(l), model.trunk.layers.end());
  auto apply_prefix = [&](const Matrix& x) { return prefix.layers.empty() ? x : mlp_apply(prefix, x); };
  auto apply_tail = [&](const Matrix& x) { return tail.layers.empty() ? x : mlp_apply(tail, x); };
  const Matrix sp = apply_prefix(sv);
  const Matrix qp = apply_prefix(qv);

  // Fresh correlation block on the support pairs; only its projections are
  // used afterwards and they stay fixed while the heads adapt.
  DccaBlock block;
  Matrix text_support, text_query;
  if (opt.use_text) {
    DccaArchitecture arch;
    arch.visual_in = model.trunk.output_dim();
    arch.text_in = ep.support.front().text.size();
    arch.hidden = opt.cca_hidden;
    arch.hidden_activation = opt.cca_activation;
    arch.output_dim = opt.output_dim;
    arch.r1 = opt.r1;
    arch.top_k = opt.top_k;
    DccaTrainOptions topt;
    topt.steps = opt.cca_steps;
    topt.lr = opt.cca_lr;
    DccaTrainResult res = train_dcca(init_dcca_block(arch, derive_seed(seed, "dcca")), apply_tail(sp),
                                     ep.support_text(), topt);
    block = std::move(res.block);
    out.cca_trace = std::move(res.trace);
    out.undersampled = res.undersampled;
    double scale = opt.text_scale;
    text_support = mlp_apply(block.h, ep.support_text());
    if (opt.text_balance != TextBalance::kNone) {
      const Matrix vis = apply_tail(sp);
      double ratio = mean_column_variance(vis) / mean_column_variance(text_support);
      if (opt.text_balance == TextBalance::kTotal)
        ratio *= static_cast<double>(vis.cols()) / static_cast<double>(text_support.cols());
      if (std::isfinite(ratio) && ratio > 0.0) scale *= std::sqrt(ratio);
    }
    text_support *= scale;
    text_query = mlp_apply(block.h, ep.query_text()) * scale;
  }

  auto fuse_value = [&](const Matrix& after_prefix, const Matrix& text) {
    Matrix v = apply_tail(after_prefix);
    if (both) v = mlp_apply(block.g, v);
    return opt.use_text ? concat_cols(v, text) : v;
  };

  const std::size_t visual_width = both ? block.g.output_dim() : model.trunk.output_dim();
  const std::size_t text_width = opt.use_text ? text_support.cols() : 0;
  GnnParams gnn;
  if (!both && model.gnn.way == way && model.gnn.embedding_dim == visual_width) {
    gnn = widen_gnn_input(model.gnn, text_width);
  } else {
    gnn = init_gnn(visual_width + text_width, way, gnn_config_of(model.gnn), derive_seed(seed, "gnn"));
  }
  DenseLayer head = init_linear_head(fuse_value(sp, text_support), ys, opt.linear_init, derive_seed(seed, "linear"));

  OptimizerState sgd = make_sgd(opt.adapt_lr);
  for (std::size_t s = 0; s < opt.adapt_steps; ++s) {
    Graph g;
    const MlpNodes tn = bind_mlp(g, tail);
    NodeId fused = mlp_forward(g, tail, tn, g.input(sp));
    if (both) fused = mlp_forward(g, block.g, bind_mlp(g, block.g, block.g.layers.size()), fused);
    if (opt.use_text) fused = g.concat_cols(fused, g.input(text_support));
    const NodeId w = g.parameter(head.weight);
    const NodeId b = g.parameter(head.bias);
    const NodeId linear_loss = cross_entropy(g, g.add_bias(g.matmul(fused, w), b), ys);
    const GnnNodes gn = bind_gnn(g, gnn);
    const NodeId graph_loss = gnn_support_loss(g, gnn, gn, fused, ys, s);
    const NodeId loss = g.add(linear_loss, graph_loss);
    const double value = g.forward();
    check_loss("meta_test_dccdi", s, value);
    g.backward(loss);

    std::vector<Matrix> grads = mlp_gradients(g, tn);
    grads.push_back(g.grad(w));
    grads.push_back(g.grad(b));
    append(grads, gnn_gradients(g, gn));
    std::vector<Matrix*> params = tail.tensors();
    params.push_back(&head.weight);
    params.push_back(&head.bias);
    append(params, gnn.tensors());
    optimizer_step(sgd, params, grads);
  }

  const Matrix fs = fuse_value(sp, text_support);
  const Matrix fq = fuse_value(qp, text_query);
  const HeadScores scores =
      ensemble_scores(linear_head_logits(head, fq), graph_metric_scores(fs, ys, fq, gnn), opt.ensemble_weight);
  MlpParams trunk = std::move(prefix);
  trunk.layers.insert(trunk.layers.end(), tail.layers.begin(), tail.layers.end());
  check_frozen(model.trunk, trunk, l, "meta_test_dccdi");
  out.accuracy = accuracy(scores.logits, ep.query_labels());
  out.adapted_trunk = std::move(trunk);
  return out;
}

EvalReport meta_test_dccdi(const Model& model, const Dataset& target, const MetaTestOptions& opt) {
  const EvalOptions& ev = opt.eval;
  check_shape(ev.shape, "meta_test_dccdi");
  if (ev.shape.way * ev.shape.shot < 2) {
    throw std::invalid_argument("meta_test_dccdi: way x shot must be at least 2");
  }
  const TaskSampler sampler(target);
  std::vector<double> acc(ev.episodes, 0.0);
  parallel_for(ev.episodes, ev.threads, [&](std::size_t i) {
    const std::uint64_t s = episode_seed(ev.seed, i);
    const Episode ep = sampler.sample(ev.shape.way, ev.shape.shot, ev.shape.query, s);
    acc[i] = run_dccdi_episode(model, ep, opt, derive_seed(s, "dccdi")).accuracy;
  });
  const std::string method = opt.use_text ? "dccdi" : "dccdi-no-text";
  const nlohmann::json settings = {{"method", method},
                                   {"shape", shape_json(ev.shape)},
                                   {"episodes", ev.episodes},
                                   {"seed", ev.seed},
                                   {"cca_steps", opt.cca_steps},
                                   {"cca_lr", opt.cca_lr},
                                   {"cca_hidden", opt.cca_hidden},
                                   {"cca_activation", to_string(opt.cca_activation)},
                                   {"output_dim", opt.output_dim},
                                   {"r1", opt.r1},
                                   {"top_k", opt.top_k},
                                   {"adapt_steps", opt.adapt_steps},
                                   {"adapt_lr", opt.adapt_lr},
                                   {"fuse_mode", to_string(opt.fuse_mode)},
                                   {"text_balance", to_string(opt.text_balance)},
                                   {"text_scale", opt.text_scale},
                                   {"ensemble_weight", opt.ensemble_weight},
                                   {"linear_init", to_string(opt.linear_init)},
                                   {"model", model_digest(model)}};
  return summarize(method, std::move(acc), ev, settings);
}

void to_json(nlohmann::json& j, const TraceRow& r) {
  j = {{"episode", r.episode}, {"stage", r.stage}};
  j["support_loss"] = std::isfinite(r.support_loss) ? nlohmann::json(r.support_loss) : nlohmann::json();
  j["query_loss"] = r.query_loss ? nlohmann::json(*r.query_loss) : nlohmann::json();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"method", r.method},         {"way", r.shape.way},   {"shot", r.shape.shot},
       {"query", r.shape.query},     {"episodes", r.accuracies.size()},
       {"mean_acc", r.mean},         {"ci95", r.ci95},       {"seed", r.seed},
       {"fingerprint", r.fingerprint}, {"accuracies", r.accuracies}};
}

}  // namespace dccdi
