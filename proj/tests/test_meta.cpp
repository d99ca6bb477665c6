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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <set>
#include <string>

#include "dccdi/errors.hpp"
#include "dccdi/meta.hpp"
#include "dccdi/synth.hpp"
#include "doctest.h"

using namespace dccdi;

namespace {

SynthConfig tiny_config(std::uint64_t seed, double separation = 1.5) {
  SynthConfig c;
  c.num_classes = 12;
  c.samples_per_class = 30;
  c.latent_dim = 4;
  c.visual_dim = 12;
  c.text_dim = 10;
  c.class_separation = separation;
  c.seed = seed;
  return c;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.trunk_hidden = {16};
  m.trunk_output = 8;
  m.gnn.edge_hidden = 4;
  m.gnn.node_width = 8;
  m.relation_hidden = 8;
  return m;
}

Model tiny_init(const Dataset& ds, std::uint64_t seed = 1) {
  return init_model(tiny_model(), ds.visual_dim(), 5, ds.classes().size(), seed);
}

MetaTestOptions tiny_meta(std::size_t episodes) {
  MetaTestOptions o;
  o.eval.episodes = episodes;
  o.eval.shape = {5, 5, 5};
  o.cca_hidden = {8};
  o.output_dim = 3;
  o.adapt_steps = 5;
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Brute-force nearest class mean, written independently of the head code.
double nearest_mean_accuracy(const Matrix& s, const std::vector<std::size_t>& ys, const Matrix& q,
                             const std::vector<std::size_t>& yq, std::size_t way) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < way; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < q.cols(); ++k) {
        double m = 0.0, n = 0.0;
        for (std::size_t j = 0; j < s.rows(); ++j) {
          if (ys[j] != c) continue;
          m += s(j, k);
          n += 1.0;
        }
        d += (q(i, k) - m / n) * (q(i, k) - m / n);
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == yq[i];
  }
  return static_cast<double>(correct) / static_cast<double>(q.rows());
}

}  // namespace

TEST_CASE("frozen prefix partitions the trunk") {
  const Dataset ds = gen_synth(tiny_config(1)).dataset;
  const Model m = tiny_init(ds);
  CHECK(m.trunk.layers.size() == 2);
  CHECK(m.frozen_prefix == 1);
  CHECK(m.frozen_prefix + m.trainable_layers() == m.trunk.layers.size());
  ModelConfig cfg = tiny_model();
  cfg.frozen_prefix = 3;
  CHECK_THROWS_AS(init_model(cfg, 12, 5, 12, 1), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip exactly") {
  const Dataset ds = gen_synth(tiny_config(2)).dataset;
  Model m = tiny_init(ds, 7);
  Stage1Options s1;
  s1.episodes = 5;
  stage1_train(m, ds, s1, nullptr);
  const std::string path = (std::filesystem::temp_directory_path() / "dccdi_model.json").string();
  save_model(m, path);
  const Model back = load_model(path);
  CHECK(back == m);
  CHECK(model_to_json(back).dump() == model_to_json(m).dump());
  std::remove(path.c_str());

  nlohmann::json j = model_to_json(m);
  j["extra"] = 1;
  CHECK_THROWS_AS(model_from_json(j), std::runtime_error);
}

TEST_CASE("stage 1 with everything frozen leaves the trunk bit-identical") {
  const Dataset ds = gen_synth(tiny_config(3)).dataset;
  ModelConfig cfg = tiny_model();
  cfg.frozen_prefix = 2;
  Model m = init_model(cfg, 12, 5, 12, 3);
  const MlpParams before = m.trunk;
  Stage1Options s1;
  s1.episodes = 10;
  s1.lr = 0.1;
  stage1_train(m, ds, s1, nullptr);
  CHECK(m.trunk == before);
}

TEST_CASE("stage 1 with zero learning rate changes nothing") {
  const Dataset ds = gen_synth(tiny_config(4)).dataset;
  Model m = tiny_init(ds, 4);
  const Model before = m;
  Stage1Options s1;
  s1.episodes = 10;
  s1.lr = 0.0;
  stage1_train(m, ds, s1, nullptr);
  CHECK(m == before);
}

TEST_CASE("stage 1 trains the tail and keeps the prefix") {
  const Dataset ds = gen_synth(tiny_config(5)).dataset;
  Model m = tiny_init(ds, 5);
  const Model before = m;
  std::vector<TraceRow> trace;
  Stage1Options s1;
  s1.episodes = 10;
  stage1_train(m, ds, s1, &trace);
  CHECK(m.trunk.layers[0] == before.trunk.layers[0]);
  CHECK_FALSE(m.trunk.layers[1] == before.trunk.layers[1]);
  CHECK_FALSE(m.classifier == before.classifier);
  REQUIRE(trace.size() == 10);
  CHECK(trace[3].episode == 3);
  CHECK(trace[3].stage == "stage1");
  CHECK_FALSE(trace[3].query_loss.has_value());
}

TEST_CASE("stage 1 support loss falls on separable data") {
  std::vector<double> first, last;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset ds = gen_synth(tiny_config(seed, 3.0)).dataset;
    Model m = tiny_init(ds, seed);
    std::vector<TraceRow> trace;
    Stage1Options s1;
    s1.episodes = 200;
    s1.lr = 0.05;
    s1.seed = seed;
    stage1_train(m, ds, s1, &trace);
    first.push_back(trace.front().support_loss);
    last.push_back(trace.back().support_loss);
  }
  CHECK(median(last) < median(first));
}

TEST_CASE("stage 2 with no inner steps and zero outer rate changes nothing") {
  const Dataset ds = gen_synth(tiny_config(6)).dataset;
  for (HeadKind head : {HeadKind::kGraph, HeadKind::kPrototypical}) {
    Model m = tiny_init(ds, 6);
    const Model before = m;
    Stage2Options s2;
    s2.episodes = 4;
    s2.inner_steps = 0;
    s2.outer_lr = 0.0;
    s2.head = head;
    s2.shape = {5, 2, 3};
    std::vector<TraceRow> trace;
    stage2_train(m, ds, s2, &trace);
    CHECK(m == before);
    REQUIRE(trace.size() == 4);
    CHECK(trace[0].query_loss.has_value());
  }
}

TEST_CASE("stage 2 query gradient flows only into fresh parameter leaves") {
  const Dataset ds = gen_synth(tiny_config(7)).dataset;
  Model m = tiny_init(ds, 7);
  Stage2Options s2;
  s2.episodes = 3;
  s2.inner_steps = 2;
  s2.shape = {5, 2, 3};
  std::size_t calls = 0;
  stage2_train(m, ds, s2, nullptr, [&](const Graph& g, const std::vector<NodeId>& leaves) {
    ++calls;
    // trunk (2 layers) + 2 rounds x (edge 2 + node 1 layers) + readout, W and b each
    CHECK(leaves.size() == 2 * (2 + 2 * 3 + 1));
    for (NodeId id : leaves) {
      CHECK(g.tag(id) == OpTag::kInput);
      CHECK(g.parents(id).empty());
      CHECK(g.requires_grad(id));
    }
  });
  CHECK(calls == 3);
}

TEST_CASE("stage 2 aborts with the episode index on a non-finite loss") {
  const Dataset ds = gen_synth(tiny_config(8)).dataset;
  Model m = tiny_init(ds, 8);
  // inf - inf appears in every pairwise difference.
  m.trunk.layers[1].bias(0, 0) = std::numeric_limits<double>::infinity();
  Stage2Options s2;
  s2.episodes = 3;
  try {
    stage2_train(m, ds, s2, nullptr);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.index() == 0);
  }
}

TEST_CASE("stage 2 improves the prototypical head over the untrained trunk") {
  std::vector<double> gains;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig sc = tiny_config(seed, 2.0);
    sc.visual_noise = 1.0;
    const Dataset source = gen_synth(sc).dataset;
    SynthConfig tc = sc;
    tc.seed = seed + 100;
    tc.id_prefix = "t";
    const Dataset target = gen_synth(tc).dataset;
    Model m = tiny_init(source, seed);
    EvalOptions ev;
    ev.episodes = 600;
    ev.seed = seed;
    const double before = evaluate_baseline(m, target, HeadKind::kPrototypical, ev).mean;
    Stage2Options s2;
    s2.episodes = 500;
    s2.head = HeadKind::kPrototypical;
    s2.seed = seed;
    stage2_train(m, source, s2, nullptr);
    gains.push_back(evaluate_baseline(m, target, HeadKind::kPrototypical, ev).mean - before);
  }
  CHECK(median(gains) >= 0.05);
}

TEST_CASE("relation training lowers the query loss") {
  const Dataset ds = gen_synth(tiny_config(9, 2.0)).dataset;
  Model m = tiny_init(ds, 9);
  std::vector<TraceRow> trace;
  RelationOptions ro;
  ro.episodes = 300;
  ro.lr = 0.003;
  train_relation(m, ds, ro, &trace);
  std::vector<double> head, tail;
  for (std::size_t i = 0; i < 30; ++i) {
    head.push_back(*trace[i].query_loss);
    tail.push_back(*trace[trace.size() - 1 - i].query_loss);
  }
  CHECK(median(tail) < median(head));
}

TEST_CASE("baseline evaluation is at chance without class structure") {
  // A large pool per class: with small pools, removing the support samples
  // shifts the remaining query samples away from the support mean.
  SynthConfig c = tiny_config(10, 0.0);
  c.samples_per_class = 2000;
  const Dataset ds = gen_synth(c).dataset;
  const Model m = tiny_init(ds, 10);
  EvalOptions ev;
  ev.episodes = 600;
  for (HeadKind head : {HeadKind::kPrototypical, HeadKind::kMatching}) {
    const EvalReport r = evaluate_baseline(m, ds, head, ev);
    CHECK(std::abs(r.mean - 0.2) <= r.ci95);
  }
}

TEST_CASE("baseline evaluation is deterministic and thread-count invariant") {
  const Dataset ds = gen_synth(tiny_config(11)).dataset;
  const Model m = tiny_init(ds, 11);
  EvalOptions ev;
  ev.episodes = 40;
  const EvalReport a = evaluate_baseline(m, ds, HeadKind::kRelation, ev);
  const EvalReport b = evaluate_baseline(m, ds, HeadKind::kRelation, ev);
  ev.threads = 3;
  const EvalReport c = evaluate_baseline(m, ds, HeadKind::kRelation, ev);
  CHECK(a.accuracies == b.accuracies);
  CHECK(a.fingerprint == b.fingerprint);
  CHECK(a.accuracies == c.accuracies);
  ev.seed = 99;
  CHECK(evaluate_baseline(m, ds, HeadKind::kRelation, ev).accuracies != a.accuracies);
}

TEST_CASE("prototypical evaluation matches brute-force nearest mean") {
  const Dataset ds = gen_synth(tiny_config(12)).dataset;
  const Model m = tiny_init(ds, 12);
  EvalOptions ev;
  ev.episodes = 100;
  ev.seed = 5;
  const EvalReport r = evaluate_baseline(m, ds, HeadKind::kPrototypical, ev);
  const TaskSampler sampler(ds);
  for (std::size_t i = 0; i < ev.episodes; ++i) {
    const Episode ep = sampler.sample(5, 5, 15, episode_seed(ev.seed, i));
    const double oracle = nearest_mean_accuracy(mlp_apply(m.trunk, ep.support_visual()), ep.support_labels(),
                                                mlp_apply(m.trunk, ep.query_visual()), ep.query_labels(), 5);
    CHECK(r.accuracies[i] == oracle);
  }
}

TEST_CASE("report statistics") {
  EvalOptions ev;
  ev.seed = 3;
  const EvalReport r = summarize("x", {0.2, 0.4, 0.6, 0.8}, ev, nlohmann::json::object());
  CHECK(r.mean == doctest::Approx(0.5).epsilon(1e-15));
  // sample sd = sqrt(((.3)^2 + (.1)^2) * 2 / 3)
  const double sd = std::sqrt(0.2 / 3.0);
  CHECK(r.ci95 == doctest::Approx(1.96 * sd / 2.0).epsilon(1e-14));
  CHECK(r.seed == 3);
  CHECK(summarize("x", {0.5}, ev, {}).ci95 == 0.0);
}

TEST_CASE("confidence interval halves when episodes quadruple") {
  const Dataset ds = gen_synth(tiny_config(13)).dataset;
  const Model m = tiny_init(ds, 13);
  EvalOptions ev;
  ev.episodes = 150;
  const double small = evaluate_baseline(m, ds, HeadKind::kPrototypical, ev).ci95;
  ev.episodes = 600;
  const double large = evaluate_baseline(m, ds, HeadKind::kPrototypical, ev).ci95;
  CHECK(large / small == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("meta-test keeps frozen layers bit-identical") {
  const Dataset ds = gen_synth(tiny_config(14)).dataset;
  const Model m = tiny_init(ds, 14);
  const MetaTestOptions opt = tiny_meta(1);
  const TaskSampler sampler(ds);
  for (std::size_t i = 0; i < 5; ++i) {
    const DccdiEpisode r = run_dccdi_episode(m, sampler.sample(5, 5, 5, i), opt, i);
    CHECK(r.adapted_trunk.layers[0] == m.trunk.layers[0]);
    CHECK_FALSE(r.adapted_trunk.layers[1] == m.trunk.layers[1]);
    CHECK(r.cca_trace.size() == opt.cca_steps + 1);
  }
}

TEST_CASE("meta-test runs with untrained projections and is deterministic") {
  const Dataset ds = gen_synth(tiny_config(15)).dataset;
  const Model m = tiny_init(ds, 15);
  MetaTestOptions opt = tiny_meta(6);
  opt.cca_steps = 0;
  const EvalReport a = meta_test_dccdi(m, ds, opt);
  const EvalReport b = meta_test_dccdi(m, ds, opt);
  CHECK(a.accuracies == b.accuracies);
  CHECK(a.method == "dccdi");
  opt.eval.threads = 2;
  CHECK(meta_test_dccdi(m, ds, opt).accuracies == a.accuracies);
}

TEST_CASE("meta-test variants") {
  const Dataset ds = gen_synth(tiny_config(16)).dataset;
  const Model m = tiny_init(ds, 16);
  MetaTestOptions opt = tiny_meta(4);
  opt.use_text = false;
  const EvalReport plain = meta_test_dccdi(m, ds, opt);
  CHECK(plain.method == "dccdi-no-text");
  opt.use_text = true;
  opt.fuse_mode = FuseMode::kConcatBothProj;
  const EvalReport both = meta_test_dccdi(m, ds, opt);
  CHECK(both.accuracies.size() == 4);
  CHECK(both.fingerprint != plain.fingerprint);
  for (double a : both.accuracies) CHECK((a >= 0.0 && a <= 1.0));
}

TEST_CASE("meta-test needs two support samples") {
  const Dataset ds = gen_synth(tiny_config(17)).dataset;
  const Model m = init_model(tiny_model(), 12, 1, 12, 1);
  MetaTestOptions opt = tiny_meta(1);
  opt.eval.shape = {1, 1, 2};
  CHECK_THROWS_AS(meta_test_dccdi(m, ds, opt), std::invalid_argument);
}

TEST_CASE("trace and report json") {
  nlohmann::json j = TraceRow{4, "stage2", 1.5, 0.5};
  CHECK(j["episode"] == 4);
  CHECK(j["stage"] == "stage2");
  CHECK(j["support_loss"] == 1.5);
  CHECK(j["query_loss"] == 0.5);
  j = TraceRow{0, "stage1", 2.0, std::nullopt};
  CHECK(j["query_loss"].is_null());

  EvalOptions ev;
  const EvalReport r = summarize("prototypical", {0.5, 1.0}, ev, {});
  j = r;
  CHECK(j["method"] == "prototypical");
  CHECK(j["mean_acc"] == 0.75);
  CHECK(j["accuracies"].size() == 2);
  CHECK(j["fingerprint"].get<std::string>().size() == 16);
}
