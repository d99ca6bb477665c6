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

#include "dccdi/config.hpp"

#include <fstream>
#include <optional>
#include <sstream>

#include "dccdi/json_util.hpp"
#include "dccdi/random.hpp"

namespace dccdi {
namespace {

using nlohmann::json;

template <typename E>
void read_enum(const json& j, const char* key, E& out, E (*parse)(const std::string&), const std::string& where) {
  std::string name;
  read_optional(j, key, name, where);
  if (name.empty()) return;
  try {
    out = parse(name);
  } catch (const std::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "rmsprop") return OptimizerKind::kRmsProp;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "rmsprop"; }

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  const auto it = j.find(key);
  return it == j.end() ? empty : *it;
}

void read_dataset(const json& j, DatasetSpec& d, const std::string& where) {
  require_keys(j, {"path", "synth"}, where);
  read_optional(j, "path", d.path, where);
  if (j.contains("path") && j.contains("synth")) throw ConfigError(where + ": give either path or synth, not both");
  if (const auto it = j.find("synth"); it != j.end()) {
    try {
      from_json(*it, d.synth);
    } catch (const ConfigError& e) {
      throw ConfigError(where + "." + e.what());
    }
    d.synth_seed_set = it->contains("seed");
    d.mixer_seed_set = it->contains("mixer_seed");
  }
}

void read_model(const json& j, ModelConfig& m) {
  const std::string where = "model";
  require_keys(j, {"trunk_hidden", "trunk_output", "trunk_activation", "frozen_prefix", "gnn", "relation_hidden"},
               where);
  read_optional(j, "trunk_hidden", m.trunk_hidden, where);
  read_optional(j, "trunk_output", m.trunk_output, where);
  read_enum(j, "trunk_activation", m.trunk_activation, activation_from_string, where);
  if (const auto it = j.find("frozen_prefix"); it != j.end() && !it->is_null()) {
    std::size_t l = 0;
    read_optional(j, "frozen_prefix", l, where);
    m.frozen_prefix = l;
  }
  read_optional(j, "relation_hidden", m.relation_hidden, where);
  const json& g = section(j, "gnn");
  require_keys(g, {"rounds", "edge_hidden", "node_width", "label_passthrough"}, "model.gnn");
  read_optional(g, "rounds", m.gnn.rounds, "model.gnn");
  read_optional(g, "edge_hidden", m.gnn.edge_hidden, "model.gnn");
  read_optional(g, "node_width", m.gnn.node_width, "model.gnn");
  read_optional(g, "label_passthrough", m.gnn.label_passthrough, "model.gnn");
}

void read_meta_test(const json& j, MetaTestOptions& m) {
  const std::string where = "meta_test";
  require_keys(j,
               {"cca_steps", "cca_lr", "cca_hidden", "cca_activation", "output_dim", "r1", "top_k", "adapt_steps",
                "adapt_lr", "fuse_mode", "text_balance", "text_scale", "ensemble_weight", "linear_init"},
               where);
  read_optional(j, "cca_steps", m.cca_steps, where);
  read_optional(j, "cca_lr", m.cca_lr, where);
  read_optional(j, "cca_hidden", m.cca_hidden, where);
  read_enum(j, "cca_activation", m.cca_activation, activation_from_string, where);
  read_optional(j, "output_dim", m.output_dim, where);
  read_optional(j, "r1", m.r1, where);
  read_optional(j, "top_k", m.top_k, where);
  read_optional(j, "adapt_steps", m.adapt_steps, where);
  read_optional(j, "adapt_lr", m.adapt_lr, where);
  read_enum(j, "fuse_mode", m.fuse_mode, fuse_mode_from_string, where);
  read_enum(j, "text_balance", m.text_balance, text_balance_from_string, where);
  read_optional(j, "text_scale", m.text_scale, where);
  read_optional(j, "ensemble_weight", m.ensemble_weight, where);
  read_enum(j, "linear_init", m.linear_init, linear_init_from_string, where);
}

bool is_baseline(const std::string& m) {
  return m == "prototypical" || m == "matching" || m == "relation" || m == "graph";
}

void check_method(const std::string& m) {
  if (!is_baseline(m) && m != "dccdi" && m != "dccdi-no-text") throw ConfigError("eval.methods: unknown method '" + m + "'");
}

json dataset_json(const ExperimentConfig& c, bool target) {
  const DatasetSpec& d = target ? c.target : c.source;
  if (!d.path.empty()) return {{"path", d.path}};
  return {{"synth", resolved_synth(c, target)}};
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  target.synth.id_prefix = "t";
  stage2.head = HeadKind::kGraph;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  require_keys(j,
               {"seed", "threads", "checkpoint", "data", "model", "episode", "stage1", "stage2", "relation",
                "meta_test", "eval", "ablation"},
               "config");
  read_optional(j, "seed", c.seed, "config");
  read_optional(j, "threads", c.threads, "config");
  read_optional(j, "checkpoint", c.checkpoint, "config");
  if (c.threads == 0) throw ConfigError("config.threads: must be at least 1");

  const json& data = section(j, "data");
  require_keys(data, {"source", "target"}, "data");
  read_dataset(section(data, "source"), c.source, "data.source");
  read_dataset(section(data, "target"), c.target, "data.target");

  read_model(section(j, "model"), c.model);

  const json& ep = section(j, "episode");
  require_keys(ep, {"way", "shot", "query"}, "episode");
  read_optional(ep, "way", c.episode.way, "episode");
  read_optional(ep, "shot", c.episode.shot, "episode");
  read_optional(ep, "query", c.episode.query, "episode");

  const json& s1 = section(j, "stage1");
  require_keys(s1, {"episodes", "lr"}, "stage1");
  read_optional(s1, "episodes", c.stage1.episodes, "stage1");
  read_optional(s1, "lr", c.stage1.lr, "stage1");

  const json& s2 = section(j, "stage2");
  require_keys(s2, {"episodes", "inner_steps", "inner_lr", "outer_lr", "outer_optimizer", "head"}, "stage2");
  read_optional(s2, "episodes", c.stage2.episodes, "stage2");
  read_optional(s2, "inner_steps", c.stage2.inner_steps, "stage2");
  read_optional(s2, "inner_lr", c.stage2.inner_lr, "stage2");
  read_optional(s2, "outer_lr", c.stage2.outer_lr, "stage2");
  read_enum(s2, "outer_optimizer", c.stage2.outer_optimizer, optimizer_from_string, "stage2");
  read_enum(s2, "head", c.stage2.head, head_from_string, "stage2");
  if (c.stage2.head != HeadKind::kGraph && c.stage2.head != HeadKind::kPrototypical &&
      c.stage2.head != HeadKind::kMatching) {
    throw ConfigError("stage2.head: must be graph, prototypical or matching");
  }

  const json& rel = section(j, "relation");
  require_keys(rel, {"episodes", "lr"}, "relation");
  read_optional(rel, "episodes", c.relation.episodes, "relation");
  read_optional(rel, "lr", c.relation.lr, "relation");

  read_meta_test(section(j, "meta_test"), c.meta_test);

  const json& ev = section(j, "eval");
  require_keys(ev, {"episodes", "shots", "methods"}, "eval");
  read_optional(ev, "episodes", c.eval_episodes, "eval");
  read_optional(ev, "shots", c.shots, "eval");
  read_optional(ev, "methods", c.methods, "eval");
  for (const std::string& m : c.methods) check_method(m);

  const json& ab = section(j, "ablation");
  require_keys(ab, {"dims"}, "ablation");
  read_optional(ab, "dims", c.ablation_dims, "ablation");
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const ModelConfig& m = c.model;
  const MetaTestOptions& t = c.meta_test;
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"checkpoint", c.checkpoint},
      {"data", {{"source", dataset_json(c, false)}, {"target", dataset_json(c, true)}}},
      {"model",
       {{"trunk_hidden", m.trunk_hidden},
        {"trunk_output", m.trunk_output},
        {"trunk_activation", to_string(m.trunk_activation)},
        {"frozen_prefix", m.frozen_prefix ? json(*m.frozen_prefix) : json(nullptr)},
        {"gnn",
         {{"rounds", m.gnn.rounds},
          {"edge_hidden", m.gnn.edge_hidden},
          {"node_width", m.gnn.node_width},
          {"label_passthrough", m.gnn.label_passthrough}}},
        {"relation_hidden", m.relation_hidden}}},
      {"episode", {{"way", c.episode.way}, {"shot", c.episode.shot}, {"query", c.episode.query}}},
      {"stage1", {{"episodes", c.stage1.episodes}, {"lr", c.stage1.lr}}},
      {"stage2",
       {{"episodes", c.stage2.episodes},
        {"inner_steps", c.stage2.inner_steps},
        {"inner_lr", c.stage2.inner_lr},
        {"outer_lr", c.stage2.outer_lr},
        {"outer_optimizer", optimizer_name(c.stage2.outer_optimizer)},
        {"head", to_string(c.stage2.head)}}},
      {"relation", {{"episodes", c.relation.episodes}, {"lr", c.relation.lr}}},
      {"meta_test",
       {{"cca_steps", t.cca_steps},
        {"cca_lr", t.cca_lr},
        {"cca_hidden", t.cca_hidden},
        {"cca_activation", to_string(t.cca_activation)},
        {"output_dim", t.output_dim},
        {"r1", t.r1},
        {"top_k", t.top_k},
        {"adapt_steps", t.adapt_steps},
        {"adapt_lr", t.adapt_lr},
        {"fuse_mode", to_string(t.fuse_mode)},
        {"text_balance", to_string(t.text_balance)},
        {"text_scale", t.text_scale},
        {"ensemble_weight", t.ensemble_weight},
        {"linear_init", to_string(t.linear_init)}}},
      {"eval", {{"episodes", c.eval_episodes}, {"shots", c.shots}, {"methods", c.methods}}},
      {"ablation", {{"dims", c.ablation_dims}}},
  };
}

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

SynthConfig resolved_synth(const ExperimentConfig& c, bool target) {
  const DatasetSpec& d = target ? c.target : c.source;
  SynthConfig s = d.synth;
  if (!d.synth_seed_set) s.seed = derive_seed(c.seed, target ? "target-data" : "source-data");
  // Shared by default so source and target differ only by mixer_shift.
  if (!d.mixer_seed_set) s.mixer_seed = derive_seed(c.seed, "mixers");
  return s;
}

Dataset resolve_dataset(const ExperimentConfig& c, bool target) {
  const DatasetSpec& d = target ? c.target : c.source;
  if (!d.path.empty()) return load_dataset(d.path);
  return gen_synth(resolved_synth(c, target)).dataset;
}

Stage1Options stage1_options(const ExperimentConfig& c) {
  Stage1Options o = c.stage1;
  o.shape = c.episode;
  o.seed = derive_seed(c.seed, "stage1");
  return o;
}

Stage2Options stage2_options(const ExperimentConfig& c) {
  Stage2Options o = c.stage2;
  o.shape = c.episode;
  o.seed = derive_seed(c.seed, "stage2");
  return o;
}

RelationOptions relation_options(const ExperimentConfig& c) {
  RelationOptions o = c.relation;
  o.shape = c.episode;
  o.seed = derive_seed(c.seed, "relation");
  return o;
}

EvalOptions eval_options(const ExperimentConfig& c, std::size_t shot) {
  EvalOptions o;
  o.episodes = c.eval_episodes;
  o.shape = c.episode;
  o.shape.shot = shot;
  o.seed = derive_seed(c.seed, "eval");
  o.threads = c.threads;
  return o;
}

MetaTestOptions meta_test_options(const ExperimentConfig& c, std::size_t shot) {
  MetaTestOptions o = c.meta_test;
  o.eval = eval_options(c, shot);
  return o;
}

std::uint64_t model_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "model"); }

EvalReport evaluate_method(const Model& model, const Dataset& target, const std::string& method,
                           const MetaTestOptions& opt) {
  if (is_baseline(method)) return evaluate_baseline(model, target, head_from_string(method), opt.eval);
  check_method(method);
  MetaTestOptions o = opt;
  o.use_text = method == "dccdi";
  return meta_test_dccdi(model, target, o);
}

}  // namespace dccdi
