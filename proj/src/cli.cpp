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

#include "dccdi/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "dccdi/config.hpp"
#include "dccdi/gradcheck_suite.hpp"
#include "dccdi/json_util.hpp"
#include "dccdi/meta.hpp"
#include "dccdi/synth.hpp"

namespace dccdi {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonFlags {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

ExperimentConfig load_with_overrides(const CommonFlags& f) {
  ExperimentConfig c = load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.threads) {
    if (*f.threads == 0) throw ConfigError("--threads: must be at least 1");
    c.threads = *f.threads;
  }
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  return c;
}

fs::path prepare_out(const std::string& out) {
  const fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

const char* const kEvalHeader = "method,way,shot,episodes,mean_acc,ci95,seed";

std::string csv_row(const EvalReport& r) {
  return r.method + "," + std::to_string(r.shape.way) + "," + std::to_string(r.shape.shot) + "," +
         std::to_string(r.accuracies.size()) + "," + fixed6(r.mean) + "," + fixed6(r.ci95) + "," +
         std::to_string(r.seed);
}

Model load_checkpoint(const ExperimentConfig& c, const Dataset& target) {
  if (c.checkpoint.empty()) throw ConfigError("no checkpoint: pass --checkpoint or set \"checkpoint\"");
  Model m = load_model(c.checkpoint);
  if (m.trunk.input_dim() != target.visual_dim()) {
    throw std::runtime_error("checkpoint expects visual width " + std::to_string(m.trunk.input_dim()) +
                             ", target data has " + std::to_string(target.visual_dim()));
  }
  return m;
}

void cmd_gen_data(const CommonFlags& f, std::ostream& out) {
  const ExperimentConfig c = load_with_overrides(f);
  const fs::path dir = prepare_out(f.out);
  for (bool target : {false, true}) {
    const std::string name = target ? "target" : "source";
    if (!(target ? c.target : c.source).path.empty()) {
      out << name << ": file-backed, skipped\n";
      continue;
    }
    const SynthData d = gen_synth(resolved_synth(c, target));
    save_dataset(d.dataset, (dir / (name + ".jsonl")).string());
    write_json(dir / (name + ".truth.json"), d.truth);
    out << name << ": " << d.dataset.size() << " samples, " << d.dataset.classes().size() << " classes\n";
  }
  write_json(dir / "config.json", config_to_json(c));
}

void cmd_train(const CommonFlags& f, std::ostream& out) {
  const ExperimentConfig c = load_with_overrides(f);
  const fs::path dir = prepare_out(f.out);
  const Dataset source = resolve_dataset(c, false);
  Model model = init_model(c.model, source.visual_dim(), c.episode.way, source.classes().size(), model_seed(c));
  std::vector<TraceRow> trace;
  stage1_train(model, source, stage1_options(c), &trace);
  stage2_train(model, source, stage2_options(c), &trace);
  train_relation(model, source, relation_options(c), &trace);
  save_model(model, (dir / "checkpoint.json").string());
  std::string lines;
  for (const TraceRow& r : trace) lines += json(r).dump() + "\n";
  write_text(dir / "trace.jsonl", lines);
  write_json(dir / "config.json", config_to_json(c));
  out << "trained: " << trace.size() << " trace rows\n";
}

void cmd_eval(const CommonFlags& f, std::ostream& out) {
  ExperimentConfig c = load_with_overrides(f);
  const fs::path dir = prepare_out(f.out);
  const Dataset target = resolve_dataset(c, true);
  const Model model = load_checkpoint(c, target);
  std::string csv = std::string(kEvalHeader) + "\n";
  json reports = json::array();
  for (const std::string& method : c.methods) {
    for (std::size_t shot : c.shots) {
      const EvalReport r = evaluate_method(model, target, method, meta_test_options(c, shot));
      csv += csv_row(r) + "\n";
      reports.push_back(r);
      out << method << " " << shot << "-shot: " << fixed6(r.mean) << " +- " << fixed6(r.ci95) << "\n";
    }
  }
  write_text(dir / "eval.csv", csv);
  write_json(dir / "eval.json", reports);
  write_json(dir / "config.json", config_to_json(c));
}

void cmd_ablate_dim(const CommonFlags& f, std::ostream& out) {
  ExperimentConfig c = load_with_overrides(f);
  if (c.ablation_dims.empty()) throw ConfigError("ablation.dims: empty grid");
  const fs::path dir = prepare_out(f.out);
  const Dataset target = resolve_dataset(c, true);
  const Model model = load_checkpoint(c, target);
  std::string csv = std::string("output_dim,") + kEvalHeader + "\n";
  json reports = json::array();
  for (std::size_t d : c.ablation_dims) {
    MetaTestOptions o = meta_test_options(c, c.episode.shot);
    o.output_dim = d;
    const EvalReport r = evaluate_method(model, target, "dccdi", o);
    csv += std::to_string(d) + "," + csv_row(r) + "\n";
    json j = r;
    j["output_dim"] = d;
    reports.push_back(j);
    out << "d=" << d << ": " << fixed6(r.mean) << " +- " << fixed6(r.ci95) << "\n";
  }
  write_text(dir / "ablation.csv", csv);
  write_json(dir / "ablation.json", reports);
  write_json(dir / "config.json", config_to_json(c));
}

bool cmd_gradcheck(const CommonFlags& f, std::ostream& out) {
  SuiteOptions o;
  if (f.seed) o.seed = *f.seed;
  const SuiteReport r = run_gradcheck_suite(o);
  for (const SuiteCheck& c : r.checks) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", c.max_rel_error);
    out << (c.passed ? "PASS " : "FAIL ") << c.module << "/" << c.name << " max_rel_error=" << err
        << " tol=" << c.tolerance << " instances=" << c.instances << "\n";
  }
  out << (r.passed() ? "gradcheck: all passed\n" : "gradcheck: FAILED\n");
  if (!f.out.empty()) write_json(prepare_out(f.out) / "gradcheck.json", r);
  return r.passed();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-domain few-shot document classification with DCCA alignment"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", flags.config, "JSON config file (defaults if omitted)");
    auto* o = sub->add_option("--out", flags.out, "output directory");
    if (needs_out) o->required();
    sub->add_option("--seed", flags.seed, "overrides the config seed");
    sub->add_option("--threads", flags.threads, "overrides the config thread count");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "write source/target datasets and ground-truth sidecars");
  CLI::App* train = app.add_subcommand("train", "Stage 1, Stage 2 and relation training; checkpoint + trace");
  CLI::App* eval = app.add_subcommand("eval", "accuracy table over methods and the shot grid");
  CLI::App* ablate = app.add_subcommand("ablate-dim", "DCCDI accuracy over the output-dimension grid");
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  for (CLI::App* s : {gen, train, eval, ablate}) add_common(s, true);
  for (CLI::App* s : {eval, ablate}) s->add_option("--checkpoint", flags.checkpoint, "checkpoint from train");
  grad->add_option("--out", flags.out, "directory for gradcheck.json");
  grad->add_option("--seed", flags.seed, "suite seed");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) cmd_gen_data(flags, out);
    if (train->parsed()) cmd_train(flags, out);
    if (eval->parsed()) cmd_eval(flags, out);
    if (ablate->parsed()) cmd_ablate_dim(flags, out);
    if (grad->parsed()) return cmd_gradcheck(flags, out) ? 0 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dccdi
