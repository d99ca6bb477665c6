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
#include <fstream>
#include <set>
#include <string>

#include "dccdi/cca.hpp"
#include "dccdi/dataset.hpp"
#include "dccdi/synth.hpp"
#include "doctest.h"

using namespace dccdi;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.num_classes = 20;
  c.samples_per_class = 25;
  c.latent_dim = 4;
  c.visual_dim = 8;
  c.text_dim = 6;
  c.seed = 3;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dccdi_" + name)).string();
}

}  // namespace

TEST_CASE("episode shapes and relabeling") {
  const Dataset ds = gen_synth(small_config()).dataset;
  const Episode ep = sample_task(ds, 5, 5, 15, 42);
  CHECK(ep.support.size() == 25);
  CHECK(ep.query.size() == 75);
  CHECK(ep.way() == 5);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    CHECK(ep.support[i].label == static_cast<int>(i / 5));
    ids.insert(ep.support[i].id);
  }
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    CHECK(ep.query[i].label == static_cast<int>(i / 15));
    CHECK(ids.count(ep.query[i].id) == 0);
    const auto it = std::find_if(ds.samples.begin(), ds.samples.end(),
                                 [&](const MultimodalSample& s) { return s.id == ep.query[i].id; });
    REQUIRE(it != ds.samples.end());
    CHECK(it->label == ep.classes[static_cast<std::size_t>(ep.query[i].label)]);
    CHECK(it->visual == ep.query[i].visual);
  }
  CHECK(ep.support_visual().rows() == 25);
  CHECK(ep.query_text().cols() == 6);
}

TEST_CASE("one-way one-shot") {
  const Dataset ds = gen_synth(small_config()).dataset;
  const Episode ep = sample_task(ds, 1, 1, 1, 0);
  REQUIRE(ep.support.size() == 1);
  REQUIRE(ep.query.size() == 1);
  CHECK(ep.support[0].id != ep.query[0].id);
}

TEST_CASE("sampling is reproducible and seed dependent") {
  const Dataset ds = gen_synth(small_config()).dataset;
  const TaskSampler sampler(ds);
  const Episode a = sampler.sample(5, 2, 3, 9);
  const Episode b = sampler.sample(5, 2, 3, 9);
  const Episode c = sampler.sample(5, 2, 3, 10);
  CHECK(a.support == b.support);
  CHECK(a.query == b.query);
  CHECK(a.classes == b.classes);
  CHECK_FALSE((a.support == c.support && a.query == c.query));
}

TEST_CASE("deficits are reported") {
  const Dataset ds = gen_synth(small_config()).dataset;
  try {
    sample_task(ds, 21, 1, 1, 0);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("short by 1") != std::string::npos);
  }
  try {
    sample_task(ds, 5, 20, 10, 0);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("short by 5") != std::string::npos);
  }
}

TEST_CASE("support and query stay disjoint over many episodes") {
  const Dataset ds = gen_synth(small_config()).dataset;
  const TaskSampler sampler(ds);
  bool disjoint = true;
  for (std::size_t i = 0; i < 10000 && disjoint; ++i) {
    const Episode ep = sampler.sample(5, 5, 15, episode_seed(77, i));
    std::set<std::string> ids;
    for (const auto& s : ep.support) ids.insert(s.id);
    for (const auto& s : ep.query) disjoint = disjoint && ids.insert(s.id).second;
  }
  CHECK(disjoint);
}

TEST_CASE("class draws are uniform") {
  const Dataset ds = gen_synth(small_config()).dataset;
  const TaskSampler sampler(ds);
  const std::size_t episodes = 10000;
  std::vector<double> counts(20, 0.0);
  for (std::size_t i = 0; i < episodes; ++i) {
    for (int c : sampler.sample(5, 1, 1, episode_seed(5, i)).classes) counts[static_cast<std::size_t>(c)] += 1.0;
  }
  const double p = 5.0 / 20.0;
  const double expected = p * episodes;
  const double stderr_ = std::sqrt(episodes * p * (1 - p));
  for (double c : counts) CHECK(std::abs(c - expected) <= 4.0 * stderr_);
}

TEST_CASE("dataset round trip through json lines is exact") {
  SynthConfig cfg = small_config();
  cfg.num_classes = 4;
  const Dataset ds = gen_synth(cfg).dataset;
  REQUIRE(ds.size() == 100);
  const std::string path = temp_path("roundtrip.jsonl");
  save_dataset(ds, path);
  CHECK(load_dataset(path) == ds);
  std::remove(path.c_str());
}

TEST_CASE("empty file loads as an empty dataset") {
  const std::string path = temp_path("empty.jsonl");
  { std::ofstream(path).flush(); }
  CHECK(load_dataset(path).empty());
  std::remove(path.c_str());
}

TEST_CASE("width change is reported with its line number") {
  const std::string path = temp_path("ragged.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"a","label":0,"visual":[1,2],"text":[1]})" << "\n";
    out << R"({"id":"b","label":0,"visual":[1,2],"text":[1]})" << "\n";
    out << R"({"id":"c","label":1,"visual":[1,2,3],"text":[1]})" << "\n";
  }
  try {
    load_dataset(path);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find(":3 ") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << R"({"id":"a","label":0,"visual":[1,2],"text":[1]})" << "\n";
    out << R"({"id":"b","label":0,"visual":[1,2)" << "\n";
  }
  try {
    load_dataset(path);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("generator validates its config") {
  SynthConfig c = small_config();
  c.rho = 1.5;
  CHECK_THROWS(gen_synth(c));
  c = small_config();
  c.visual_dim = 2;
  CHECK_THROWS(gen_synth(c));
  c = small_config();
  c.num_classes = 0;
  CHECK_THROWS(gen_synth(c));
}

TEST_CASE("mixers have orthonormal columns") {
  const GroundTruth g = gen_synth(small_config()).truth;
  CHECK(max_abs_diff(matmul_tn(g.visual_mixer, g.visual_mixer), Matrix::identity(4)) < 1e-12);
  CHECK(max_abs_diff(matmul_tn(g.text_mixer, g.text_mixer), Matrix::identity(4)) < 1e-12);
}

TEST_CASE("perfectly coupled views give unit canonical correlations") {
  SynthConfig c;
  c.num_classes = 10;
  c.samples_per_class = 1000;
  c.latent_dim = 3;
  c.visual_dim = 6;
  c.text_dim = 5;
  c.rho = 1.0;
  c.visual_noise = 0.0;
  c.text_noise = 0.0;
  c.seed = 1;
  const SynthData d = gen_synth(c);
  Episode all;
  all.support = d.dataset.samples;
  const LinearCcaResult r = linear_cca_oracle(all.support_visual(), all.support_text(), 3, 1e-4);
  for (double v : r.correlations) CHECK(v > 0.98);
  for (double v : d.truth.canonical_correlations) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("independent views are uncorrelated") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig c;
    c.num_classes = 10;
    c.samples_per_class = 1000;
    c.latent_dim = 3;
    c.visual_dim = 3;
    c.text_dim = 3;
    c.rho = 0.0;
    c.seed = seed;
    const SynthData d = gen_synth(c);
    Episode all;
    all.support = d.dataset.samples;
    const LinearCcaResult r = linear_cca_oracle(all.support_visual(), all.support_text(), 1, 1e-4);
    CHECK(r.correlations[0] < 0.1);
    CHECK(d.truth.canonical_correlations[0] == 0.0);
  }
}

TEST_CASE("zero separation gives chance Bayes accuracy") {
  SynthConfig c = small_config();
  c.class_separation = 0.0;
  const BayesAccuracy b = gen_synth(c).truth.bayes;
  CHECK(b.visual == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
  CHECK(b.text == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
  CHECK(b.joint == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
}

TEST_CASE("Bayes accuracy grows with separation") {
  SynthConfig c = small_config();
  double prev_v = 0.0, prev_j = 0.0;
  for (double sep : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    c.class_separation = sep;
    const SynthData d = gen_synth(c);
    const BayesAccuracy b = bayes_accuracy(c, d.truth.prototypes, 5000);
    CHECK(b.visual >= prev_v);
    CHECK(b.joint >= prev_j);
    CHECK(b.joint >= b.visual - 0.01);
    prev_v = b.visual;
    prev_j = b.joint;
  }
}

TEST_CASE("within-class latent means converge at the sqrt(n) rate") {
  for (std::size_t n : {100u, 10000u}) {
    SynthConfig c;
    c.num_classes = 2;
    c.samples_per_class = n;
    c.latent_dim = 3;
    c.visual_dim = 3;
    c.text_dim = 3;
    c.visual_noise = 0.0;
    c.class_separation = 2.0;
    c.seed = 11;
    const SynthData d = gen_synth(c);
    // With a square orthonormal mixer the latent is recovered exactly.
    double worst = 0.0;
    for (std::size_t cls = 0; cls < 2; ++cls) {
      std::vector<double> mean(3, 0.0);
      for (const auto& s : d.dataset.samples) {
        if (s.label != static_cast<int>(cls)) continue;
        for (std::size_t k = 0; k < 3; ++k) {
          double zk = 0.0;
          for (std::size_t i = 0; i < 3; ++i) zk += d.truth.visual_mixer(i, k) * s.visual[i];
          mean[k] += zk / static_cast<double>(n);
        }
      }
      for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(mean[k] - d.truth.prototypes(cls, k)));
    }
    CHECK(worst < 4.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("configs that differ only in rho share their random numbers") {
  SynthConfig a = small_config();
  SynthConfig b = a;
  b.rho = 0.3;
  const Dataset da = gen_synth(a).dataset;
  const Dataset db = gen_synth(b).dataset;
  CHECK(da.samples[17].visual == db.samples[17].visual);
  CHECK(da.samples[17].text != db.samples[17].text);
}
