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

#include "dccdi/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>

#include "dccdi/random.hpp"
#include "json.hpp"

namespace dccdi {

namespace {

Matrix stack(const std::vector<MultimodalSample>& samples, bool visual) {
  if (samples.empty()) return {};
  const std::size_t width = visual ? samples.front().visual.size() : samples.front().text.size();
  Matrix m(samples.size(), width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& v = visual ? samples[i].visual : samples[i].text;
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

std::vector<std::size_t> labels_of(const std::vector<MultimodalSample>& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(static_cast<std::size_t>(s.label));
  return out;
}

bool finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// First k entries of a partial Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> choose(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<int> Dataset::classes() const {
  std::set<int> s;
  for (const auto& x : samples) s.insert(x.label);
  return {s.begin(), s.end()};
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.visual.size() != visual_dim() || s.text.size() != text_dim()) {
      throw DatasetError("dataset: sample " + std::to_string(i) + " (" + s.id + ") has widths " +
                         std::to_string(s.visual.size()) + "/" + std::to_string(s.text.size()) + ", expected " +
                         std::to_string(visual_dim()) + "/" + std::to_string(text_dim()));
    }
    if (!finite(s.visual) || !finite(s.text)) {
      throw DatasetError("dataset: sample " + std::to_string(i) + " (" + s.id + ") has non-finite entries");
    }
  }
}

Matrix Episode::support_visual() const { return stack(support, true); }
Matrix Episode::support_text() const { return stack(support, false); }
Matrix Episode::query_visual() const { return stack(query, true); }
Matrix Episode::query_text() const { return stack(query, false); }
std::vector<std::size_t> Episode::support_labels() const { return labels_of(support); }
std::vector<std::size_t> Episode::query_labels() const { return labels_of(query); }

TaskSampler::TaskSampler(const Dataset& dataset) : dataset_(&dataset), labels_(dataset.classes()) {
  by_class_.resize(labels_.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto it = std::lower_bound(labels_.begin(), labels_.end(), dataset.samples[i].label);
    by_class_[static_cast<std::size_t>(it - labels_.begin())].push_back(i);
  }
}

Episode TaskSampler::sample(std::size_t way, std::size_t shot, std::size_t query, std::uint64_t seed) const {
  if (way == 0 || shot == 0) throw std::invalid_argument("sample_task: way and shot must be >= 1");
  if (labels_.size() < way) {
    throw DatasetError("sample_task: need " + std::to_string(way) + " classes, dataset has " +
                       std::to_string(labels_.size()) + " (short by " + std::to_string(way - labels_.size()) + ")");
  }
  const std::size_t per_class = shot + query;
  for (std::size_t c = 0; c < labels_.size(); ++c) {
    // Every class is checked, not only the drawn ones, so a deficit never
    // depends on the seed.
    if (by_class_[c].size() < per_class) {
      throw DatasetError("sample_task: class " + std::to_string(labels_[c]) + " has " +
                         std::to_string(by_class_[c].size()) + " samples, need " + std::to_string(per_class) +
                         " (short by " + std::to_string(per_class - by_class_[c].size()) + ")");
    }
  }

  Rng rng(seed);
  Episode ep;
  const std::vector<std::size_t> picked = choose(rng, labels_.size(), way);
  ep.support.reserve(way * shot);
  ep.query.reserve(way * query);
  for (std::size_t c = 0; c < way; ++c) {
    const auto& pool = by_class_[picked[c]];
    ep.classes.push_back(labels_[picked[c]]);
    const std::vector<std::size_t> members = choose(rng, pool.size(), per_class);
    for (std::size_t j = 0; j < per_class; ++j) {
      MultimodalSample s = dataset_->samples[pool[members[j]]];
      s.label = static_cast<int>(c);
      (j < shot ? ep.support : ep.query).push_back(std::move(s));
    }
  }
  return ep;
}

Episode sample_task(const Dataset& dataset, std::size_t way, std::size_t shot, std::size_t query,
                    std::uint64_t seed) {
  return TaskSampler(dataset).sample(way, shot, query, seed);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("load_dataset: cannot open " + path);
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    MultimodalSample s;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.label = j.at("label").get<int>();
      s.visual = j.at("visual").get<std::vector<double>>();
      s.text = j.at("text").get<std::vector<double>>();
      if (j.size() != 4) throw DatasetError("unexpected fields");
    } catch (const std::exception& e) {
      throw DatasetError("load_dataset: malformed line " + where + ": " + e.what());
    }
    if (!ds.empty() && (s.visual.size() != ds.visual_dim() || s.text.size() != ds.text_dim())) {
      throw DatasetError("load_dataset: line " + where + " has widths " + std::to_string(s.visual.size()) + "/" +
                         std::to_string(s.text.size()) + ", earlier lines have " + std::to_string(ds.visual_dim()) +
                         "/" + std::to_string(ds.text_dim()));
    }
    if (!finite(s.visual) || !finite(s.text)) {
      throw DatasetError("load_dataset: line " + where + " has non-finite entries");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path);
  if (!out) throw DatasetError("save_dataset: cannot write " + path);
  for (const auto& s : dataset.samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["label"] = s.label;
    j["visual"] = s.visual;
    j["text"] = s.text;
    out << j.dump() << '\n';
  }
  if (!out) throw DatasetError("save_dataset: write failed for " + path);
}

}  // namespace dccdi
