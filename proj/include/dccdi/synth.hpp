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

#ifndef DCCDI_SYNTH_HPP_
#define DCCDI_SYNTH_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dccdi/dataset.hpp"
#include "dccdi/matrix.hpp"
#include "json.hpp"

namespace dccdi {

// Two-view generator with a known latent structure. For a sample of class c:
//
//   z      = mu_c + e,                         e ~ N(0, I_L)
//   visual = Av z + sv * ev
//   t      = rho (sqrt(tau) z + sqrt(1 - tau) u) + sqrt(1 - rho^2) w
//   text   = At t + st * et
//
// with u, w ~ N(0, I_L) fresh per sample, mu_c ~ N(0, sep^2 I_L) and Av, At
// fixed matrices with orthonormal columns. tau (text informativeness) sets
// how much of z, and so of mu_c, reaches the text; at tau = 0 the text is
// independent of the label and of the visual view.
struct SynthConfig {
  std::size_t num_classes = 20;
  std::size_t samples_per_class = 40;
  std::size_t latent_dim = 10;
  std::size_t visual_dim = 512;
  std::size_t text_dim = 768;
  double rho = 0.9;
  double class_separation = 1.0;
  double visual_noise = 0.5;
  double text_noise = 0.5;
  double text_informativeness = 1.0;
  std::uint64_t seed = 0;
  // Mixers are built from their own seed so two configs can share a base
  // mixer; mixer_shift > 0 perturbs it with noise drawn from `seed`.
  std::uint64_t mixer_seed = 0;
  double mixer_shift = 0.0;
  std::string id_prefix = "s";
  int label_offset = 0;

  void validate() const;
};

struct BayesAccuracy {
  double visual = 0.0;
  double text = 0.0;
  double joint = 0.0;
};

struct GroundTruth {
  Matrix prototypes;     // C x L
  Matrix visual_mixer;   // Dv x L
  Matrix text_mixer;     // Dt x L
  double rho = 0.0;
  double text_informativeness = 0.0;
  // Population canonical correlations between the views, descending.
  std::vector<double> canonical_correlations;
  BayesAccuracy bayes;
};

struct SynthData {
  Dataset dataset;
  GroundTruth truth;
};

SynthData gen_synth(const SynthConfig& cfg);

/// Monte-Carlo estimate of E[max posterior] of the Bayes classifier that
/// knows the generative model; 1 / C exactly when the separation is zero.
BayesAccuracy bayes_accuracy(const SynthConfig& cfg, const Matrix& prototypes, std::size_t draws = 20000);

/// Orthonormalizes the columns of `a` (rows >= cols) by modified Gram-Schmidt.
Matrix orthonormal_columns(Matrix a);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const GroundTruth& g);

}  // namespace dccdi

#endif  // DCCDI_SYNTH_HPP_
