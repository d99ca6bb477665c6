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

#include "dccdi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dccdi/json_util.hpp"
#include "dccdi/linalg.hpp"
#include "dccdi/random.hpp"

namespace dccdi {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("synth config: " + what);
}

// Between-class scatter of the prototypes under uniform class weights.
Matrix prototype_scatter(const Matrix& mu) {
  const std::size_t c = mu.rows();
  const std::size_t l = mu.cols();
  Matrix centered = mu;
  for (std::size_t j = 0; j < l; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += mu(i, j);
    mean /= static_cast<double>(c);
    for (std::size_t i = 0; i < c; ++i) centered(i, j) -= mean;
  }
  return matmul_tn(centered, centered) * (1.0 / static_cast<double>(c));
}

std::vector<double> population_correlations(const SynthConfig& cfg, const Matrix& mu) {
  const std::size_t l = cfg.latent_dim;
  const Matrix s_mu = prototype_scatter(mu);
  const double a = cfg.rho * std::sqrt(cfg.text_informativeness);
  const Matrix cov_z = Matrix::identity(l) + s_mu;
  const Matrix cxx = cov_z + Matrix::identity(l) * (cfg.visual_noise * cfg.visual_noise);
  const Matrix cyy = Matrix::identity(l) * (1.0 + cfg.text_noise * cfg.text_noise) + s_mu * (a * a);
  const Matrix cxy = cov_z * a;
  const Matrix t = matmul(matmul(inv_sqrt_sym(cxx, 0.0), cxy), inv_sqrt_sym(cyy, 0.0));
  return svd(t).s;
}

}  // namespace

void SynthConfig::validate() const {
  require(num_classes >= 1 && samples_per_class >= 1 && latent_dim >= 1, "counts must be >= 1");
  require(visual_dim >= latent_dim && text_dim >= latent_dim, "visual_dim and text_dim must be >= latent_dim");
  require(rho >= 0.0 && rho <= 1.0, "rho must be in [0, 1]");
  require(text_informativeness >= 0.0 && text_informativeness <= 1.0, "text_informativeness must be in [0, 1]");
  require(class_separation >= 0.0, "class_separation must be >= 0");
  require(visual_noise >= 0.0 && text_noise >= 0.0, "noise levels must be >= 0");
  require(mixer_shift >= 0.0, "mixer_shift must be >= 0");
}

Matrix orthonormal_columns(Matrix a) {
  if (a.rows() < a.cols()) throw std::invalid_argument("orthonormal_columns: more columns than rows");
  for (std::size_t j = 0; j < a.cols(); ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) dot += a(i, j) * a(i, k);
      for (std::size_t i = 0; i < a.rows(); ++i) a(i, j) -= dot * a(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw LinalgError("orthonormal_columns: columns are linearly dependent");
    for (std::size_t i = 0; i < a.rows(); ++i) a(i, j) /= norm;
  }
  return a;
}

SynthData gen_synth(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t l = cfg.latent_dim;
  const std::size_t dv = cfg.visual_dim;
  const std::size_t dt = cfg.text_dim;

  Rng mixer_rng(derive_seed(cfg.mixer_seed, "mixers"));
  Matrix av = mixer_rng.normal_matrix(dv, l);
  Matrix at = mixer_rng.normal_matrix(dt, l);
  if (cfg.mixer_shift > 0.0) {
    Rng shift_rng(derive_seed(cfg.seed, "mixer-shift"));
    av += shift_rng.normal_matrix(dv, l, cfg.mixer_shift);
    at += shift_rng.normal_matrix(dt, l, cfg.mixer_shift);
  }
  av = orthonormal_columns(std::move(av));
  at = orthonormal_columns(std::move(at));

  Rng proto_rng(derive_seed(cfg.seed, "prototypes"));
  const Matrix mu = proto_rng.normal_matrix(cfg.num_classes, l, 1.0) * cfg.class_separation;

  const double sq_tau = std::sqrt(cfg.text_informativeness);
  const double sq_rest = std::sqrt(1.0 - cfg.text_informativeness);
  const double sq_indep = std::sqrt(1.0 - cfg.rho * cfg.rho);

  // Every sample consumes the same draws in the same order whatever the
  // config values, so configs differing only in rho, tau, noise or
  // separation share their random numbers.
  Rng rng(derive_seed(cfg.seed, "samples"));
  SynthData out;
  out.dataset.samples.reserve(cfg.num_classes * cfg.samples_per_class);
  std::vector<double> z(l), t(l), ev(dv), et(dt);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t n = 0; n < cfg.samples_per_class; ++n) {
      for (std::size_t k = 0; k < l; ++k) z[k] = mu(c, k) + rng.normal();
      for (std::size_t k = 0; k < l; ++k) t[k] = cfg.rho * (sq_tau * z[k] + sq_rest * rng.normal());
      for (std::size_t k = 0; k < l; ++k) t[k] += sq_indep * rng.normal();
      for (double& v : ev) v = rng.normal();
      for (double& v : et) v = rng.normal();

      MultimodalSample s;
      s.id = cfg.id_prefix + "-" + std::to_string(c) + "-" + std::to_string(n);
      s.label = cfg.label_offset + static_cast<int>(c);
      s.visual.assign(dv, 0.0);
      s.text.assign(dt, 0.0);
      for (std::size_t i = 0; i < dv; ++i) {
        double acc = cfg.visual_noise * ev[i];
        for (std::size_t k = 0; k < l; ++k) acc += av(i, k) * z[k];
        s.visual[i] = acc;
      }
      for (std::size_t i = 0; i < dt; ++i) {
        double acc = cfg.text_noise * et[i];
        for (std::size_t k = 0; k < l; ++k) acc += at(i, k) * t[k];
        s.text[i] = acc;
      }
      out.dataset.samples.push_back(std::move(s));
    }
  }

  GroundTruth& g = out.truth;
  g.prototypes = mu;
  g.visual_mixer = std::move(av);
  g.text_mixer = std::move(at);
  g.rho = cfg.rho;
  g.text_informativeness = cfg.text_informativeness;
  g.canonical_correlations = population_correlations(cfg, mu);
  g.bayes = bayes_accuracy(cfg, mu);
  return out;
}

BayesAccuracy bayes_accuracy(const SynthConfig& cfg, const Matrix& prototypes, std::size_t draws) {
  // Projecting onto the mixer columns loses nothing, so the classifier works
  // on a = Av' visual ~ N(mu_c, va I) and b = At' text ~ N(s mu_c, vb I) with
  // per-coordinate cross-covariance s.
  const std::size_t nc = prototypes.rows();
  const std::size_t l = prototypes.cols();
  const double s = cfg.rho * std::sqrt(cfg.text_informativeness);
  const double va = 1.0 + cfg.visual_noise * cfg.visual_noise;
  const double vb = 1.0 + cfg.text_noise * cfg.text_noise;
  const double det = va * vb - s * s + 1e-12;
  const double ia = vb / det;
  const double ib = va / det;
  const double iab = -s / det;

  Rng rng(derive_seed(cfg.seed, "bayes"));
  std::vector<double> a(l), b(l), la(nc), lb(nc), lj(nc);
  double acc_v = 0.0, acc_t = 0.0, acc_j = 0.0;
  auto max_posterior = [](std::vector<double>& logp) {
    const double m = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double v : logp) z += std::exp(v - m);
    return 1.0 / z;
  };
  for (std::size_t d = 0; d < draws; ++d) {
    const std::size_t c = rng.index(nc);
    for (std::size_t k = 0; k < l; ++k) {
      const double e = rng.normal();
      const double noise_a = cfg.visual_noise * rng.normal();
      const double u = rng.normal();
      const double w = rng.normal();
      const double noise_b = cfg.text_noise * rng.normal();
      const double z = prototypes(c, k) + e;
      a[k] = z + noise_a;
      b[k] = s * z + cfg.rho * std::sqrt(1.0 - cfg.text_informativeness) * u +
             std::sqrt(1.0 - cfg.rho * cfg.rho) * w + noise_b;
    }
    for (std::size_t j = 0; j < nc; ++j) {
      double qa = 0.0, qb = 0.0, qj = 0.0;
      for (std::size_t k = 0; k < l; ++k) {
        const double da = a[k] - prototypes(j, k);
        const double db = b[k] - s * prototypes(j, k);
        qa += da * da;
        qb += db * db;
        qj += ia * da * da + 2.0 * iab * da * db + ib * db * db;
      }
      la[j] = -0.5 * qa / va;
      lb[j] = -0.5 * qb / vb;
      lj[j] = -0.5 * qj;
    }
    acc_v += max_posterior(la);
    acc_t += max_posterior(lb);
    acc_j += max_posterior(lj);
  }
  const double n = static_cast<double>(draws);
  return {acc_v / n, acc_t / n, acc_j / n};
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"num_classes", c.num_classes},
       {"samples_per_class", c.samples_per_class},
       {"latent_dim", c.latent_dim},
       {"visual_dim", c.visual_dim},
       {"text_dim", c.text_dim},
       {"rho", c.rho},
       {"class_separation", c.class_separation},
       {"visual_noise", c.visual_noise},
       {"text_noise", c.text_noise},
       {"text_informativeness", c.text_informativeness},
       {"seed", c.seed},
       {"mixer_seed", c.mixer_seed},
       {"mixer_shift", c.mixer_shift},
       {"id_prefix", c.id_prefix},
       {"label_offset", c.label_offset}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  const std::string where = "synth";
  require_keys(j,
               {"num_classes", "samples_per_class", "latent_dim", "visual_dim", "text_dim", "rho",
                "class_separation", "visual_noise", "text_noise", "text_informativeness", "seed", "mixer_seed",
                "mixer_shift", "id_prefix", "label_offset"},
               where);
  read_optional(j, "num_classes", c.num_classes, where);
  read_optional(j, "samples_per_class", c.samples_per_class, where);
  read_optional(j, "latent_dim", c.latent_dim, where);
  read_optional(j, "visual_dim", c.visual_dim, where);
  read_optional(j, "text_dim", c.text_dim, where);
  read_optional(j, "rho", c.rho, where);
  read_optional(j, "class_separation", c.class_separation, where);
  read_optional(j, "visual_noise", c.visual_noise, where);
  read_optional(j, "text_noise", c.text_noise, where);
  read_optional(j, "text_informativeness", c.text_informativeness, where);
  read_optional(j, "seed", c.seed, where);
  read_optional(j, "mixer_seed", c.mixer_seed, where);
  read_optional(j, "mixer_shift", c.mixer_shift, where);
  read_optional(j, "id_prefix", c.id_prefix, where);
  read_optional(j, "label_offset", c.label_offset, where);
}

void to_json(nlohmann::json& j, const GroundTruth& g) {
  j = {{"prototypes", matrix_to_json(g.prototypes)},
       {"visual_mixer", matrix_to_json(g.visual_mixer)},
       {"text_mixer", matrix_to_json(g.text_mixer)},
       {"rho", g.rho},
       {"text_informativeness", g.text_informativeness},
       {"canonical_correlations", g.canonical_correlations},
       {"bayes_accuracy", {{"visual", g.bayes.visual}, {"text", g.bayes.text}, {"joint", g.bayes.joint}}}};
}

}  // namespace dccdi
