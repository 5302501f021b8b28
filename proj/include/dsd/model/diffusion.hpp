// Copyright 2026 The dsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdlib>
#include <optional>
#include <vector>

#include "dsd/model/encoders.hpp"
#include "dsd/model/model.hpp"

namespace dsd {

/// Linear beta schedule. Index 0 is the clean latent (alpha_bar = 1).
struct NoiseSchedule {
  std::size_t timesteps = 0;
  std::vector<double> beta;       // beta[t], t in 1..T; beta[0] = 0
  std::vector<double> alpha_bar;  // prod_{s<=t} (1 - beta[s])

  double signal(std::size_t t) const { return std::sqrt(alpha_bar.at(t)); }
  double noise(std::size_t t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }

  /// Fractional noise level in (0, 1) to a timestep: round(level * T).
  std::size_t timestep_for(double level) const {
    if (!(level > 0.0 && level < 1.0)) throw ParameterError("noise level must lie in (0, 1)");
    return static_cast<std::size_t>(std::lround(level * static_cast<double>(timesteps)));
  }
};

inline NoiseSchedule make_schedule(std::size_t timesteps, double beta_min, double beta_max) {
  if (timesteps < 2) throw ParameterError("schedule needs at least two timesteps");
  if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0)) {
    throw ParameterError("schedule requires 0 < beta_min < beta_max < 1");
  }
  NoiseSchedule s;
  s.timesteps = timesteps;
  s.beta.assign(timesteps + 1, 0.0);
  s.alpha_bar.assign(timesteps + 1, 1.0);
  for (std::size_t t = 1; t <= timesteps; ++t) {
    s.beta[t] = beta_min + (beta_max - beta_min) * static_cast<double>(t - 1) /
                               static_cast<double>(timesteps - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

inline NoiseSchedule make_schedule(const ModelConfig& c) {
  return make_schedule(c.timesteps, c.beta_min, c.beta_max);
}

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
inline Tensor noise_latent(const Tensor& z0, std::size_t t, const Tensor& eps,
                           const NoiseSchedule& sched) {
  if (t > sched.timesteps) throw ParameterError("timestep out of range");
  if (z0.shape() != eps.shape()) throw DimensionError("noise_latent: z0 and eps shapes differ");
  const double a = sched.signal(t), b = sched.noise(t);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

/// Sinusoidal embedding of t -> [1 x dim].
inline Tensor timestep_embedding(std::size_t t, std::size_t dim) {
  Tensor e({1, dim});
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    e[2 * i] = std::sin(static_cast<double>(t) * freq);
    e[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

/// Cross-attention softmax map of one (layer, head): rows are image tokens,
/// columns text tokens.
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  Var map;
};

/// Additive offsets on one layer's key/value projection weights,
/// each [d_tau x d] with head h owning columns [h*d', (h+1)*d').
struct PromptOffset {
  Var key;
  Var value;
};

struct DenoiserPass {
  Var eps_hat;
  std::vector<AttentionRecord> records;  // layer-major, L*H entries
  std::vector<Var> image_repr;           // per layer, the image tokens entering attention
  Var text_repr;
};

/// epsilon-prediction network: L cross-attention blocks at one resolution.
///
/// Each block applies a residual self-projection to the image tokens,
/// multi-head cross-attention with queries from image tokens and keys and
/// values from the text tokens, and a residual feed-forward layer. The
/// timestep enters once, as a projected sinusoidal embedding added to every
/// image token. When `prompts` is given, layer l uses K/V weights
/// W + offset (zero offsets leave the pass bit-identical).
inline DenoiserPass denoiser_forward(const BoundParams& p, const ModelConfig& c, const Var& z_t,
                                     std::size_t t, const Var& r_y,
                                     const std::vector<PromptOffset>* prompts = nullptr) {
  Tape& tape = *z_t.tape();
  if (z_t.value().rank() != 2 || z_t.value().rows() != c.image_tokens ||
      z_t.value().cols() != c.model_dim) {
    throw DimensionError("denoiser: latent must be " + std::to_string(c.image_tokens) + "x" +
                         std::to_string(c.model_dim) + ", got " + shape_str(z_t.shape()));
  }
  if (r_y.value().rank() != 2 || r_y.value().cols() != c.text_dim) {
    throw DimensionError("denoiser: text representation width must be " + std::to_string(c.text_dim));
  }
  if (prompts && prompts->size() != c.layers) throw DimensionError("denoiser: one prompt offset per layer required");

  DenoiserPass out;
  out.text_repr = r_y;
  Var time = matmul(tape.constant(timestep_embedding(t, c.model_dim)), p["denoiser.time"]);
  Var h = add_row(matmul(z_t, p["denoiser.input"]), p["denoiser.input_bias"]);
  h = add_row(add(h, p["denoiser.position"]), time);

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  for (std::size_t l = 0; l < c.layers; ++l) {
    h = add(h, silu(add_row(matmul(h, p[block_param(l, "self")]), p[block_param(l, "self_bias")])));
    out.image_repr.push_back(h);

    Var wk = p[block_param(l, "key")];
    Var wv = p[block_param(l, "value")];
    if (prompts) {
      wk = add(wk, (*prompts)[l].key);
      wv = add(wv, (*prompts)[l].value);
    }
    Var q = matmul(h, p[block_param(l, "query")]);
    Var k = matmul(r_y, wk);
    Var v = matmul(r_y, wv);
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      const std::size_t off = hd * c.head_dim;
      Var a = softmax_rows(matmul_nt(slice_cols(q, off, c.head_dim), slice_cols(k, off, c.head_dim)),
                           attn_scale);
      out.records.push_back({l, hd, a});
      heads.push_back(matmul(a, slice_cols(v, off, c.head_dim)));
    }
    Var attn = heads.size() == 1 ? heads.front() : concat_cols(heads);
    h = add(h, add_row(matmul(attn, p[block_param(l, "out")]), p[block_param(l, "out_bias")]));
    Var ff = silu(add_row(matmul(h, p[block_param(l, "ff1")]), p[block_param(l, "ff1_bias")]));
    h = add(h, add_row(matmul(ff, p[block_param(l, "ff2")]), p[block_param(l, "ff2_bias")]));
  }
  out.eps_hat = add_row(matmul(h, p["denoiser.output"]), p["denoiser.output_bias"]);
  return out;
}

/// Seeded standard-normal noise for a latent of the model's shape.
inline Tensor sample_noise(const ModelConfig& c, SplitMix64 rng) {
  return randn({c.image_tokens, c.model_dim}, rng);
}

}  // namespace dsd
