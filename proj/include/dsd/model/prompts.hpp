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

#include <string>
#include <vector>

#include "dsd/model/diffusion.hpp"

namespace dsd {

/// Input-conditioned additive prompts on the key/value projections.
///
/// Per layer there is a base prompt for W^k and W^v (shaped like the
/// projection, so head h owns its column slice) and a mapping network that
/// turns the mean-pooled image latent into offsets:
///
///   hidden  = tanh(mean_rows(z0) * trunk + trunk_bias)
///   p_k(x)  = p_k + reshape(hidden * map_k)     (same for v)
///
/// The output maps and base prompts start at zero, so a fresh PromptParams
/// leaves the denoiser untouched; the trunk is random so gradients reach
/// the output maps from the first step. Calibration (scale a, bias b)
/// turns raw scores into probabilities sigmoid(a f + b).
struct PromptParams {
  ParamMap params;

  double calib_scale() const { return params.at("prompt.calib_scale").item(); }
  double calib_bias() const { return params.at("prompt.calib_bias").item(); }
};

inline std::string prompt_param(std::size_t layer, const char* name) {
  return "prompt.block" + std::to_string(layer) + "." + name;
}

inline std::map<std::string, Shape> prompt_shapes(const ModelConfig& c, std::size_t hidden) {
  const std::size_t dt = c.text_dim, d = c.model_dim;
  std::map<std::string, Shape> s;
  s["prompt.map.trunk"] = {d, hidden};
  s["prompt.map.trunk_bias"] = {hidden};
  s["prompt.calib_scale"] = {};
  s["prompt.calib_bias"] = {};
  for (std::size_t l = 0; l < c.layers; ++l) {
    s[prompt_param(l, "key")] = {dt, d};
    s[prompt_param(l, "value")] = {dt, d};
    s[prompt_param(l, "map_key")] = {hidden, dt * d};
    s[prompt_param(l, "map_value")] = {hidden, dt * d};
  }
  return s;
}

inline PromptParams init_prompts(const ModelConfig& c, std::uint64_t seed, std::size_t hidden = 32) {
  PromptParams p;
  const SplitMix64 root = SplitMix64(seed).split("prompt-init");
  for (const auto& [name, shape] : prompt_shapes(c, hidden)) {
    if (name == "prompt.map.trunk") {
      SplitMix64 rng = root.split(name);
      p.params[name] = randn(shape, rng, 1.0 / std::sqrt(static_cast<double>(shape[0])));
    } else if (name == "prompt.calib_scale") {
      p.params[name] = Tensor::scalar(1.0);
    } else {
      p.params[name] = Tensor(shape, 0.0);
    }
  }
  return p;
}

/// Checks shapes against a model config; returns the mapping width.
inline std::size_t validate_prompts(const PromptParams& p, const ModelConfig& c) {
  auto it = p.params.find("prompt.map.trunk");
  if (it == p.params.end() || it->second.rank() != 2) throw ConfigError("prompt params missing 'prompt.map.trunk'");
  const std::size_t hidden = it->second.shape()[1];
  for (const auto& [name, shape] : prompt_shapes(c, hidden)) {
    auto f = p.params.find(name);
    if (f == p.params.end()) throw ConfigError("prompt params missing '" + name + "'");
    if (f->second.shape() != shape) {
      throw DimensionError("prompt tensor '" + name + "' has shape " + shape_str(f->second.shape()) +
                           ", expected " + shape_str(shape));
    }
  }
  return hidden;
}

/// Per-layer key/value offsets conditioned on the image latent [N x d].
inline std::vector<PromptOffset> conditional_prompt(const BoundParams& pp, const ModelConfig& c,
                                                    const Var& x_latent) {
  if (x_latent.value().rank() != 2 || x_latent.value().cols() != c.model_dim) {
    throw DimensionError("conditional_prompt: latent must have width " + std::to_string(c.model_dim));
  }
  Var pooled = mean_rows(x_latent);
  Var hidden = tanh(add_row(matmul(pooled, pp["prompt.map.trunk"]), pp["prompt.map.trunk_bias"]));
  const Shape w{c.text_dim, c.model_dim};
  std::vector<PromptOffset> out;
  for (std::size_t l = 0; l < c.layers; ++l) {
    Var pk = reshape(matmul(hidden, pp[prompt_param(l, "map_key")]), w);
    Var pv = reshape(matmul(hidden, pp[prompt_param(l, "map_value")]), w);
    out.push_back({add(pp[prompt_param(l, "key")], pk), add(pp[prompt_param(l, "value")], pv)});
  }
  return out;
}

}  // namespace dsd
