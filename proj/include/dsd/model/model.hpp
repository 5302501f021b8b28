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
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "dsd/canonical_json.hpp"
#include "dsd/numerics/autodiff.hpp"
#include "dsd/numerics/optim.hpp"
#include "dsd/numerics/rng.hpp"

namespace dsd {

/// Architecture hyperparameters shared by the encoders and the denoiser.
struct ModelConfig {
  std::size_t vocab_size = 12;
  std::size_t text_tokens = 6;    // M
  std::size_t text_dim = 32;      // d_tau
  std::size_t model_dim = 32;     // d
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t image_tokens = 64;  // N
  std::size_t layers = 4;         // L
  std::size_t heads = 4;          // H
  std::size_t head_dim = 8;       // d'
  std::size_t ff_hidden = 64;
  std::size_t timesteps = 100;    // T
  double beta_min = 1e-4;
  double beta_max = 0.1;

  std::size_t patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const {
    if (heads * head_dim != model_dim) throw ConfigError("heads * head_dim must equal model_dim");
    if (layers == 0 || heads == 0) throw ConfigError("layers and heads must be positive");
    if (text_tokens == 0 || image_tokens == 0) throw ConfigError("token counts must be positive");
  }

  Json to_json() const {
    return Json{{"vocab_size", vocab_size}, {"text_tokens", text_tokens},
                {"text_dim", text_dim},     {"model_dim", model_dim},
                {"image_size", image_size}, {"patch_size", patch_size},
                {"image_tokens", image_tokens}, {"layers", layers},
                {"heads", heads},           {"head_dim", head_dim},
                {"ff_hidden", ff_hidden},   {"timesteps", timesteps},
                {"beta_min", beta_min},     {"beta_max", beta_max}};
  }

  static ModelConfig from_json(const Json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.text_tokens = j.at("text_tokens").get<std::size_t>();
    c.text_dim = j.at("text_dim").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.image_tokens = j.at("image_tokens").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.ff_hidden = j.at("ff_hidden").get<std::size_t>();
    c.timesteps = j.at("timesteps").get<std::size_t>();
    c.beta_min = j.at("beta_min").get<double>();
    c.beta_max = j.at("beta_max").get<double>();
    c.validate();
    return c;
  }
};

/// Encoders plus denoiser: a config and a flat, name-ordered parameter map.
/// Names are namespaced by module ("text.", "image.", "denoiser.").
struct Model {
  ModelConfig config;
  ParamMap params;

  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model is missing tensor '" + name + "'");
    return it->second;
  }
};

inline std::string block_param(std::size_t layer, const char* name) {
  return "denoiser.block" + std::to_string(layer) + "." + name;
}

/// Expected tensor shapes for a config, keyed by name.
inline std::map<std::string, Shape> model_shapes(const ModelConfig& c) {
  const std::size_t d = c.model_dim, dt = c.text_dim;
  std::map<std::string, Shape> s;
  s["text.token_embedding"] = {c.vocab_size, dt};
  s["text.position_embedding"] = {c.text_tokens, dt};
  s["image.projection"] = {c.patch_dim(), d};
  s["image.position_embedding"] = {c.image_tokens, d};
  s["denoiser.input"] = {d, d};
  s["denoiser.input_bias"] = {d};
  s["denoiser.position"] = {c.image_tokens, d};
  s["denoiser.time"] = {d, d};
  s["denoiser.output"] = {d, d};
  s["denoiser.output_bias"] = {d};
  for (std::size_t l = 0; l < c.layers; ++l) {
    s[block_param(l, "self")] = {d, d};
    s[block_param(l, "self_bias")] = {d};
    s[block_param(l, "query")] = {d, d};
    s[block_param(l, "key")] = {dt, d};
    s[block_param(l, "value")] = {dt, d};
    s[block_param(l, "out")] = {d, d};
    s[block_param(l, "out_bias")] = {d};
    s[block_param(l, "ff1")] = {d, c.ff_hidden};
    s[block_param(l, "ff1_bias")] = {c.ff_hidden};
    s[block_param(l, "ff2")] = {c.ff_hidden, d};
    s[block_param(l, "ff2_bias")] = {d};
  }
  return s;
}

/// Checks that every expected tensor exists with the right shape.
inline void validate_model(const Model& m) {
  m.config.validate();
  for (const auto& [name, shape] : model_shapes(m.config)) {
    const Tensor& t = m.param(name);
    if (t.shape() != shape) {
      throw DimensionError("tensor '" + name + "' has shape " + shape_str(t.shape()) +
                           ", expected " + shape_str(shape));
    }
  }
}

/// Gaussian init scaled by 1/sqrt(fan_in); biases zero. Each tensor draws
/// from its own name-keyed stream.
inline Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m{config, {}};
  const SplitMix64 root = SplitMix64(seed).split("model-init");
  for (const auto& [name, shape] : model_shapes(config)) {
    SplitMix64 rng = root.split(name);
    const bool bias = shape.size() == 1;
    double stddev = bias ? 0.0 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
    if (name.find("embedding") != std::string::npos || name == "denoiser.position") stddev = 0.5;
    if (name == "image.position_embedding") stddev = 0.0;
    m.params[name] = stddev == 0.0 ? Tensor(shape, 0.0) : randn(shape, rng, stddev);
  }
  return m;
}

/// Parameters placed on one tape. Tensors selected by `trainable` are
/// gradient leaves; the rest are constants.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamMap& params,
              const std::function<bool(const std::string&)>& trainable = {}) {
    for (const auto& [name, t] : params) {
      const bool rg = trainable && trainable(name);
      vars_.emplace(name, tape.leaf(t, rg));
    }
  }

  const Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("missing tensor '" + name + "'");
    return it->second;
  }

  /// Gradients of all trainable tensors (zero when unreached).
  ParamMap grads() const {
    ParamMap g;
    for (const auto& [name, v] : vars_) {
      if (!v.requires_grad()) continue;
      g.emplace(name, v.has_grad() ? v.grad() : Tensor(v.shape(), 0.0));
    }
    return g;
  }

 private:
  std::map<std::string, Var> vars_;
};

}  // namespace dsd
