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
#include <functional>
#include <string>
#include <vector>

#include "dsd/data/dataset.hpp"
#include "dsd/model/diffusion.hpp"

namespace dsd {

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double final_lr_fraction = 0.1;  // linear decay target
  std::uint64_t seed = 0;

  Json to_json() const {
    return Json{{"steps", steps}, {"batch_size", batch_size}, {"lr", lr},
                {"final_lr_fraction", final_lr_fraction}, {"seed", seed}};
  }
};

struct PretrainResult {
  Model model;
  std::vector<double> loss_trace;
};

/// Mean squared error between predicted and injected noise.
inline Var eps_mse(const Var& eps_hat, const Var& eps) {
  Var diff = sub(eps_hat, eps);
  return mean(mul(diff, diff));
}

/// Pretraining updates the text encoder and the denoiser; the linear image
/// encoder keeps its seeded initialization.
inline bool pretrain_trainable(const std::string& name) {
  return name.rfind("text.", 0) == 0 || name.rfind("denoiser.", 0) == 0;
}

/// Epsilon-prediction pretraining on (image, caption) pairs with Adam.
/// Each step draws a minibatch, a timestep in [1, T] and standard normal
/// noise per example, all from seed-keyed streams.
inline PretrainResult pretrain(const std::vector<std::pair<Scene, Caption>>& pairs,
                               const ModelConfig& config, const PretrainConfig& cfg,
                               const std::function<void(std::size_t, double, const Model&)>& on_step = {}) {
  if (pairs.empty()) throw ParameterError("pretrain: empty dataset");
  if (cfg.batch_size == 0) throw ParameterError("pretrain: batch_size must be positive");
  PretrainResult res{init_model(config, cfg.seed), {}};
  Model& model = res.model;
  const NoiseSchedule sched = make_schedule(config);

  std::vector<Tensor> latents;
  latents.reserve(pairs.size());
  for (const auto& [scene, caption] : pairs) latents.push_back(image_latent(model, render(scene)));

  Adam opt(cfg.lr);
  const SplitMix64 root = SplitMix64(cfg.seed).split("pretrain");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double frac = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 0.0;
    opt.set_lr(cfg.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * frac));
    SplitMix64 rng = root.split(step);

    Tape tape;
    BoundParams p(tape, model.params, pretrain_trainable);
    std::vector<Var> losses;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = rng.below(pairs.size());
      const std::size_t t = 1 + rng.below(config.timesteps);
      Tensor eps = sample_noise(config, rng.split(b));
      Var z_t = tape.constant(noise_latent(latents[idx], t, eps, sched));
      Var r_y = encode_text(p, pairs[idx].second);
      DenoiserPass pass = denoiser_forward(p, config, z_t, t, r_y);
      losses.push_back(eps_mse(pass.eps_hat, tape.constant(std::move(eps))));
    }
    Var loss = mean(concat(losses));
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw TrainingError("pretrain diverged at step " + std::to_string(step));
    tape.backward(loss);
    opt.step(model.params, p.grads());
    res.loss_trace.push_back(lv);
    if (on_step) on_step(step, lv, model);
  }
  return res;
}

/// Positive (scene, caption) pairs of a split.
inline std::vector<std::pair<Scene, Caption>> positive_pairs(const std::vector<MatchInstance>& v) {
  std::vector<std::pair<Scene, Caption>> out;
  out.reserve(v.size());
  for (const MatchInstance& m : v) out.emplace_back(m.scene, m.positive());
  return out;
}

}  // namespace dsd
