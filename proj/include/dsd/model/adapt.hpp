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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dsd/model/scoring.hpp"

namespace dsd {

enum class LossMode { Binary, Multiclass };

inline std::string to_string(LossMode m) { return m == LossMode::Binary ? "binary" : "multiclass"; }
inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "binary") return LossMode::Binary;
  if (s == "multiclass") return LossMode::Multiclass;
  throw ConfigError("unknown loss mode '" + s + "'");
}

inline constexpr double kProbFloor = 1e-12;

/// -(y log p + (1 - y) log(1 - p)) with p clamped to [1e-12, 1 - 1e-12].
inline Var binary_loss(const Var& prob, double label) {
  if (label != 0.0 && label != 1.0) throw UsageError("binary label must be 0 or 1");
  Var p = clamp(prob, kProbFloor, 1.0 - kProbFloor);
  if (label == 1.0) return scale(log(p), -1.0);
  return scale(log(add_scalar(scale(p, -1.0), 1.0)), -1.0);
}

/// Negative log-likelihood of `true_index` under softmax(scores).
inline Var multiclass_loss(const Var& scores, std::size_t true_index) {
  const std::size_t c = scores.value().size();
  if (true_index >= c) throw UsageError("label " + std::to_string(true_index) + " out of range for " +
                                        std::to_string(c) + " candidates");
  Var probs = softmax_rows(reshape(scores, {1, c}), 1.0);
  return scale(log(clamp(pick(probs, true_index), kProbFloor, 1.0 - kProbFloor)), -1.0);
}

struct TuneConfig {
  std::size_t shots = 64;
  std::size_t steps = 400;
  double lr = 3e-3;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::Multiclass;
  std::size_t mapping_hidden = 32;
  // Initial calibration scale a. Zero or negative standardizes the raw
  // scores of the training candidates instead (a = 1/std, b = -mean/std).
  double init_scale = 0.0;

  void validate() const {
    if (shots == 0) throw ConfigError("shots must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
  }

  Json to_json() const {
    return Json{{"shots", shots},       {"steps", steps},
                {"lr", lr},             {"momentum", momentum},
                {"batch_size", batch_size}, {"seed", seed},
                {"loss_mode", to_string(loss_mode)}, {"mapping_hidden", mapping_hidden},
                {"init_scale", init_scale}};
  }
};

struct TuneResult {
  PromptParams params;
  std::vector<double> loss_trace;
};

inline bool is_prompt_param(const std::string& name) { return name.rfind("prompt.", 0) == 0; }

/// Candidate scores per instance, one row per candidate.
using ScoreTable = std::vector<std::vector<double>>;

inline std::vector<ScoreTable> score_table_many(const Model& model, const PromptParams* prompts,
                                                const std::vector<MatchInstance>& data,
                                                const std::vector<ScoreConfig>& cfgs);

/// Matching loss of one instance under prompts bound on `tape`. Candidate
/// scores are graph nodes, so gradients reach the prompt parameters through
/// every attention map (head weights are held fixed per pass).
inline Var instance_loss(Tape& tape, const BoundParams& mp, const BoundParams& pp, const Model& model,
                         const MatchInstance& inst, const Tensor& latent, const ScoreConfig& score_cfg,
                         LossMode mode, std::uint64_t noise_seed) {
  const ModelConfig& c = model.config;
  const NoiseSchedule sched = make_schedule(c);
  const auto offsets = conditional_prompt(pp, c, tape.constant(latent));
  const Var& a = pp["prompt.calib_scale"];
  const Var& b = pp["prompt.calib_bias"];
  std::vector<Var> logits;
  const std::vector<double> levels =
      score_cfg.ensemble ? score_cfg.noise_levels : std::vector<double>{score_cfg.noise_levels.front()};
  for (const Caption& cap : inst.candidates) {
    std::vector<Var> per_level;
    for (double level : levels) {
      const std::size_t t = sched.timestep_for(level);
      const Tensor eps = sample_noise(c, level_noise_stream(noise_seed, level));
      Var z_t = tape.constant(noise_latent(latent, t, eps, sched));
      DenoiserPass pass = denoiser_forward(mp, c, z_t, t, encode_text(mp, cap), &offsets);
      per_level.push_back(score_pass(pass, score_cfg, c.layers, c.heads).f);
    }
    Var f = per_level.size() == 1
                ? per_level.front()
                : weighted_sum(per_level, std::vector<double>(per_level.size(), 1.0 / static_cast<double>(per_level.size())));
    logits.push_back(add(mul(a, f), b));
  }
  if (mode == LossMode::Multiclass) return multiclass_loss(concat(logits), inst.true_index);
  std::vector<Var> terms;
  for (std::size_t k = 0; k < logits.size(); ++k)
    terms.push_back(binary_loss(sigmoid(logits[k]), k == inst.true_index ? 1.0 : 0.0));
  return mean(concat(terms));
}

/// Few-shot prompt learning with momentum SGD on the prompt parameters only.
///
/// Training uses the first `shots` instances. Every step draws a minibatch
/// and fresh per-instance noise from seed-keyed streams, scores all
/// candidates with the prompted denoiser, and descends the matching loss.
/// The model parameters are bound as constants, so they receive no gradient.
inline TuneResult few_shot_tune(const Model& model, const std::vector<MatchInstance>& train,
                                const TuneConfig& cfg, const ScoreConfig& score_cfg) {
  cfg.validate();
  if (train.empty()) throw ParameterError("few_shot_tune: empty training split");
  const std::size_t shots = std::min(cfg.shots, train.size());
  TuneResult res{init_prompts(model.config, cfg.seed, cfg.mapping_hidden), {}};
  if (cfg.init_scale > 0.0) {
    res.params.params["prompt.calib_scale"] = Tensor::scalar(cfg.init_scale);
  } else {
    const std::vector<MatchInstance> head(train.begin(), train.begin() + shots);
    double sum = 0.0, sq = 0.0, n = 0.0;
    const auto tables = score_table_many(model, nullptr, head, {score_cfg});
    for (const auto& row : tables.front())
      for (double v : row) {
        sum += v;
        sq += v * v;
        n += 1.0;
      }
    const double mu = sum / n, sd = std::sqrt(std::max(sq / n - mu * mu, 0.0));
    const double a = sd > 1e-12 ? 1.0 / sd : 1.0;
    res.params.params["prompt.calib_scale"] = Tensor::scalar(a);
    res.params.params["prompt.calib_bias"] = Tensor::scalar(-mu * a);
  }

  std::vector<Tensor> latents;
  for (std::size_t i = 0; i < shots; ++i) latents.push_back(image_latent(model, train[i].image()));

  MomentumSgd opt(cfg.lr, cfg.momentum);
  const SplitMix64 root = SplitMix64(cfg.seed).split("tune");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    SplitMix64 rng = root.split(step);
    Tape tape;
    BoundParams mp(tape, model.params);
    BoundParams pp(tape, res.params.params, is_prompt_param);
    std::vector<Var> losses;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = rng.below(shots);
      losses.push_back(instance_loss(tape, mp, pp, model, train[idx], latents[idx], score_cfg,
                                     cfg.loss_mode, rng.next()));
    }
    Var loss = mean(concat(losses));
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw TrainingError("tuning loss is not finite at step " + std::to_string(step));
    tape.backward(loss);
    opt.step(res.params.params, pp.grads());
    res.loss_trace.push_back(lv);
  }
  return res;
}

/// Mean matching loss over instances with fixed per-instance noise.
inline double evaluate_loss(const Model& model, const PromptParams& params,
                            const std::vector<MatchInstance>& data, const ScoreConfig& score_cfg,
                            LossMode mode) {
  double total = 0.0;
  for (const MatchInstance& inst : data) {
    Tape tape(false);
    BoundParams mp(tape, model.params);
    BoundParams pp(tape, params.params);
    total += instance_loss(tape, mp, pp, model, inst, image_latent(model, inst.image()), score_cfg, mode,
                           inst.scene.seed)
                 .item();
  }
  return total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalMetrics {
  std::size_t instances = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  /// Accuracy on C = 2 instances grouped by the negative's mutated slot.
  std::map<std::string, double> per_slot;
  /// Fraction of (positive, negative) pairs ranked correctly, by slot.
  std::map<std::string, double> pairwise_slot;

  Json to_json() const {
    return Json{{"instances", instances}, {"top1", top1}, {"top5", top5},
                {"per_slot", per_slot},   {"pairwise_slot", pairwise_slot}};
  }
};

/// Worker count from DSD_THREADS (default 1).
inline std::size_t worker_count() {
  const char* env = std::getenv("DSD_THREADS");
  if (!env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 0 ? static_cast<std::size_t>(n) : 1;
}

/// Scores every (instance, candidate) under several configs, running one
/// denoiser pass per distinct noise level and reusing it across configs.
inline std::vector<ScoreTable> score_table_many(const Model& model, const PromptParams* prompts,
                                                const std::vector<MatchInstance>& data,
                                                const std::vector<ScoreConfig>& cfgs) {
  std::set<double> level_set;
  for (const ScoreConfig& c : cfgs) {
    c.validate();
    if (c.ensemble) level_set.insert(c.noise_levels.begin(), c.noise_levels.end());
    else level_set.insert(c.noise_levels.front());
  }
  std::vector<ScoreTable> out(cfgs.size(), ScoreTable(data.size()));
  const auto work = [&](std::size_t i) {
    const MatchInstance& inst = data[i];
    const Tensor latent = image_latent(model, inst.image());
    for (std::size_t k = 0; k < cfgs.size(); ++k) out[k][i].assign(inst.candidates.size(), 0.0);
    for (std::size_t ci = 0; ci < inst.candidates.size(); ++ci) {
      std::map<double, std::vector<double>> per_level;  // level -> raw per config
      for (double level : level_set) {
        Tape tape(false);
        BoundParams mp(tape, model.params);
        std::optional<BoundParams> pp;
        if (prompts) pp.emplace(tape, prompts->params);
        DenoiserPass pass = run_pass(tape, mp, model, latent, inst.candidates[ci], level, inst.scene.seed,
                                     pp ? &*pp : nullptr);
        auto& row = per_level[level];
        for (const ScoreConfig& c : cfgs) {
          const bool uses = c.ensemble ? std::find(c.noise_levels.begin(), c.noise_levels.end(), level) !=
                                             c.noise_levels.end()
                                       : c.noise_levels.front() == level;
          row.push_back(uses ? score_single_pass(pass, c, model.config.layers, model.config.heads).raw : 0.0);
        }
      }
      for (std::size_t k = 0; k < cfgs.size(); ++k) {
        const ScoreConfig& c = cfgs[k];
        if (!c.ensemble) {
          out[k][i][ci] = per_level.at(c.noise_levels.front())[k];
          continue;
        }
        double sum = 0.0;
        for (double level : c.noise_levels) sum += per_level.at(level)[k];
        out[k][i][ci] = c.noise_levels.size() == 1 ? per_level.at(c.noise_levels.front())[k]
                                                   : sum / static_cast<double>(c.noise_levels.size());
      }
    }
  };
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(1, data.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < data.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < data.size(); i += workers) work(i);
      });
    for (auto& t : pool) t.join();
  }
  return out;
}

/// Top-k and per-slot metrics from a score table.
inline EvalMetrics metrics_from_scores(const std::vector<MatchInstance>& data, const ScoreTable& scores) {
  if (data.empty()) throw ParameterError("evaluate: empty split");
  EvalMetrics m;
  m.instances = data.size();
  std::size_t hit1 = 0, hit5 = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> slot, pair;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const MatchInstance& inst = data[i];
    const MatchResult r = rank_scores(scores[i]);
    hit1 += r.top_k(inst.true_index, 1);
    hit5 += r.top_k(inst.true_index, 5);
    for (std::size_t c = 0; c < inst.candidates.size(); ++c) {
      const auto s = mutated_slot(inst.positive(), inst.candidates[c]);
      if (!s) continue;
      auto& p = pair[std::string(slot_name(*s))];
      ++p.second;
      p.first += r.rank_of(inst.true_index) < r.rank_of(c);
      if (inst.candidates.size() == 2) {
        auto& q = slot[std::string(slot_name(*s))];
        ++q.second;
        q.first += r.argmax == inst.true_index;
      }
    }
  }
  m.top1 = static_cast<double>(hit1) / static_cast<double>(data.size());
  m.top5 = static_cast<double>(hit5) / static_cast<double>(data.size());
  for (const auto& [k, v] : slot) m.per_slot[k] = static_cast<double>(v.first) / static_cast<double>(v.second);
  for (const auto& [k, v] : pair) m.pairwise_slot[k] = static_cast<double>(v.first) / static_cast<double>(v.second);
  return m;
}

inline EvalMetrics evaluate(const Model& model, const PromptParams* params,
                            const std::vector<MatchInstance>& data, const ScoreConfig& cfg) {
  if (data.empty()) throw ParameterError("evaluate: empty split");
  return metrics_from_scores(data, score_table_many(model, params, data, {cfg}).front());
}

}  // namespace dsd
