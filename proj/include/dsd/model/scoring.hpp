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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dsd/data/dataset.hpp"
#include "dsd/model/prompts.hpp"

namespace dsd {

enum class HeadMode { Uniform, Dynamic };
enum class Pooling { Lse, Max, Cosine };

inline std::string to_string(HeadMode m) { return m == HeadMode::Uniform ? "uniform" : "dynamic"; }
inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::Lse: return "lse";
    case Pooling::Max: return "max";
    case Pooling::Cosine: return "cosine";
  }
  return "";
}
inline HeadMode parse_head_mode(const std::string& s) {
  if (s == "uniform") return HeadMode::Uniform;
  if (s == "dynamic") return HeadMode::Dynamic;
  throw ConfigError("unknown head mode '" + s + "'");
}
inline Pooling parse_pooling(const std::string& s) {
  if (s == "lse") return Pooling::Lse;
  if (s == "max") return Pooling::Max;
  if (s == "cosine") return Pooling::Cosine;
  throw ConfigError("unknown pooling '" + s + "'");
}

struct ScoreConfig {
  double lambda = 5.0;
  std::vector<std::size_t> layers;  // empty = all layers
  HeadMode head_mode = HeadMode::Dynamic;
  Pooling pooling = Pooling::Lse;
  std::vector<double> noise_levels{0.4};
  bool ensemble = false;
  bool include_bos = false;
  double calib_scale = 1.0;
  double calib_bias = 0.0;

  static std::vector<double> ensemble_levels() { return {0.2, 0.4, 0.6, 0.8}; }

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (noise_levels.empty()) throw ConfigError("noise_levels must be nonempty");
    for (double v : noise_levels)
      if (!(v > 0.0 && v < 1.0)) throw ConfigError("noise levels must lie in (0, 1)");
  }

  Json to_json() const {
    return Json{{"lambda", lambda},
                {"layers", layers},
                {"head_mode", to_string(head_mode)},
                {"pooling", to_string(pooling)},
                {"noise_levels", noise_levels},
                {"ensemble", ensemble},
                {"include_bos", include_bos},
                {"calib_scale", calib_scale},
                {"calib_bias", calib_bias}};
  }
};

struct HeadScore {
  std::size_t layer = 0;
  std::size_t head = 0;
  double score = 0.0;   // s_{l,h}
  double weight = 0.0;  // within-layer head weight
};

struct MatchScore {
  double raw = 0.0;
  double calibrated = 0.5;
  std::vector<HeadScore> breakdown;    // single-level passes only
  std::vector<double> level_scores;    // raw score per noise level
};

/// Layer aggregation shared by the graph and value paths:
/// f = sum_k (w_k / |layers|) * s_k.
inline double aggregate(const std::vector<HeadScore>& breakdown, std::size_t n_layers) {
  double f = 0.0;
  for (const HeadScore& h : breakdown) f += (h.weight / static_cast<double>(n_layers)) * h.score;
  return f;
}

inline double sigmoid_value(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

namespace detail {

inline std::vector<std::size_t> selected_layers(const ScoreConfig& cfg, std::size_t available) {
  std::vector<std::size_t> out = cfg.layers;
  if (out.empty()) {
    out.resize(available);
    std::iota(out.begin(), out.end(), 0);
  }
  for (std::size_t l : out)
    if (l >= available) throw ConfigError("layer " + std::to_string(l) + " not available");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Cosine over the first min(d, d_tau) coordinates of the mean image token
/// and mean text token. Zero vectors score 0.
inline double pooled_cosine(const Tensor& image_tokens, const Tensor& text_tokens, bool include_bos) {
  const std::size_t k = std::min(image_tokens.cols(), text_tokens.cols());
  const std::size_t t0 = include_bos ? 0 : 1;
  if (text_tokens.rows() <= t0) throw ConfigError("no text tokens left after dropping BOS");
  std::vector<double> a(k, 0.0), b(k, 0.0);
  for (std::size_t i = 0; i < image_tokens.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) a[j] += image_tokens(i, j);
  for (std::size_t i = t0; i < text_tokens.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) b[j] += text_tokens(i, j);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    a[j] /= static_cast<double>(image_tokens.rows());
    b[j] /= static_cast<double>(text_tokens.rows() - t0);
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

/// Per-text-token LSE over image tokens (rows).
inline Var pool_lse(const Var& a, double lambda) { return logsumexp_over_rows(a, lambda); }

/// Per-text-token maximum over image tokens.
inline Var pool_max(const Var& a) { return max_over_rows(a); }

/// Cosine between the mean image token and mean text token over shared
/// coordinates.
inline double pool_cosine(const Tensor& r_x, const Tensor& r_y, bool include_bos = true) {
  return detail::pooled_cosine(r_x, r_y, include_bos);
}

/// s_{l,h}: mean over text tokens of the pooled attention column.
inline Var head_score(const Var& map, const ScoreConfig& cfg) {
  if (cfg.pooling == Pooling::Cosine) throw UsageError("head_score is undefined for cosine pooling");
  Var cols = map;
  if (!cfg.include_bos) {
    const std::size_t m = map.value().cols();
    if (m < 2) throw ConfigError("no text tokens left after dropping BOS");
    cols = slice_cols(map, 1, m - 1);
  }
  Var pooled = cfg.pooling == Pooling::Lse ? pool_lse(cols, cfg.lambda) : pool_max(cols);
  return mean(pooled);
}

/// Head attributions a_{l,h} = sum(A_{l,h} * df/dA_{l,h}) for the score f
/// built with uniform head weights. The maps are copied onto a private
/// tape, so this works for records from frozen (inference) passes.
inline std::vector<std::vector<double>> head_attributions(const std::vector<AttentionRecord>& records,
                                                          const ScoreConfig& cfg, std::size_t layers,
                                                          std::size_t heads) {
  if (records.empty()) throw UsageError("no attention records to attribute");
  const auto sel = detail::selected_layers(cfg, layers);
  Tape tape;
  std::vector<Var> leaves, scores;
  std::vector<double> coef;
  for (std::size_t l : sel)
    for (std::size_t h = 0; h < heads; ++h) {
      Var a = tape.leaf(records.at(l * heads + h).map.value(), true);
      leaves.push_back(a);
      scores.push_back(head_score(a, cfg));
      coef.push_back((1.0 / static_cast<double>(heads)) / static_cast<double>(sel.size()));
    }
  tape.backward(weighted_sum(scores, coef));
  std::vector<std::vector<double>> out(sel.size(), std::vector<double>(heads, 0.0));
  for (std::size_t li = 0; li < sel.size(); ++li)
    for (std::size_t h = 0; h < heads; ++h) {
      const Var& a = leaves[li * heads + h];
      if (!a.has_grad()) continue;
      for (std::size_t k = 0; k < a.value().size(); ++k) out[li][h] += a.value()[k] * a.grad()[k];
    }
  return out;
}

/// Weights over heads within each selected layer: uniform, or a softmax of
/// the gradient-times-activation attributions of the uniform-head score.
inline std::vector<std::vector<double>> head_weights(const std::vector<AttentionRecord>& records,
                                                     const ScoreConfig& cfg, std::size_t layers,
                                                     std::size_t heads) {
  if (records.size() != layers * heads) throw UsageError("expected one attention record per (layer, head)");
  const auto sel = detail::selected_layers(cfg, layers);
  std::vector<std::vector<double>> w(sel.size(), std::vector<double>(heads, 1.0 / static_cast<double>(heads)));
  if (cfg.head_mode == HeadMode::Uniform || cfg.pooling == Pooling::Cosine) return w;
  const auto attr = head_attributions(records, cfg, layers, heads);
  for (std::size_t li = 0; li < sel.size(); ++li) {
    const double mx = *std::max_element(attr[li].begin(), attr[li].end());
    double z = 0.0;
    for (std::size_t h = 0; h < heads; ++h) z += (w[li][h] = std::exp(attr[li][h] - mx));
    for (std::size_t h = 0; h < heads; ++h) w[li][h] /= z;
  }
  return w;
}

/// Score of one denoiser pass, as a graph node plus its breakdown.
struct ScoredPass {
  Var f;  // differentiable wrt the attention maps (head weights held fixed)
  MatchScore score;
};

inline ScoredPass score_pass(const DenoiserPass& pass, const ScoreConfig& cfg, std::size_t layers,
                             std::size_t heads) {
  cfg.validate();
  if (pass.records.empty()) throw ConfigError("no attention records to score");
  const auto sel = detail::selected_layers(cfg, layers);
  if (sel.empty()) throw ConfigError("empty layer selection");
  ScoredPass out;
  if (cfg.pooling == Pooling::Cosine) {
    for (std::size_t l : sel) {
      const double c = detail::pooled_cosine(pass.image_repr.at(l).value(), pass.text_repr.value(),
                                             cfg.include_bos);
      for (std::size_t h = 0; h < heads; ++h)
        out.score.breakdown.push_back({l, h, c, 1.0 / static_cast<double>(heads)});
    }
    out.score.raw = aggregate(out.score.breakdown, sel.size());
    out.f = pass.text_repr.tape()->constant(Tensor::scalar(out.score.raw));
  } else {
    const auto w = head_weights(pass.records, cfg, layers, heads);
    std::vector<Var> scores;
    std::vector<double> coef;
    for (std::size_t li = 0; li < sel.size(); ++li)
      for (std::size_t h = 0; h < heads; ++h) {
        Var s = head_score(pass.records[sel[li] * heads + h].map, cfg);
        scores.push_back(s);
        coef.push_back(w[li][h] / static_cast<double>(sel.size()));
        out.score.breakdown.push_back({sel[li], h, s.item(), w[li][h]});
      }
    out.f = weighted_sum(scores, coef);
    out.score.raw = out.f.item();
  }
  out.score.calibrated = sigmoid_value(cfg.calib_scale * out.score.raw + cfg.calib_bias);
  out.score.level_scores = {out.score.raw};
  return out;
}

/// Value-only convenience wrapper around score_pass.
inline MatchScore score_single_pass(const DenoiserPass& pass, const ScoreConfig& cfg,
                                    std::size_t layers, std::size_t heads) {
  return score_pass(pass, cfg, layers, heads).score;
}

// ---------------------------------------------------------------------------
// Model-level scoring
// ---------------------------------------------------------------------------

/// Noise stream for one instance and level. Keyed by the level value (not
/// its position in a list) so equal levels draw equal noise.
inline SplitMix64 level_noise_stream(std::uint64_t instance_seed, double level) {
  std::uint64_t bits;
  std::memcpy(&bits, &level, sizeof bits);
  return SplitMix64(instance_seed).split("score-noise").split(bits);
}

/// Runs one denoiser pass for (latent, caption) at a noise level on `tape`.
inline DenoiserPass run_pass(Tape& tape, const BoundParams& mp, const Model& model,
                             const Tensor& latent, const Caption& caption, double level,
                             std::uint64_t instance_seed, const BoundParams* prompts) {
  const NoiseSchedule sched = make_schedule(model.config);
  const std::size_t t = sched.timestep_for(level);
  const Tensor eps = sample_noise(model.config, level_noise_stream(instance_seed, level));
  Var z_t = tape.constant(noise_latent(latent, t, eps, sched));
  Var r_y = encode_text(mp, caption);
  if (prompts) {
    const auto offsets = conditional_prompt(*prompts, model.config, tape.constant(latent));
    return denoiser_forward(mp, model.config, z_t, t, r_y, &offsets);
  }
  return denoiser_forward(mp, model.config, z_t, t, r_y);
}

/// Score for one (image, caption). With `ensemble` set the raw score is the
/// arithmetic mean over all noise levels; otherwise the first level is used.
inline MatchScore score_caption(const Model& model, const Tensor& latent, const Caption& caption,
                                const ScoreConfig& cfg, std::uint64_t instance_seed,
                                const PromptParams* prompts = nullptr) {
  cfg.validate();
  const std::vector<double> levels =
      cfg.ensemble ? cfg.noise_levels : std::vector<double>{cfg.noise_levels.front()};
  MatchScore total;
  double sum = 0.0;
  for (double level : levels) {
    Tape tape(false);
    BoundParams mp(tape, model.params);
    std::optional<BoundParams> pp;
    if (prompts) pp.emplace(tape, prompts->params);
    DenoiserPass pass = run_pass(tape, mp, model, latent, caption, level, instance_seed,
                                 pp ? &*pp : nullptr);
    MatchScore s = score_single_pass(pass, cfg, model.config.layers, model.config.heads);
    total.level_scores.push_back(s.raw);
    sum += s.raw;
    if (levels.size() == 1) total.breakdown = std::move(s.breakdown);
  }
  total.raw = levels.size() == 1 ? total.level_scores.front() : sum / static_cast<double>(levels.size());
  total.calibrated = sigmoid_value(cfg.calib_scale * total.raw + cfg.calib_bias);
  return total;
}

/// Ensemble over noise levels (defaults to {0.2, 0.4, 0.6, 0.8} when the
/// config carries a single level).
inline MatchScore ensemble_score(const Model& model, const Image& image, const Caption& caption,
                                 ScoreConfig cfg, std::uint64_t instance_seed,
                                 const PromptParams* prompts = nullptr) {
  cfg.ensemble = true;
  if (cfg.noise_levels.size() <= 1) cfg.noise_levels = ScoreConfig::ensemble_levels();
  return score_caption(model, image_latent(model, image), caption, cfg, instance_seed, prompts);
}

struct MatchResult {
  std::vector<double> scores;
  std::vector<std::size_t> ranking;  // candidate indices, best first
  std::size_t argmax = 0;

  std::size_t rank_of(std::size_t candidate) const {
    return static_cast<std::size_t>(std::find(ranking.begin(), ranking.end(), candidate) - ranking.begin());
  }
  bool top_k(std::size_t candidate, std::size_t k) const { return rank_of(candidate) < k; }
};

/// Stable descending order; ties keep the lower candidate index first.
inline MatchResult rank_scores(std::vector<double> scores) {
  if (scores.empty()) throw ParameterError("no candidates to rank");
  MatchResult r;
  r.scores = std::move(scores);
  r.ranking.resize(r.scores.size());
  std::iota(r.ranking.begin(), r.ranking.end(), 0);
  std::stable_sort(r.ranking.begin(), r.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  r.argmax = r.ranking.front();
  return r;
}

/// Scores every candidate against one image with the instance's noise.
inline MatchResult match_candidates(const Model& model, const Image& image,
                                    const std::vector<Caption>& candidates, const ScoreConfig& cfg,
                                    std::uint64_t instance_seed,
                                    const PromptParams* prompts = nullptr) {
  if (candidates.empty()) throw ParameterError("match_candidates: no candidates");
  const Tensor latent = image_latent(model, image);
  std::vector<double> scores;
  for (const Caption& c : candidates)
    scores.push_back(score_caption(model, latent, c, cfg, instance_seed, prompts).raw);
  return rank_scores(std::move(scores));
}

}  // namespace dsd
