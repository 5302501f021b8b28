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
#include <string>
#include <utility>
#include <vector>

#include "dsd/harness/report.hpp"
#include "dsd/model/adapt.hpp"

namespace dsd {

/// Zero-shot calibration: a = 1 and b = -median of raw scores over every
/// candidate of the first `batch` instances. Ranking is unaffected.
inline ScoreConfig calibrate_zero_shot(const Model& model, const std::vector<MatchInstance>& data,
                                       ScoreConfig cfg, std::size_t batch = 16) {
  if (data.empty()) throw ParameterError("calibration batch is empty");
  const std::vector<MatchInstance> head(data.begin(), data.begin() + std::min(batch, data.size()));
  std::vector<double> raw;
  const auto tables = score_table_many(model, nullptr, head, {cfg});
  for (const auto& row : tables.front())
    raw.insert(raw.end(), row.begin(), row.end());
  std::sort(raw.begin(), raw.end());
  const std::size_t n = raw.size();
  const double median = n % 2 ? raw[n / 2] : 0.5 * (raw[n / 2 - 1] + raw[n / 2]);
  cfg.calib_scale = 1.0;
  cfg.calib_bias = -median;
  return cfg;
}

/// Score config that carries a tuned calibration (a, b).
inline ScoreConfig with_tuned_calibration(ScoreConfig cfg, const PromptParams& p) {
  cfg.calib_scale = p.params.at("prompt.calib_scale")[0];
  cfg.calib_bias = p.params.at("prompt.calib_bias")[0];
  return cfg;
}

enum class AblationAxis { Layers, Heads, Pooling, Noise };

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "layers") return AblationAxis::Layers;
  if (s == "heads") return AblationAxis::Heads;
  if (s == "pooling") return AblationAxis::Pooling;
  if (s == "noise") return AblationAxis::Noise;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

inline std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::Layers: return "layers";
    case AblationAxis::Heads: return "heads";
    case AblationAxis::Pooling: return "pooling";
    case AblationAxis::Noise: return "noise";
  }
  return "";
}

struct AblationVariant {
  std::string label;
  ScoreConfig config;
};

/// Variants along one axis; everything else stays at `base`. The first
/// variant is always the default setting.
inline std::vector<AblationVariant> ablation_variants(AblationAxis axis, std::size_t layers,
                                                      const ScoreConfig& base = {}) {
  std::vector<AblationVariant> out;
  const auto add = [&](std::string label, auto&& edit) {
    ScoreConfig c = base;
    edit(c);
    out.push_back({std::move(label), std::move(c)});
  };
  switch (axis) {
    case AblationAxis::Layers: {
      add("all", [](ScoreConfig& c) { c.layers.clear(); });
      for (std::size_t l = 0; l < layers; ++l)
        add("layer " + std::to_string(l), [l](ScoreConfig& c) { c.layers = {l}; });
      if (layers >= 4) {
        const std::size_t half = layers / 2;
        add("first half", [&](ScoreConfig& c) {
          c.layers.clear();
          for (std::size_t l = 0; l < half; ++l) c.layers.push_back(l);
        });
        add("second half", [&](ScoreConfig& c) {
          c.layers.clear();
          for (std::size_t l = half; l < layers; ++l) c.layers.push_back(l);
        });
      }
      break;
    }
    case AblationAxis::Heads:
      add("dynamic", [](ScoreConfig& c) { c.head_mode = HeadMode::Dynamic; });
      add("uniform", [](ScoreConfig& c) { c.head_mode = HeadMode::Uniform; });
      break;
    case AblationAxis::Pooling:
      add("lse", [](ScoreConfig& c) { c.pooling = Pooling::Lse; });
      add("max", [](ScoreConfig& c) { c.pooling = Pooling::Max; });
      add("cosine", [](ScoreConfig& c) { c.pooling = Pooling::Cosine; });
      break;
    case AblationAxis::Noise:
      add("ensemble", [](ScoreConfig& c) {
        c.noise_levels = ScoreConfig::ensemble_levels();
        c.ensemble = true;
      });
      for (double v : ScoreConfig::ensemble_levels())
        add("level " + fixed(v, 1), [v](ScoreConfig& c) {
          c.noise_levels = {v};
          c.ensemble = false;
        });
      break;
  }
  return out;
}

struct AblationRow {
  std::string label;
  EvalMetrics metrics;
};

/// Evaluates every variant of an axis on the same instances and noise.
inline std::vector<AblationRow> run_ablation(const Model& model, const PromptParams* prompts,
                                             const std::vector<MatchInstance>& data,
                                             const std::vector<AblationVariant>& variants) {
  std::vector<ScoreConfig> cfgs;
  for (const auto& v : variants) cfgs.push_back(v.config);
  const auto tables = score_table_many(model, prompts, data, cfgs);
  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < variants.size(); ++k)
    rows.push_back({variants[k].label, metrics_from_scores(data, tables[k])});
  return rows;
}

inline TextTable metrics_table(const std::string& title, const std::vector<AblationRow>& rows) {
  TextTable t{title, {"setting", "top1 %", "top5 %", "pair subj %", "pair obj %", "pair pred %"}, {}};
  const auto slot = [](const EvalMetrics& m, const char* k) {
    auto it = m.pairwise_slot.find(k);
    return it == m.pairwise_slot.end() ? std::string("-") : percent(it->second);
  };
  for (const auto& r : rows)
    t.rows.push_back({r.label, percent(r.metrics.top1), percent(r.metrics.top5), slot(r.metrics, "subject"),
                      slot(r.metrics, "object"), slot(r.metrics, "predicate")});
  return t;
}

}  // namespace dsd
