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

// dsd: command-line front end for data generation, pretraining, scoring,
// prompt tuning, evaluation and ablations.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsd/harness/checkpoint.hpp"
#include "dsd/harness/experiments.hpp"
#include "dsd/model/pretrain.hpp"

using namespace dsd;

namespace {

struct ScoreFlags {
  double noise = 0.4;
  bool ensemble = false;
  std::vector<std::size_t> layers;
  std::string heads = "dynamic";
  std::string pool = "lse";
  double lambda = 5.0;
  bool include_bos = false;

  ScoreConfig build() const {
    ScoreConfig c;
    c.lambda = lambda;
    c.layers = layers;
    c.head_mode = parse_head_mode(heads);
    c.pooling = parse_pooling(pool);
    c.include_bos = include_bos;
    if (ensemble) {
      c.ensemble = true;
      c.noise_levels = ScoreConfig::ensemble_levels();
    } else {
      c.noise_levels = {noise};
    }
    c.validate();
    return c;
  }
};

void add_score_flags(CLI::App* app, ScoreFlags& f) {
  auto* noise = app->add_option("--noise", f.noise, "Noise level in (0, 1)")->capture_default_str();
  auto* ens = app->add_flag("--ensemble", f.ensemble, "Average over levels 0.2, 0.4, 0.6, 0.8");
  noise->excludes(ens);
  app->add_option("--layers", f.layers, "Comma-separated layer indices (default: all)")->delimiter(',');
  app->add_option("--heads", f.heads, "Head weighting")
      ->check(CLI::IsMember({"uniform", "dynamic"}))
      ->capture_default_str();
  app->add_option("--pool", f.pool, "Pooling over image tokens")
      ->check(CLI::IsMember({"lse", "max", "cosine"}))
      ->capture_default_str();
  app->add_option("--lambda", f.lambda, "LSE sharpness")->capture_default_str();
  app->add_flag("--include-bos", f.include_bos, "Keep the start token column");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os << text;
}

void emit(const RunReport& r, const std::string& path) {
  std::cout << r.text();
  if (!path.empty()) write_text(path, r.json_text());
}

Model checked_model(const std::string& path) {
  Model m = load_model(path);
  validate_model(m);
  return m;
}

Scene read_scene(const std::string& arg) {
  std::string text = arg;
  if (arg.find('{') == std::string::npos) {
    std::ifstream is(arg, std::ios::binary);
    if (!is) throw UsageError("cannot open scene file '" + arg + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    text = ss.str();
  }
  try {
    return scene_from_json(Json::parse(text));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("invalid scene JSON: ") + e.what());
  }
}

const std::vector<MatchInstance>& nonempty(const std::vector<MatchInstance>& v, const char* split) {
  if (v.empty()) throw UsageError(std::string("dataset has no ") + split + " instances");
  return v;
}

EvalMetrics eval_with_report(const Model& m, const PromptParams* prompts, const DatasetSplits& data,
                             ScoreConfig cfg, RunReport& r) {
  cfg = prompts ? with_tuned_calibration(cfg, *prompts)
                : (data.train.empty() ? cfg : calibrate_zero_shot(m, data.train, cfg));
  const EvalMetrics em = evaluate(m, prompts, nonempty(data.eval, "eval"), cfg);
  r.config["score"] = cfg.to_json();
  r.metrics = em.to_json();
  r.tables.push_back(metrics_table(prompts ? "tuned" : "zero-shot", {{"default", em}}));
  return em;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discriminative diffusion toy: image-text matching from cross-attention"};
  app.require_subcommand(1);

  // gen-data
  std::string out;
  std::size_t n_train = 5000, n_eval = 500, candidates = 4;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic matching dataset (JSON lines)");
  gen->add_option("--out", out, "Output path")->required();
  gen->add_option("--n-train", n_train)->capture_default_str();
  gen->add_option("--n-eval", n_eval)->capture_default_str();
  gen->add_option("--candidates", candidates, "Captions per instance")->capture_default_str();
  gen->add_option("--seed", seed)->capture_default_str();

  // pretrain
  std::string data_path, report;
  PretrainConfig pc;
  auto* pre = app.add_subcommand("pretrain", "Epsilon-prediction pretraining on the training split");
  pre->add_option("--data", data_path)->required();
  pre->add_option("--steps", pc.steps)->capture_default_str();
  pre->add_option("--seed", pc.seed)->capture_default_str();
  pre->add_option("--out", out, "Checkpoint path")->required();
  pre->add_option("--lr", pc.lr)->capture_default_str();
  pre->add_option("--batch", pc.batch_size)->capture_default_str();
  pre->add_option("--report", report, "Write the loss trace as JSON");

  // score
  std::string ckpt, scene_arg, caption, prompts_path;
  ScoreFlags sf;
  auto* score = app.add_subcommand("score", "Score one caption against one scene");
  score->add_option("--ckpt", ckpt)->required();
  score->add_option("--scene-json", scene_arg, "Scene JSON file or inline object")->required();
  score->add_option("--caption", caption)->required();
  score->add_option("--prompts", prompts_path, "Tuned prompt checkpoint");
  add_score_flags(score, sf);

  // tune
  TuneConfig tc;
  std::string loss_mode = "multiclass";
  auto* tune = app.add_subcommand("tune", "Few-shot prompt learning with a frozen backbone");
  tune->add_option("--ckpt", ckpt)->required();
  tune->add_option("--data", data_path)->required();
  tune->add_option("--shots", tc.shots)->capture_default_str();
  tune->add_option("--steps", tc.steps)->capture_default_str();
  tune->add_option("--seed", tc.seed)->capture_default_str();
  tune->add_option("--out", out, "Prompt checkpoint path")->required();
  tune->add_option("--lr", tc.lr)->capture_default_str();
  tune->add_option("--batch", tc.batch_size)->capture_default_str();
  tune->add_option("--init-scale", tc.init_scale, "Initial calibration scale a (0 standardizes raw scores)")->capture_default_str();
  tune->add_option("--loss", loss_mode)->check(CLI::IsMember({"binary", "multiclass"}))->capture_default_str();
  tune->add_option("--report", report, "Write the loss trace as JSON");

  // eval
  auto* ev = app.add_subcommand("eval", "Top-1/top-5 and per-slot accuracy on the eval split");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--prompts", prompts_path);
  ev->add_option("--data", data_path)->required();
  ev->add_option("--report", report)->required();
  add_score_flags(ev, sf);

  // ablate
  std::string axis;
  auto* abl = app.add_subcommand("ablate", "Sweep one scoring axis with everything else at defaults");
  abl->add_option("--ckpt", ckpt)->required();
  abl->add_option("--prompts", prompts_path);
  abl->add_option("--data", data_path)->required();
  abl->add_option("--axis", axis)->required()->check(CLI::IsMember({"layers", "heads", "pooling", "noise"}));
  abl->add_option("--report", report)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const DatasetSplits d = build_dataset(n_train, n_eval, candidates, seed);
      save_dataset(d, out);
      std::printf("wrote %zu train and %zu eval instances (C=%zu) to %s\n", d.train.size(), d.eval.size(),
                  candidates, out.c_str());
    } else if (*pre) {
      const DatasetSplits d = load_dataset(data_path);
      const ModelConfig mc;
      const std::size_t every = std::max<std::size_t>(1, pc.steps / 20);
      double acc = 0.0;
      const PretrainResult res =
          pretrain(positive_pairs(nonempty(d.train, "train")), mc, pc, [&](std::size_t s, double l, const Model&) {
            acc += l;
            if ((s + 1) % every == 0) {
              std::fprintf(stderr, "step %zu/%zu  loss %.5f\n", s + 1, pc.steps, acc / static_cast<double>(every));
              acc = 0.0;
            }
          });
      save_model(res.model, out, Json{{"pretrain", pc.to_json()}, {"train_pairs", d.train.size()}});
      RunReport r;
      r.command = "pretrain";
      r.config = Json{{"pretrain", pc.to_json()}, {"model", mc.to_json()}};
      r.seed = pc.seed;
      r.loss_traces["pretrain"] = res.loss_trace;
      if (!report.empty()) write_text(report, r.json_text());
      std::printf("saved %s after %zu steps\n", out.c_str(), pc.steps);
    } else if (*score) {
      const Model m = checked_model(ckpt);
      const Scene scene = read_scene(scene_arg);
      const Caption cap = tokenize(caption);
      ScoreConfig cfg = sf.build();
      std::optional<PromptParams> pp;
      if (!prompts_path.empty()) {
        pp = load_prompts(prompts_path, m.config);
        cfg = with_tuned_calibration(cfg, *pp);
      }
      const MatchScore s = score_caption(m, image_latent(m, render(scene)), cap, cfg, scene.seed, pp ? &*pp : nullptr);
      RunReport r;
      r.command = "score";
      r.config = Json{{"score", cfg.to_json()}, {"caption", detokenize(cap)}, {"scene", scene_json(scene)}};
      r.seed = scene.seed;
      r.metrics = Json{{"raw", s.raw}, {"calibrated", s.calibrated}, {"level_scores", s.level_scores}};
      TextTable t{"score", {"layer", "head", "s", "weight"}, {}};
      for (const HeadScore& h : s.breakdown)
        t.rows.push_back({std::to_string(h.layer), std::to_string(h.head), fixed(h.score, 6), fixed(h.weight, 4)});
      t.rows.push_back({"raw", "", fixed(s.raw, 6), ""});
      r.tables.push_back(t);
      std::cout << r.text();
      std::cout << canonical_json(r.metrics) << '\n';
    } else if (*tune) {
      const Model m = checked_model(ckpt);
      const DatasetSplits d = load_dataset(data_path);
      tc.loss_mode = parse_loss_mode(loss_mode);
      const TuneResult res = few_shot_tune(m, nonempty(d.train, "train"), tc, ScoreConfig{});
      save_prompts(res.params, m.config, out, Json{{"tune", tc.to_json()}});
      RunReport r;
      r.command = "tune";
      r.config = Json{{"tune", tc.to_json()}};
      r.seed = tc.seed;
      r.loss_traces["tune"] = res.loss_trace;
      if (!report.empty()) write_text(report, r.json_text());
      std::printf("saved %s; loss %.5f -> %.5f over %zu steps\n", out.c_str(),
                  res.loss_trace.empty() ? 0.0 : res.loss_trace.front(),
                  res.loss_trace.empty() ? 0.0 : res.loss_trace.back(), res.loss_trace.size());
    } else if (*ev) {
      const Model m = checked_model(ckpt);
      const DatasetSplits d = load_dataset(data_path);
      std::optional<PromptParams> pp;
      if (!prompts_path.empty()) pp = load_prompts(prompts_path, m.config);
      RunReport r;
      r.command = "eval";
      r.config = Json{{"ckpt", ckpt}, {"data", data_path}, {"prompts", prompts_path}};
      eval_with_report(m, pp ? &*pp : nullptr, d, sf.build(), r);
      emit(r, report);
    } else if (*abl) {
      const Model m = checked_model(ckpt);
      const DatasetSplits d = load_dataset(data_path);
      std::optional<PromptParams> pp;
      if (!prompts_path.empty()) pp = load_prompts(prompts_path, m.config);
      const AblationAxis ax = parse_axis(axis);
      const auto variants = ablation_variants(ax, m.config.layers);
      const auto rows = run_ablation(m, pp ? &*pp : nullptr, nonempty(d.eval, "eval"), variants);
      RunReport r;
      r.command = "ablate";
      Json cfgs = Json::object();
      for (const auto& v : variants) cfgs[v.label] = v.config.to_json();
      r.config = Json{{"axis", axis}, {"variants", cfgs}, {"ckpt", ckpt}, {"data", data_path},
                      {"prompts", prompts_path}};
      for (const auto& row : rows) r.metrics[row.label] = row.metrics.to_json();
      r.tables.push_back(metrics_table("ablation: " + axis, rows));
      emit(r, report);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
