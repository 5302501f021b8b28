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

#include <cmath>
#include <cstring>
#include <numeric>

#include <gtest/gtest.h>

#include "dsd/model/adapt.hpp"
#include "dsd/numerics/gradcheck.hpp"

using namespace dsd;

namespace {

Model small_model(std::uint64_t seed) {
  ModelConfig c;
  c.layers = 2;
  return init_model(c, seed);
}

std::uint64_t checksum(const ParamMap& p) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& [name, t] : p)
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 0x100000001B3ULL;
    }
  return h;
}

double scalar_loss(const std::function<Var(Tape&)>& f) {
  Tape tape(false);
  return f(tape).item();
}

}  // namespace

TEST(Losses, BinaryClosedForms) {
  EXPECT_NEAR(scalar_loss([](Tape& t) { return binary_loss(t.constant(Tensor::scalar(1.0)), 1.0); }), 0.0, 1e-11);
  EXPECT_NEAR(scalar_loss([](Tape& t) { return binary_loss(t.constant(Tensor::scalar(0.5)), 1.0); }), std::log(2.0),
              1e-12);
  EXPECT_NEAR(scalar_loss([](Tape& t) { return binary_loss(t.constant(Tensor::scalar(0.5)), 0.0); }), std::log(2.0),
              1e-12);
  EXPECT_NEAR(scalar_loss([](Tape& t) { return binary_loss(t.constant(Tensor::scalar(0.0)), 1.0); }),
              -std::log(1e-12), 1e-9);
  EXPECT_THROW(scalar_loss([](Tape& t) { return binary_loss(t.constant(Tensor::scalar(0.5)), 2.0); }), UsageError);
}

TEST(Losses, MulticlassUniformIsLogC) {
  for (std::size_t c : {2, 4, 10}) {
    EXPECT_NEAR(scalar_loss([&](Tape& t) { return multiclass_loss(t.constant(Tensor({c}, 0.37)), c - 1); }),
                std::log(static_cast<double>(c)), 1e-12);
  }
  EXPECT_THROW(scalar_loss([](Tape& t) { return multiclass_loss(t.constant(Tensor({4}, 0.0)), 4); }), UsageError);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  SplitMix64 rng(1);
  EXPECT_LE(finite_diff_check([](Tape&, const Var& x) { return multiclass_loss(x, 2); }, randn({5}, rng)), 1e-6);
  EXPECT_LE(finite_diff_check([](Tape&, const Var& x) { return binary_loss(sigmoid(x), 1.0); }, Tensor::scalar(0.3)),
            1e-6);
}

TEST(Prompts, ZeroMappingAndBaseGiveZeroOffsets) {
  const ModelConfig c;
  PromptParams pp = init_prompts(c, 2);
  SplitMix64 rng(3);
  Tape tape(false);
  BoundParams p(tape, pp.params);
  for (const PromptOffset& o : conditional_prompt(p, c, tape.constant(randn({64, 32}, rng)))) {
    EXPECT_EQ(o.key.value(), Tensor({32, 32}, 0.0));
    EXPECT_EQ(o.value.value(), Tensor({32, 32}, 0.0));
  }
}

TEST(Prompts, ZeroMappingReturnsBasePrompt) {
  const ModelConfig c;
  PromptParams pp = init_prompts(c, 4);
  SplitMix64 rng(5);
  pp.params[prompt_param(1, "key")] = randn({32, 32}, rng);
  Tape tape(false);
  BoundParams p(tape, pp.params);
  for (int k = 0; k < 2; ++k) {
    const auto off = conditional_prompt(p, c, tape.constant(randn({64, 32}, rng)));
    EXPECT_EQ(off[1].key.value(), pp.params[prompt_param(1, "key")]);
  }
}

TEST(Prompts, TwoUnitTrunkMatchesMatrixExpansion) {
  ModelConfig c;
  c.layers = 1;
  c.heads = 1;
  c.head_dim = 2;
  c.model_dim = 2;
  c.text_dim = 2;
  PromptParams pp = init_prompts(c, 6, 2);
  pp.params["prompt.map.trunk"] = Tensor::matrix({{0.5, -1.0}, {0.25, 2.0}});
  pp.params["prompt.map.trunk_bias"] = Tensor({2}, std::vector<double>{0.1, -0.2});
  pp.params[prompt_param(0, "key")] = Tensor::matrix({{1, 2}, {3, 4}});
  SplitMix64 rng(7);
  const Tensor mk = randn({2, 4}, rng);
  pp.params[prompt_param(0, "map_key")] = mk;
  const Tensor x = Tensor::matrix({{1.0, 2.0}, {3.0, -2.0}, {-1.0, 0.0}});
  Tape tape(false);
  BoundParams p(tape, pp.params);
  const Tensor got = conditional_prompt(p, c, tape.constant(x))[0].key.value();
  // pooled = (1, 0); hidden = tanh(pooled W + b)
  const double h0 = std::tanh(0.5 + 0.1), h1 = std::tanh(-1.0 - 0.2);
  const double base[4] = {1, 2, 3, 4};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(got[k], base[k] + h0 * mk(0, k) + h1 * mk(1, k), 1e-12);
  EXPECT_THROW(conditional_prompt(p, c, tape.constant(Tensor({3, 5}))), DimensionError);
}

TEST(Tune, ZeroStepsLeaveZeroShotScores) {
  const Model m = small_model(8);
  const auto data = build_dataset(4, 3, 3, 9);
  TuneConfig tc;
  tc.steps = 0;
  const TuneResult r = few_shot_tune(m, data.train, tc, ScoreConfig{});
  EXPECT_TRUE(r.loss_trace.empty());
  const auto with = score_table_many(m, &r.params, data.eval, {ScoreConfig{}});
  const auto without = score_table_many(m, nullptr, data.eval, {ScoreConfig{}});
  EXPECT_EQ(with, without);
}

TEST(Tune, LossDecreasesAndBackboneUntouched) {
  const Model m = small_model(10);
  const auto data = build_dataset(8, 0, 2, 11);
  const std::uint64_t before = checksum(m.params);
  TuneConfig tc;
  tc.shots = 8;
  tc.steps = 200;
  tc.batch_size = 8;
  ScoreConfig sc;
  sc.head_mode = HeadMode::Uniform;
  const TuneResult r = few_shot_tune(m, data.train, tc, sc);
  ASSERT_EQ(r.loss_trace.size(), 200u);
  const double initial = evaluate_loss(m, init_prompts(m.config, tc.seed, tc.mapping_hidden), data.train, sc,
                                       LossMode::Multiclass);
  const double final_loss = evaluate_loss(m, r.params, data.train, sc, LossMode::Multiclass);
  EXPECT_LT(final_loss, initial);
  EXPECT_EQ(checksum(m.params), before);
}

TEST(Tune, DeterministicGivenSeed) {
  const Model m = small_model(12);
  const auto data = build_dataset(4, 0, 2, 13);
  TuneConfig tc;
  tc.steps = 3;
  tc.batch_size = 2;
  tc.loss_mode = LossMode::Binary;
  const TuneResult a = few_shot_tune(m, data.train, tc, ScoreConfig{});
  const TuneResult b = few_shot_tune(m, data.train, tc, ScoreConfig{});
  EXPECT_EQ(a.params.params, b.params.params);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Tune, OnlyPromptParametersReceiveGradients) {
  const Model m = small_model(14);
  const auto data = build_dataset(1, 0, 2, 15);
  const PromptParams pp = init_prompts(m.config, 16);
  Tape tape;
  BoundParams mp(tape, m.params);
  BoundParams p(tape, pp.params, is_prompt_param);
  const Var loss = instance_loss(tape, mp, p, m, data.train[0], image_latent(m, data.train[0].image()),
                                 ScoreConfig{}, LossMode::Multiclass, 17);
  tape.backward(loss);
  EXPECT_TRUE(mp.grads().empty());
  const ParamMap g = p.grads();
  EXPECT_EQ(g.size(), pp.params.size());
  double norm = 0.0;
  for (double v : g.at(prompt_param(0, "map_key")).data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Evaluate, IdealAndRandomScorers) {
  const auto data = build_dataset(0, 1000, 10, 18);
  ScoreTable ideal, random;
  SplitMix64 rng(19);
  for (const auto& inst : data.eval) {
    std::vector<double> s(10, 0.0), r(10);
    s[inst.true_index] = 1.0;
    for (double& v : r) v = rng.uniform();
    ideal.push_back(s);
    random.push_back(r);
  }
  const EvalMetrics best = metrics_from_scores(data.eval, ideal);
  EXPECT_EQ(best.top1, 1.0);
  EXPECT_EQ(best.top5, 1.0);
  const EvalMetrics chance = metrics_from_scores(data.eval, random);
  const double n = 1000.0;
  EXPECT_NEAR(chance.top1, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / n));
  EXPECT_NEAR(chance.top5, 0.5, 3.0 * std::sqrt(0.5 * 0.5 / n));
  EXPECT_THROW(metrics_from_scores({}, {}), ParameterError);
}

TEST(Evaluate, PerSlotAccuracyOnBinaryInstances) {
  const auto data = build_dataset(0, 300, 2, 20);
  ScoreTable s;
  std::size_t subject = 0;
  for (const auto& inst : data.eval) {
    const auto slot = mutated_slot(inst.positive(), inst.candidates[1 - inst.true_index]);
    // Right on subject negatives only.
    std::vector<double> row(2, 0.0);
    row[*slot == Slot::Subject ? inst.true_index : 1 - inst.true_index] = 1.0;
    subject += *slot == Slot::Subject;
    s.push_back(row);
  }
  const EvalMetrics m = metrics_from_scores(data.eval, s);
  EXPECT_EQ(m.per_slot.at("subject"), 1.0);
  EXPECT_EQ(m.per_slot.at("object"), 0.0);
  EXPECT_EQ(m.per_slot.at("predicate"), 0.0);
  EXPECT_NEAR(m.top1, static_cast<double>(subject) / 300.0, 1e-12);
}

TEST(Evaluate, ThreadedScoringIsIdentical) {
  const Model m = small_model(21);
  const auto data = build_dataset(0, 6, 3, 22);
  const auto serial = score_table_many(m, nullptr, data.eval, {ScoreConfig{}});
  setenv("DSD_THREADS", "3", 1);
  const auto threaded = score_table_many(m, nullptr, data.eval, {ScoreConfig{}});
  unsetenv("DSD_THREADS");
  EXPECT_EQ(serial, threaded);
}
