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

#include <gtest/gtest.h>

#include "dsd/model/scoring.hpp"
#include "dsd/numerics/gradcheck.hpp"
#include "oracles.hpp"

using namespace dsd;

namespace {

Tensor random_map(std::size_t n, std::size_t m, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tape tape(false);
  return softmax_rows(tape.constant(randn({n, m}, rng, 2.0))).value();
}

// A synthetic pass with the given maps on `tape`.
DenoiserPass synthetic_pass(Tape& tape, const std::vector<Tensor>& maps, std::size_t heads) {
  DenoiserPass pass;
  for (std::size_t k = 0; k < maps.size(); ++k)
    pass.records.push_back({k / heads, k % heads, tape.constant(maps[k])});
  return pass;
}

Model small_model(std::uint64_t seed) {
  ModelConfig c;
  c.layers = 2;
  return init_model(c, seed);
}

}  // namespace

TEST(Pooling, MaxExamples) {
  Tape tape(false);
  EXPECT_EQ(pool_max(tape.constant(Tensor::matrix({{0.2, 0.4}}))).value(), Tensor({2}, std::vector<double>{0.2, 0.4}));
  EXPECT_EQ(pool_max(tape.constant(Tensor::matrix({{0.2}, {0.7}, {0.1}}))).value()[0], 0.7);
}

TEST(Pooling, SandwichOnRandomMaps) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Tensor a = random_map(12, 5, seed);
    Tape tape(false);
    const Var va = tape.constant(a);
    const Tensor mx = pool_max(va).value(), lse = pool_lse(va, 5.0).value();
    for (std::size_t j = 0; j < 5; ++j) {
      ASSERT_LE(mx[j], lse[j] + 1e-15);
      ASSERT_LE(lse[j], mx[j] + std::log(12.0) / 5.0 + 1e-15);
    }
  }
}

TEST(Pooling, CosineCases) {
  const Tensor x = Tensor::matrix({{1, 2, 3}, {3, 2, 1}});
  EXPECT_NEAR(pool_cosine(x, Tensor::matrix({{2, 2, 2}})), 1.0, 1e-15);
  EXPECT_NEAR(pool_cosine(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 5}})), 0.0, 1e-15);
  EXPECT_EQ(pool_cosine(Tensor({2, 3}, 0.0), x), 0.0);
  SplitMix64 rng(3);
  const Tensor img = randn({5, 4}, rng), txt = randn({3, 6}, rng);
  double a[4] = {0}, b[4] = {0};
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t i = 0; i < 5; ++i) a[j] += img(i, j) / 5.0;
    for (std::size_t i = 0; i < 3; ++i) b[j] += txt(i, j) / 3.0;
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  EXPECT_NEAR(pool_cosine(img, txt), dot / std::sqrt(na * nb), 1e-12);
}

TEST(Score, OneLayerOneHeadIsMeanColumnLse) {
  const Tensor a = random_map(7, 4, 11);
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, {a}, 1);
  ScoreConfig cfg;
  const MatchScore s = score_single_pass(pass, cfg, 1, 1);
  double expect = 0.0;
  for (std::size_t j = 1; j < 4; ++j) expect += oracle::lse_column(oracle::to_mat(a), j, 5.0) / 3.0;
  EXPECT_NEAR(s.raw, expect, 1e-12);
  ASSERT_EQ(s.breakdown.size(), 1u);
  EXPECT_EQ(s.breakdown[0].weight, 1.0);
  EXPECT_DOUBLE_EQ(s.calibrated, sigmoid_value(s.raw));
}

TEST(Score, LayerMeanOfKnownScores) {
  std::vector<HeadScore> b = {{0, 0, 0.4, 1.0}, {1, 0, 0.6, 1.0}};
  EXPECT_DOUBLE_EQ(aggregate(b, 2), 0.5);
}

TEST(Score, BreakdownAggregatesBackExactly) {
  std::vector<Tensor> maps;
  for (std::uint64_t k = 0; k < 8; ++k) maps.push_back(random_map(9, 6, 20 + k));
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, maps, 4);
  for (HeadMode mode : {HeadMode::Uniform, HeadMode::Dynamic}) {
    ScoreConfig cfg;
    cfg.head_mode = mode;
    const MatchScore s = score_single_pass(pass, cfg, 2, 4);
    EXPECT_NEAR(aggregate(s.breakdown, 2), s.raw, 1e-15);
    for (std::size_t l = 0; l < 2; ++l) {
      double w = 0.0;
      for (const auto& h : s.breakdown)
        if (h.layer == l) {
          EXPECT_GE(h.weight, 0.0);
          w += h.weight;
        }
      EXPECT_NEAR(w, 1.0, 1e-9);
    }
  }
}

TEST(Score, UniformHeadsMatchFlatLoopOracle) {
  std::vector<Tensor> maps;
  std::vector<oracle::Mat> mats;
  for (std::uint64_t k = 0; k < 12; ++k) {
    maps.push_back(random_map(10, 6, 40 + k));
    mats.push_back(oracle::to_mat(maps.back()));
  }
  Tape tape(false);
  ScoreConfig cfg;
  cfg.head_mode = HeadMode::Uniform;
  EXPECT_NEAR(score_single_pass(synthetic_pass(tape, maps, 4), cfg, 3, 4).raw,
              oracle::uniform_score(mats, 3, 4, 5.0), 1e-10);
}

TEST(Score, LayerSelectionAndErrors) {
  std::vector<Tensor> maps;
  for (std::uint64_t k = 0; k < 8; ++k) maps.push_back(random_map(9, 6, 60 + k));
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, maps, 4);
  ScoreConfig cfg;
  cfg.head_mode = HeadMode::Uniform;
  cfg.layers = {1};
  std::vector<oracle::Mat> upper;
  for (std::size_t k = 4; k < 8; ++k) upper.push_back(oracle::to_mat(maps[k]));
  EXPECT_NEAR(score_single_pass(pass, cfg, 2, 4).raw, oracle::uniform_score(upper, 1, 4, 5.0), 1e-12);
  cfg.layers = {2};
  EXPECT_THROW(score_single_pass(pass, cfg, 2, 4), ConfigError);
  EXPECT_THROW(score_single_pass(DenoiserPass{}, ScoreConfig{}, 2, 4), ConfigError);
}

TEST(Score, IncludingBosChangesTheMean) {
  const Tensor a = random_map(5, 3, 70);
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, {a}, 1);
  ScoreConfig cfg;
  cfg.include_bos = true;
  double expect = 0.0;
  for (std::size_t j = 0; j < 3; ++j) expect += oracle::lse_column(oracle::to_mat(a), j, 5.0) / 3.0;
  EXPECT_NEAR(score_single_pass(pass, cfg, 1, 1).raw, expect, 1e-12);
}

TEST(DynamicHeads, SingleHeadWeightIsOne) {
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, {random_map(6, 4, 80)}, 1);
  const auto w = head_weights(pass.records, ScoreConfig{}, 1, 1);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], std::vector<double>{1.0});
}

TEST(DynamicHeads, HeadOnlyOnBosHasZeroAttribution) {
  // The BOS column is outside f, so a head attending only to BOS has
  // A * df/dA = 0 everywhere.
  Tensor bos({6, 4}, 0.0);
  for (std::size_t i = 0; i < 6; ++i) bos(i, 0) = 1.0;
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, {random_map(6, 4, 90), bos}, 2);
  const auto attr = head_attributions(pass.records, ScoreConfig{}, 1, 2);
  EXPECT_NE(attr[0][0], 0.0);
  EXPECT_EQ(attr[0][1], 0.0);
}

TEST(DynamicHeads, AttributionMatchesFiniteDifferences) {
  // a_h = sum(A_h * df/dA_h); for a 2x2 map compare with a central
  // difference of f along A_h itself: d/de f(A_h (1 + e)) at e = 0.
  const Tensor a0 = random_map(2, 2, 100), a1 = random_map(2, 2, 101);
  ScoreConfig cfg;
  cfg.include_bos = true;
  auto f = [&](const Tensor& m0, const Tensor& m1) {
    std::vector<oracle::Mat> mats = {oracle::to_mat(m0), oracle::to_mat(m1)};
    double s = 0.0;
    for (const auto& a : mats)
      for (std::size_t j = 0; j < 2; ++j) s += oracle::lse_column(a, j, 5.0) / 2.0 / 2.0;
    return s;
  };
  Tape tape(false);
  const auto attr = head_attributions(synthetic_pass(tape, {a0, a1}, 2).records, cfg, 1, 2);
  const double e = 1e-6;
  auto scaled = [](Tensor t, double s) {
    for (double& v : t.data()) v *= s;
    return t;
  };
  const double fd0 = (f(scaled(a0, 1 + e), a1) - f(scaled(a0, 1 - e), a1)) / (2 * e);
  const double fd1 = (f(a0, scaled(a1, 1 + e)) - f(a0, scaled(a1, 1 - e))) / (2 * e);
  EXPECT_LE(std::abs(attr[0][0] - fd0) / std::max(1.0, std::abs(fd0)), 1e-4);
  EXPECT_LE(std::abs(attr[0][1] - fd1) / std::max(1.0, std::abs(fd1)), 1e-4);
}

TEST(DynamicHeads, WeightsAreSoftmaxOfAttributions) {
  std::vector<Tensor> maps;
  for (std::uint64_t k = 0; k < 4; ++k) maps.push_back(random_map(8, 5, 110 + k));
  Tape tape(false);
  const DenoiserPass pass = synthetic_pass(tape, maps, 4);
  const auto attr = head_attributions(pass.records, ScoreConfig{}, 1, 4);
  const auto w = head_weights(pass.records, ScoreConfig{}, 1, 4);
  double z = 0.0;
  for (double a : attr[0]) z += std::exp(a);
  for (std::size_t h = 0; h < 4; ++h) EXPECT_NEAR(w[0][h], std::exp(attr[0][h]) / z, 1e-12);
}

TEST(Score, EndToEndGradientMatchesFiniteDifferences) {
  // f(A) with dynamic weights held fixed, differentiated wrt one map.
  std::vector<Tensor> maps;
  for (std::uint64_t k = 0; k < 4; ++k) maps.push_back(random_map(5, 4, 120 + k));
  Tape probe(false);
  const auto w = head_weights(synthetic_pass(probe, maps, 2).records, ScoreConfig{}, 2, 2);
  const ScalarFn fn = [&](Tape& t, const Var& x) {
    DenoiserPass pass = synthetic_pass(t, maps, 2);
    pass.records[1].map = softmax_rows(x);
    std::vector<Var> s;
    std::vector<double> c;
    for (std::size_t k = 0; k < 4; ++k) {
      s.push_back(head_score(pass.records[k].map, ScoreConfig{}));
      c.push_back(w[k / 2][k % 2] / 2.0);
    }
    return weighted_sum(s, c);
  };
  SplitMix64 rng(130);
  EXPECT_LE(finite_diff_check(fn, randn({5, 4}, rng)), 1e-4);
}

TEST(ModelScore, FullConfigMatchesLoopOracle) {
  const Model m = small_model(140);
  const Image img = render(generate_scene(141));
  const Caption cap = tokenize(generate_scene(142));
  ScoreConfig cfg;
  cfg.head_mode = HeadMode::Uniform;
  const MatchScore s = score_caption(m, image_latent(m, img), cap, cfg, 143);

  const NoiseSchedule sched = make_schedule(m.config);
  const Tensor eps = sample_noise(m.config, level_noise_stream(143, 0.4));
  const Tensor zt = noise_latent(image_latent(m, img), 40, eps, sched);
  Tape tape(false);
  BoundParams p(tape, m.params);
  const Tensor r_y = encode_text(p, cap).value();
  const auto ref = oracle::denoiser(m, oracle::to_mat(zt), 40, oracle::to_mat(r_y));
  EXPECT_NEAR(s.raw, oracle::uniform_score(ref.maps, 2, 4, 5.0), 1e-10);
}

TEST(ModelScore, EnsembleIsMeanOfLevels) {
  const Model m = small_model(150);
  const Tensor z = image_latent(m, render(generate_scene(151)));
  const Caption cap = tokenize(generate_scene(151));
  ScoreConfig one;
  std::vector<double> singles;
  for (double lv : ScoreConfig::ensemble_levels()) {
    one.noise_levels = {lv};
    singles.push_back(score_caption(m, z, cap, one, 152).raw);
  }
  ScoreConfig ens;
  ens.noise_levels = ScoreConfig::ensemble_levels();
  ens.ensemble = true;
  const MatchScore s = score_caption(m, z, cap, ens, 152);
  EXPECT_EQ(s.level_scores, singles);
  EXPECT_NEAR(s.raw, (singles[0] + singles[1] + singles[2] + singles[3]) / 4.0, 1e-15);

  ScoreConfig same;
  same.noise_levels = {0.6, 0.6};
  same.ensemble = true;
  EXPECT_EQ(score_caption(m, z, cap, same, 152).raw, singles[2]);
  EXPECT_EQ(ScoreConfig::ensemble_levels(), (std::vector<double>{0.2, 0.4, 0.6, 0.8}));
}

TEST(Match, RankingAndTieRule) {
  const MatchResult r = rank_scores({0.3, 0.9, 0.3, 0.5});
  EXPECT_EQ(r.ranking, (std::vector<std::size_t>{1, 3, 0, 2}));
  EXPECT_EQ(r.argmax, 1u);
  EXPECT_TRUE(r.top_k(3, 2));
  EXPECT_FALSE(r.top_k(0, 2));
  EXPECT_EQ(rank_scores({0.1}).ranking, std::vector<std::size_t>{0});
  EXPECT_THROW(rank_scores({}), ParameterError);

  const Model m = small_model(160);
  const Caption c = tokenize(generate_scene(161));
  const MatchResult dup = match_candidates(m, render(generate_scene(161)), {c, c}, ScoreConfig{}, 162);
  EXPECT_EQ(dup.scores[0], dup.scores[1]);
  EXPECT_EQ(dup.argmax, 0u);
}

TEST(Match, MonotoneTransformKeepsRanking) {
  const std::vector<double> s = {0.21, -0.4, 0.77, 0.5, 0.1};
  std::vector<double> t;
  for (double v : s) t.push_back(std::exp(3.0 * v) - 2.0);
  EXPECT_EQ(rank_scores(s).ranking, rank_scores(t).ranking);
}
