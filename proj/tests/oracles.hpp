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

// Plain-loop reference implementations used as test oracles. They share no
// code with the library beyond the Tensor container and parameter names.

#include <cmath>
#include <string>
#include <vector>

#include "dsd/model/model.hpp"

namespace dsd::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline Mat product(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat plus_row(Mat a, const Tensor& row) {
  for (auto& r : a)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  return a;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline Mat silu(Mat a) {
  for (auto& r : a)
    for (double& v : r) v = silu(v);
  return a;
}

/// softmax over each row of (q k^T) * scale, written out term by term.
inline Mat attention(const Mat& q, const Mat& k, std::size_t off, std::size_t width, double scale) {
  Mat a(q.size(), std::vector<double>(k.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = off; c < off + width; ++c) dot += q[i][c] * k[j][c];
      a[i][j] = std::exp(dot * scale);
      z += a[i][j];
    }
    for (double& v : a[i]) v /= z;
  }
  return a;
}

struct ForwardResult {
  Mat eps_hat;
  std::vector<Mat> maps;  // layer-major, one per (layer, head)
};

/// Straight-line transcription of the denoiser forward pass.
inline ForwardResult denoiser(const Model& m, const Mat& z, std::size_t t, const Mat& r_y) {
  const ModelConfig& c = m.config;
  auto P = [&](const std::string& n) { return to_mat(m.param(n)); };
  auto B = [&](std::size_t l, const char* n) { return m.param(block_param(l, n)); };
  auto W = [&](std::size_t l, const char* n) { return to_mat(m.param(block_param(l, n))); };

  Mat temb(1, std::vector<double>(c.model_dim));
  for (std::size_t i = 0; i < c.model_dim / 2; ++i) {
    const double f = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(c.model_dim));
    temb[0][2 * i] = std::sin(static_cast<double>(t) * f);
    temb[0][2 * i + 1] = std::cos(static_cast<double>(t) * f);
  }
  const Mat time = product(temb, P("denoiser.time"));
  Mat h = plus(plus_row(product(z, P("denoiser.input")), m.param("denoiser.input_bias")), P("denoiser.position"));
  for (auto& row : h)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += time[0][j];

  ForwardResult out;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  for (std::size_t l = 0; l < c.layers; ++l) {
    h = plus(h, silu(plus_row(product(h, W(l, "self")), B(l, "self_bias"))));
    const Mat q = product(h, W(l, "query"));
    const Mat k = product(r_y, W(l, "key"));
    const Mat v = product(r_y, W(l, "value"));
    Mat cat(h.size(), std::vector<double>(c.heads * c.head_dim, 0.0));
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      const std::size_t off = hd * c.head_dim;
      Mat a = attention(q, k, off, c.head_dim, scale);
      for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t j = 0; j < k.size(); ++j)
          for (std::size_t x = 0; x < c.head_dim; ++x) cat[i][off + x] += a[i][j] * v[j][off + x];
      out.maps.push_back(std::move(a));
    }
    h = plus(h, plus_row(product(cat, W(l, "out")), B(l, "out_bias")));
    const Mat ff = silu(plus_row(product(h, W(l, "ff1")), B(l, "ff1_bias")));
    h = plus(h, plus_row(product(ff, W(l, "ff2")), B(l, "ff2_bias")));
  }
  out.eps_hat = plus_row(product(h, P("denoiser.output")), m.param("denoiser.output_bias"));
  return out;
}

/// (1/lambda) log sum_i exp(lambda a[i][j]) for column j, no stabilization.
inline double lse_column(const Mat& a, std::size_t j, double lambda) {
  double s = 0.0;
  for (const auto& row : a) s += std::exp(lambda * row[j]);
  return std::log(s) / lambda;
}

/// Uniform-head LSE score averaged over text tokens (BOS skipped), heads
/// and layers.
inline double uniform_score(const std::vector<Mat>& maps, std::size_t layers, std::size_t heads, double lambda) {
  double f = 0.0;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) {
      const Mat& a = maps[l * heads + h];
      double s = 0.0;
      for (std::size_t j = 1; j < a[0].size(); ++j) s += lse_column(a, j, lambda);
      f += s / static_cast<double>(a[0].size() - 1) / static_cast<double>(heads) / static_cast<double>(layers);
    }
  return f;
}

/// A model config small enough for hand-checkable oracles.
inline ModelConfig micro_config(std::size_t layers = 1, std::size_t heads = 1) {
  ModelConfig c;
  c.vocab_size = 3;
  c.text_tokens = 2;
  c.text_dim = 3;
  c.head_dim = 2;
  c.heads = heads;
  c.model_dim = heads * c.head_dim;
  c.image_tokens = 2;
  c.layers = layers;
  c.ff_hidden = 5;
  return c;
}

}  // namespace dsd::oracle
