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
#include <map>
#include <string>

#include "dsd/numerics/tensor.hpp"

namespace dsd {

/// Named parameter set. Ordered by name so iteration (and serialization)
/// is deterministic.
using ParamMap = std::map<std::string, Tensor>;

/// Heavy-ball momentum: v <- mu * v + g; p <- p - lr * v.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("momentum must lie in [0, 1)");
  }

  void step(ParamMap& params, const ParamMap& grads) {
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      auto [it, fresh] = velocity_.try_emplace(name, Tensor(p.shape(), 0.0));
      Tensor& v = it->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        p[i] -= lr_ * v[i];
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  ParamMap velocity_;
};

/// Adam with bias correction (Kingma & Ba).
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  }

  void step(ParamMap& params, const ParamMap& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      Tensor& m = m_.try_emplace(name, Tensor(p.shape(), 0.0)).first->second;
      Tensor& v = v_.try_emplace(name, Tensor(p.shape(), 0.0)).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ParamMap m_, v_;
};

}  // namespace dsd
