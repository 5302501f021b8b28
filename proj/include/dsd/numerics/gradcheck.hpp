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
#include <functional>

#include "dsd/numerics/autodiff.hpp"

namespace dsd {

/// Scalar-valued function of one tensor, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// Returns max_k |analytic_k - numeric_k| / max(1, |numeric_k|).
inline double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ParameterError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  }
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var y = f(tape, xv);
    tape.backward(y);
    analytic = xv.has_grad() ? xv.grad() : Tensor(x.shape(), 0.0);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.constant(at)).item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + eps;
    const double up = eval(probe);
    probe[k] = orig - eps;
    const double down = eval(probe);
    probe[k] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace dsd
