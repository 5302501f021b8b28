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
#include <cstdint>
#include <numbers>
#include <string_view>

#include "dsd/numerics/tensor.hpp"

namespace dsd {

/// SplitMix64 generator (Steele, Lea & Flood 2014).
///
/// Every stochastic draw in the library goes through this type so that
/// results are bit-reproducible across platforms. `split(tag)` derives an
/// independent child stream from the current state and a tag, which lets
/// callers key streams by purpose ("noise", "init", ...) and by index
/// without threading a single generator through unrelated code.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    return mix(z);
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ParameterError("SplitMix64::below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  /// Inclusive integer range [lo, hi].
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Standard normal draw via Box-Muller; the second variate is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  SplitMix64 split(std::uint64_t tag) const noexcept {
    return SplitMix64(mix(state_ ^ mix(tag + 0x632BE59BD9B4E019ULL)));
  }

  SplitMix64 split(std::string_view tag) const noexcept { return split(hash(tag)); }

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// FNV-1a over the tag bytes.
  static std::uint64_t hash(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Tensor randn(const Shape& shape, SplitMix64& rng, double stddev = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace dsd
