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
#include <array>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "dsd/data/scene.hpp"

namespace dsd {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kChannels = 3;

/// 32x32 RGB image, row-major (y, x, channel), values in [0, 1].
struct Image {
  std::vector<double> pixels = std::vector<double>(kImageSize * kImageSize * kChannels, 1.0);

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * kImageSize + x) * kChannels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * kImageSize + x) * kChannels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

inline std::array<double, 3> color_rgb(Color c) {
  switch (c) {
    case Color::Red: return {1.0, 0.0, 0.0};
    case Color::Green: return {0.0, 1.0, 0.0};
    case Color::Blue: return {0.0, 0.0, 1.0};
    case Color::Yellow: return {1.0, 1.0, 0.0};
  }
  return {0.0, 0.0, 0.0};
}

/// Center and half-extent of one rendered object.
struct Placement {
  int cx = 0;
  int cy = 0;
  int radius = 0;
};

struct Layout {
  Placement subject;
  Placement object;
};

/// Seed-derived jitter. The image is split in halves along the predicate's
/// axis and each object stays inside its half, so relations always hold and
/// the two objects never overlap.
inline Layout layout(const Scene& s) {
  SplitMix64 rng = SplitMix64(s.seed).split("layout");
  constexpr int kHalf = static_cast<int>(kImageSize) / 2;
  constexpr int kMax = static_cast<int>(kImageSize) - 2;
  Layout l;
  l.subject.radius = static_cast<int>(rng.range(4, 6));
  l.object.radius = static_cast<int>(rng.range(4, 6));
  const auto low = [&](int r) { return static_cast<int>(rng.range(r + 1, kHalf - 1 - r)); };
  const auto high = [&](int r) { return static_cast<int>(rng.range(kHalf + r, kMax - r)); };
  const auto free = [&](int r) { return static_cast<int>(rng.range(r + 1, kMax - r)); };
  Placement& first = (s.predicate == Predicate::LeftOf || s.predicate == Predicate::Above)
                         ? l.subject
                         : l.object;
  Placement& second = (&first == &l.subject) ? l.object : l.subject;
  if (s.predicate == Predicate::LeftOf || s.predicate == Predicate::RightOf) {
    first.cx = low(first.radius);
    second.cx = high(second.radius);
    first.cy = free(first.radius);
    second.cy = free(second.radius);
  } else {
    first.cy = low(first.radius);
    second.cy = high(second.radius);
    first.cx = free(first.radius);
    second.cx = free(second.radius);
  }
  return l;
}

/// True when pixel (x, y) lies inside `shape` placed at `p`.
inline bool covers(ShapeKind shape, const Placement& p, int x, int y) {
  const int dx = x - p.cx, dy = y - p.cy;
  const int r = p.radius;
  switch (shape) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::Triangle:  // apex up, base on row cy + r
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
  }
  return false;
}

/// Hard-edged rasterization on a white background.
inline Image render(const Scene& s) {
  Image img;
  const Layout l = layout(s);
  const auto draw = [&](const Entity& e, const Placement& p) {
    const auto rgb = color_rgb(e.color);
    for (int y = p.cy - p.radius; y <= p.cy + p.radius; ++y)
      for (int x = p.cx - p.radius; x <= p.cx + p.radius; ++x)
        if (covers(e.shape, p, x, y))
          for (std::size_t c = 0; c < kChannels; ++c)
            img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = rgb[c];
  };
  draw(s.object, l.object);
  draw(s.subject, l.subject);
  return img;
}

}  // namespace dsd
