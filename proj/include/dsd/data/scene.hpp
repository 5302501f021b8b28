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

#include <array>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/numerics/rng.hpp"

namespace dsd {

enum class Color : std::uint8_t { Red, Green, Blue, Yellow };
enum class ShapeKind : std::uint8_t { Circle, Square, Triangle };
enum class Predicate : std::uint8_t { LeftOf, RightOf, Above, Below };
enum class Slot : std::uint8_t { Subject, Object, Predicate };

inline constexpr std::size_t kNumColors = 4;
inline constexpr std::size_t kNumShapes = 3;
inline constexpr std::size_t kNumPredicates = 4;
inline constexpr std::size_t kNumEntities = kNumColors * kNumShapes;

struct Entity {
  Color color = Color::Red;
  ShapeKind shape = ShapeKind::Circle;

  std::size_t index() const {
    return static_cast<std::size_t>(color) * kNumShapes + static_cast<std::size_t>(shape);
  }
  static Entity from_index(std::size_t i) {
    return {static_cast<Color>(i / kNumShapes), static_cast<ShapeKind>(i % kNumShapes)};
  }
  friend bool operator==(const Entity&, const Entity&) = default;
};

/// Two-object scene. Object placement jitter is a function of `seed`.
struct Scene {
  Entity subject;
  Entity object;
  Predicate predicate = Predicate::LeftOf;
  std::uint64_t seed = 0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Draws every attribute uniformly from its domain.
inline Scene generate_scene(std::uint64_t seed) {
  SplitMix64 rng = SplitMix64(seed).split("scene");
  Scene s;
  s.subject = Entity::from_index(rng.below(kNumEntities));
  s.object = Entity::from_index(rng.below(kNumEntities));
  s.predicate = static_cast<Predicate>(rng.below(kNumPredicates));
  s.seed = seed;
  return s;
}

/// Replaces the value in `slot` with a different value drawn uniformly from
/// the rest of that slot's domain. Mutating the subject into a copy of the
/// object is allowed.
inline Scene mutate(const Scene& scene, Slot slot, std::uint64_t seed) {
  SplitMix64 rng = SplitMix64(seed).split("mutate");
  Scene out = scene;
  const auto other = [&](std::size_t current, std::size_t domain) {
    std::size_t k = rng.below(domain - 1);
    return k >= current ? k + 1 : k;
  };
  switch (slot) {
    case Slot::Subject:
      out.subject = Entity::from_index(other(scene.subject.index(), kNumEntities));
      break;
    case Slot::Object:
      out.object = Entity::from_index(other(scene.object.index(), kNumEntities));
      break;
    case Slot::Predicate:
      out.predicate = static_cast<Predicate>(
          other(static_cast<std::size_t>(scene.predicate), kNumPredicates));
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary and captions
// ---------------------------------------------------------------------------

/// Fixed token table. Ids are stable and persisted with checkpoints.
inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> kVocab = {
      "<bos>", "red",    "green",    "blue",    "yellow", "circle",
      "square", "triangle", "left_of", "right_of", "above",  "below"};
  return kVocab;
}

inline constexpr std::size_t kVocabSize = 12;
inline constexpr std::size_t kCaptionLength = 6;
inline constexpr std::size_t kBosId = 0;

namespace detail {
inline constexpr std::size_t kColorBase = 1;
inline constexpr std::size_t kShapeBase = 5;
inline constexpr std::size_t kPredicateBase = 8;
}  // namespace detail

/// Token ids: BOS, color1, shape1, predicate, color2, shape2.
struct Caption {
  std::array<std::size_t, kCaptionLength> ids{};

  std::vector<std::size_t> id_vector() const { return {ids.begin(), ids.end()}; }
  friend bool operator==(const Caption&, const Caption&) = default;
  friend auto operator<=>(const Caption&, const Caption&) = default;
};

inline std::size_t token_id(std::string_view word) {
  const auto& v = vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == word) return i;
  throw VocabularyError("unknown word '" + std::string(word) + "'");
}

inline Caption tokenize(const Scene& s) {
  using namespace detail;
  return Caption{{kBosId, kColorBase + static_cast<std::size_t>(s.subject.color),
                  kShapeBase + static_cast<std::size_t>(s.subject.shape),
                  kPredicateBase + static_cast<std::size_t>(s.predicate),
                  kColorBase + static_cast<std::size_t>(s.object.color),
                  kShapeBase + static_cast<std::size_t>(s.object.shape)}};
}

/// Parses "color shape predicate color shape".
inline Caption tokenize(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  if (words.size() != kCaptionLength - 1) {
    throw VocabularyError("caption must have 5 words, got " + std::to_string(words.size()) +
                          ": '" + std::string(text) + "'");
  }
  using namespace detail;
  const auto expect = [&](std::size_t pos, std::size_t base, std::size_t count) {
    const std::size_t id = token_id(words[pos]);
    if (id < base || id >= base + count) {
      throw VocabularyError("word '" + words[pos] + "' not valid at position " +
                            std::to_string(pos + 1));
    }
    return id;
  };
  return Caption{{kBosId, expect(0, kColorBase, kNumColors), expect(1, kShapeBase, kNumShapes),
                  expect(2, kPredicateBase, kNumPredicates), expect(3, kColorBase, kNumColors),
                  expect(4, kShapeBase, kNumShapes)}};
}

inline std::string detokenize(const Caption& c) {
  const auto& v = vocabulary();
  std::string out;
  for (std::size_t i = 1; i < kCaptionLength; ++i) {
    if (c.ids[i] >= v.size()) throw VocabularyError("token id " + std::to_string(c.ids[i]) + " out of range");
    if (i > 1) out += ' ';
    out += v[c.ids[i]];
  }
  return out;
}

/// Validates ids against the caption grammar and returns the scene it
/// describes (with seed 0).
inline Scene caption_scene(const Caption& c) {
  using namespace detail;
  const auto in = [&](std::size_t pos, std::size_t base, std::size_t count) {
    if (c.ids[pos] < base || c.ids[pos] >= base + count) {
      throw VocabularyError("token id " + std::to_string(c.ids[pos]) +
                            " not valid at caption position " + std::to_string(pos));
    }
    return c.ids[pos] - base;
  };
  if (c.ids[0] != kBosId) throw VocabularyError("caption must start with <bos>");
  Scene s;
  s.subject = {static_cast<Color>(in(1, kColorBase, kNumColors)),
               static_cast<ShapeKind>(in(2, kShapeBase, kNumShapes))};
  s.predicate = static_cast<Predicate>(in(3, kPredicateBase, kNumPredicates));
  s.object = {static_cast<Color>(in(4, kColorBase, kNumColors)),
              static_cast<ShapeKind>(in(5, kShapeBase, kNumShapes))};
  return s;
}

inline std::string_view color_name(Color c) { return vocabulary()[detail::kColorBase + static_cast<std::size_t>(c)]; }
inline std::string_view shape_name(ShapeKind s) { return vocabulary()[detail::kShapeBase + static_cast<std::size_t>(s)]; }
inline std::string_view predicate_name(Predicate p) {
  return vocabulary()[detail::kPredicateBase + static_cast<std::size_t>(p)];
}
inline std::string_view slot_name(Slot s) {
  switch (s) {
    case Slot::Subject: return "subject";
    case Slot::Object: return "object";
    case Slot::Predicate: return "predicate";
  }
  return "";
}

}  // namespace dsd
