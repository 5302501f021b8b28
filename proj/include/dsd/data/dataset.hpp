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
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dsd/canonical_json.hpp"
#include "dsd/data/render.hpp"
#include "dsd/data/scene.hpp"

namespace dsd {

/// One image and C candidate captions, exactly one of which is true.
struct MatchInstance {
  Scene scene;
  std::vector<Caption> candidates;
  std::size_t true_index = 0;

  Image image() const { return render(scene); }
  const Caption& positive() const { return candidates.at(true_index); }
  friend bool operator==(const MatchInstance&, const MatchInstance&) = default;
};

struct DatasetSplits {
  std::vector<MatchInstance> train;
  std::vector<MatchInstance> eval;
  friend bool operator==(const DatasetSplits&, const DatasetSplits&) = default;
};

/// Slot in which `candidate` differs from `positive`, or nullopt when they
/// are equal. Throws if they differ in more than one slot.
inline std::optional<Slot> mutated_slot(const Caption& positive, const Caption& candidate) {
  const bool subj = positive.ids[1] != candidate.ids[1] || positive.ids[2] != candidate.ids[2];
  const bool pred = positive.ids[3] != candidate.ids[3];
  const bool obj = positive.ids[4] != candidate.ids[4] || positive.ids[5] != candidate.ids[5];
  const int n = int(subj) + int(pred) + int(obj);
  if (n == 0) return std::nullopt;
  if (n > 1) throw FormatError("candidate differs from the positive in more than one slot");
  return subj ? Slot::Subject : (obj ? Slot::Object : Slot::Predicate);
}

/// Positive caption plus C-1 distinct single-slot mutations, with the
/// positive placed at a uniformly drawn index.
inline MatchInstance make_instance(const Scene& scene, std::size_t candidates, SplitMix64 rng) {
  if (candidates < 2) throw ParameterError("candidates_per_instance must be at least 2");
  constexpr std::size_t kDistinctNegatives = 2 * (kNumEntities - 1) + (kNumPredicates - 1);
  if (candidates - 1 > kDistinctNegatives) {
    throw ParameterError("at most " + std::to_string(kDistinctNegatives + 1) +
                         " candidates per instance are possible");
  }
  const Caption pos = tokenize(scene);
  std::set<Caption> seen{pos};
  std::vector<Caption> negatives;
  while (negatives.size() < candidates - 1) {
    const auto slot = static_cast<Slot>(rng.below(3));
    const Caption c = tokenize(mutate(scene, slot, rng.next()));
    if (seen.insert(c).second) negatives.push_back(c);
  }
  MatchInstance inst;
  inst.scene = scene;
  inst.true_index = rng.below(candidates);
  inst.candidates = std::move(negatives);
  inst.candidates.insert(inst.candidates.begin() + static_cast<std::ptrdiff_t>(inst.true_index), pos);
  return inst;
}

/// Deterministic train/eval splits. Every scene has a distinct seed, so the
/// splits never share a scene.
inline DatasetSplits build_dataset(std::size_t n_train, std::size_t n_eval,
                                   std::size_t candidates_per_instance, std::uint64_t seed) {
  if (candidates_per_instance < 2) throw ParameterError("candidates_per_instance must be at least 2");
  const SplitMix64 root(seed);
  SplitMix64 seeds = root.split("scene-seeds");
  std::set<std::uint64_t> used;
  DatasetSplits out;
  for (std::size_t i = 0; i < n_train + n_eval; ++i) {
    std::uint64_t s;
    do {
      s = seeds.next();
    } while (!used.insert(s).second);
    MatchInstance inst = make_instance(generate_scene(s), candidates_per_instance,
                                       root.split("candidates").split(i));
    (i < n_train ? out.train : out.eval).push_back(std::move(inst));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence. Pixels are re-rendered from the scene on load.
// ---------------------------------------------------------------------------

inline Json entity_json(const Entity& e) {
  return Json{{"color", std::string(color_name(e.color))}, {"shape", std::string(shape_name(e.shape))}};
}

inline Entity entity_from_json(const Json& j) {
  const std::size_t c = token_id(j.at("color").get<std::string>());
  const std::size_t s = token_id(j.at("shape").get<std::string>());
  if (c < detail::kColorBase || c >= detail::kColorBase + kNumColors) throw VocabularyError("not a color");
  if (s < detail::kShapeBase || s >= detail::kShapeBase + kNumShapes) throw VocabularyError("not a shape");
  return {static_cast<Color>(c - detail::kColorBase), static_cast<ShapeKind>(s - detail::kShapeBase)};
}

inline Json scene_json(const Scene& s) {
  return Json{{"seed", s.seed},
              {"subject", entity_json(s.subject)},
              {"object", entity_json(s.object)},
              {"predicate", std::string(predicate_name(s.predicate))}};
}

inline Scene scene_from_json(const Json& j) {
  Scene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.subject = entity_from_json(j.at("subject"));
  s.object = entity_from_json(j.at("object"));
  const std::size_t p = token_id(j.at("predicate").get<std::string>());
  if (p < detail::kPredicateBase || p >= detail::kPredicateBase + kNumPredicates) {
    throw VocabularyError("not a predicate");
  }
  s.predicate = static_cast<Predicate>(p - detail::kPredicateBase);
  return s;
}

inline Json instance_json(const MatchInstance& m) {
  Json j = scene_json(m.scene);
  Json cands = Json::array();
  for (const Caption& c : m.candidates) cands.push_back(c.id_vector());
  j["candidates"] = std::move(cands);
  j["true_index"] = m.true_index;
  return j;
}

inline MatchInstance instance_from_json(const Json& j) {
  MatchInstance m;
  m.scene = scene_from_json(j);
  for (const Json& c : j.at("candidates")) {
    const auto ids = c.get<std::vector<std::size_t>>();
    if (ids.size() != kCaptionLength) throw FormatError("candidate caption must have 6 token ids");
    Caption cap;
    std::copy(ids.begin(), ids.end(), cap.ids.begin());
    caption_scene(cap);  // grammar check
    m.candidates.push_back(cap);
  }
  m.true_index = j.at("true_index").get<std::size_t>();
  if (m.candidates.empty() || m.true_index >= m.candidates.size()) {
    throw FormatError("true_index out of range");
  }
  if (m.candidates[m.true_index] != tokenize(m.scene)) {
    throw FormatError("candidate at true_index does not describe the scene");
  }
  return m;
}

/// Writes both splits to one file; each record carries a "split" field.
inline void save_dataset(const DatasetSplits& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  const auto write = [&](const std::vector<MatchInstance>& v, const char* split) {
    for (const MatchInstance& m : v) {
      Json j = instance_json(m);
      j["split"] = split;
      os << canonical_json(j) << '\n';
    }
  };
  write(d.train, "train");
  write(d.eval, "eval");
}

inline DatasetSplits load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset '" + path + "'");
  DatasetSplits d;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      MatchInstance m = instance_from_json(j);
      const std::string split = j.value("split", "eval");
      (split == "train" ? d.train : d.eval).push_back(std::move(m));
    } catch (const Json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

}  // namespace dsd
