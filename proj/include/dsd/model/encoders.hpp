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

#include "dsd/data/render.hpp"
#include "dsd/data/scene.hpp"
#include "dsd/model/model.hpp"

namespace dsd {

/// Token embedding lookup plus positional embedding -> [M x d_tau].
inline Var encode_text(const BoundParams& p, const Caption& caption) {
  const Var& table = p["text.token_embedding"];
  return add(gather_rows(table, caption.id_vector()), p["text.position_embedding"]);
}

/// Non-overlapping square patches flattened in (dy, dx, channel) order.
/// Patches are numbered row-major over the patch grid.
inline Tensor patchify(const Image& img, std::size_t patch) {
  if (img.pixels.size() != kImageSize * kImageSize * kChannels) {
    throw DimensionError("image must be 32x32x3");
  }
  if (patch == 0 || kImageSize % patch != 0) throw DimensionError("patch size must divide 32");
  const std::size_t grid = kImageSize / patch;
  const std::size_t width = patch * patch * kChannels;
  Tensor out({grid * grid, width});
  for (std::size_t py = 0; py < grid; ++py)
    for (std::size_t px = 0; px < grid; ++px) {
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t c = 0; c < kChannels; ++c)
            out(py * grid + px, k++) = img.at(py * patch + dy, px * patch + dx, c);
    }
  return out;
}

/// Linear patch projection plus positional embedding -> [N x d].
inline Var encode_image(Tape& tape, const BoundParams& p, const Image& img, std::size_t patch) {
  Var patches = tape.constant(patchify(img, patch));
  const Var& proj = p["image.projection"];
  if (patches.value().cols() != proj.value().rows()) {
    throw DimensionError("image.projection does not match the patch width");
  }
  return add(matmul(patches, proj), p["image.position_embedding"]);
}

/// Value-only image latent for a model with frozen weights.
inline Tensor image_latent(const Model& m, const Image& img) {
  Tape tape(false);
  ParamMap sub{{"image.projection", m.param("image.projection")},
               {"image.position_embedding", m.param("image.position_embedding")}};
  BoundParams p(tape, sub);
  return encode_image(tape, p, img, m.config.patch_size).value();
}

}  // namespace dsd
