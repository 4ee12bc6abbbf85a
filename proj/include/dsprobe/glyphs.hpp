// Copyright (c) 2026 The dsprobe Authors
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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "json.hpp"

#include "dsprobe/dataset.hpp"

namespace dsprobe {

inline constexpr std::size_t kGlyphClasses = 10;

/// Per-sample variation of the procedural glyphs. Lengths are fractions of
/// the glyph box, which is `extent` times the shorter image side.
struct GlyphStyle {
  double extent = 0.6;
  double rotation_deg = 15.0;
  double scale_min = 0.85;
  double scale_max = 1.1;
  double shift = 0.08;
  double stroke_jitter = 0.04;
  double thickness_min = 1.6;  // pixels at 28x28, scaled with image size
  double thickness_max = 2.6;
  double contrast = 1.0;
  double noise_sd = 0.0;
  std::size_t max_distractors = 0;
};

/// "clean", "standard", "shifted", "hard" or "noisy".
GlyphStyle glyph_style_preset(const std::string& name);
GlyphStyle glyph_style_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GlyphStyle& style);

/// Class-conditioned stroke glyphs, `per_class` samples of every class in
/// interleaved label order. Sample i draws from its own stream of `seed`, so
/// a larger dataset extends a smaller one with the same seed.
LabeledDataset gen_glyphs(std::size_t classes, std::size_t per_class, std::size_t height,
                          std::size_t width, std::uint64_t seed, const GlyphStyle& style = {});

/// Same, with label c drawn from template `template_ids[c]`. Equal to the
/// overload above when the ids are 0..classes-1.
LabeledDataset gen_glyphs(std::span<const std::uint32_t> template_ids, std::size_t per_class,
                          std::size_t height, std::size_t width, std::uint64_t seed,
                          const GlyphStyle& style = {});

}  // namespace dsprobe
