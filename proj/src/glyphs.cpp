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

#include "dsprobe/glyphs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>

#include "dsprobe/rng.hpp"
#include "json_util.hpp"

namespace dsprobe {
namespace {

struct Point {
  double x = 0;
  double y = 0;
};

using Polyline = std::vector<Point>;
using Glyph = std::vector<Polyline>;

// Angles in degrees, y pointing down.
Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1,
             std::size_t segments = 16) {
  Polyline out;
  for (std::size_t i = 0; i <= segments; ++i) {
    const double a = (a0 + (a1 - a0) * static_cast<double>(i) / static_cast<double>(segments)) *
                     std::numbers::pi / 180.0;
    out.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return out;
}

const std::array<Glyph, kGlyphClasses>& templates() {
  static const std::array<Glyph, kGlyphClasses> kTemplates = [] {
    std::array<Glyph, kGlyphClasses> t;
    // The first two classes share most of their strokes, so the binary task
    // is not separable from raw pixels.
    t[0] = {arc(0.47, 0.3, 0.26, 0.2, 200, 450, 14), arc(0.47, 0.7, 0.28, 0.2, 270, 520, 14)};
    t[1] = {arc(0.5, 0.3, 0.2, 0.19, 0, 360, 16), arc(0.5, 0.7, 0.25, 0.21, 0, 360, 18)};
    t[2] = {arc(0.5, 0.32, 0.26, 0.22, 180, 380, 12), {{0.74, 0.4}, {0.25, 0.9}, {0.8, 0.9}}};
    t[3] = {{{0.75, 0.1}, {0.32, 0.1}, {0.3, 0.45}}, arc(0.5, 0.65, 0.26, 0.24, 220, 500, 14)};
    t[4] = {{{0.68, 0.1}, {0.35, 0.45}}, arc(0.5, 0.68, 0.22, 0.22, 0, 360, 18)};
    t[5] = {arc(0.48, 0.33, 0.22, 0.22, 0, 360, 16), {{0.7, 0.33}, {0.62, 0.9}}};
    t[6] = {arc(0.5, 0.5, 0.28, 0.4, 0, 360, 24)};
    t[7] = {{{0.35, 0.25}, {0.52, 0.1}, {0.52, 0.9}}};
    t[8] = {{{0.65, 0.9}, {0.65, 0.1}, {0.2, 0.65}, {0.82, 0.65}}};
    t[9] = {{{0.2, 0.12}, {0.8, 0.12}, {0.42, 0.9}}, {{0.4, 0.5}, {0.7, 0.5}}};
    return t;
  }();
  return kTemplates;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

// Strokes in pixel coordinates with a one-pixel anti-aliasing ramp.
void render(std::span<float> image, std::size_t h, std::size_t w,
            const std::vector<Polyline>& strokes, double thickness, double contrast) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const Point p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
      double d = 1e300;
      for (const auto& line : strokes) {
        for (std::size_t i = 0; i + 1 < line.size(); ++i) {
          d = std::min(d, segment_distance(p, line[i], line[i + 1]));
        }
      }
      const double ink = std::clamp(0.5 + thickness / 2.0 - d, 0.0, 1.0) * contrast;
      float& px = image[r * w + c];
      px = static_cast<float>(std::max(static_cast<double>(px), ink));
    }
  }
}

}  // namespace

GlyphStyle glyph_style_preset(const std::string& name) {
  GlyphStyle s;
  if (name == "standard") return s;
  if (name == "clean") {
    s.rotation_deg = 8.0;
    s.shift = 0.04;
    s.stroke_jitter = 0.02;
    return s;
  }
  if (name == "shifted") {
    s.extent = 0.5;
    s.shift = 0.45;
    return s;
  }
  if (name == "hard") {
    s.rotation_deg = 25.0;
    s.scale_min = 0.75;
    s.scale_max = 1.15;
    s.shift = 0.12;
    s.stroke_jitter = 0.08;
    s.noise_sd = 0.15;
    s.max_distractors = 2;
    return s;
  }
  if (name == "noisy") {
    s.rotation_deg = 30.0;
    s.scale_min = 0.7;
    s.scale_max = 1.2;
    s.shift = 0.15;
    s.stroke_jitter = 0.1;
    s.contrast = 0.6;
    s.noise_sd = 0.35;
    s.max_distractors = 4;
    return s;
  }
  throw ConfigError("unknown glyph style '" + name + "'");
}

nlohmann::json to_json(const GlyphStyle& s) {
  return {{"extent", s.extent},
          {"rotation_deg", s.rotation_deg},
          {"scale_min", s.scale_min},
          {"scale_max", s.scale_max},
          {"shift", s.shift},
          {"stroke_jitter", s.stroke_jitter},
          {"thickness_min", s.thickness_min},
          {"thickness_max", s.thickness_max},
          {"contrast", s.contrast},
          {"noise_sd", s.noise_sd},
          {"max_distractors", s.max_distractors}};
}

GlyphStyle glyph_style_from_json(const nlohmann::json& j) {
  if (j.is_string()) return glyph_style_preset(j.get<std::string>());
  detail::require_keys(j,
                       {"preset", "extent", "rotation_deg", "scale_min", "scale_max", "shift",
                        "stroke_jitter", "thickness_min", "thickness_max", "contrast",
                        "noise_sd", "max_distractors"},
                       "glyph style");
  GlyphStyle s = glyph_style_preset(detail::get_or<std::string>(j, "preset", "standard"));
  try {
    s.extent = detail::get_or(j, "extent", s.extent);
    s.rotation_deg = detail::get_or(j, "rotation_deg", s.rotation_deg);
    s.scale_min = detail::get_or(j, "scale_min", s.scale_min);
    s.scale_max = detail::get_or(j, "scale_max", s.scale_max);
    s.shift = detail::get_or(j, "shift", s.shift);
    s.stroke_jitter = detail::get_or(j, "stroke_jitter", s.stroke_jitter);
    s.thickness_min = detail::get_or(j, "thickness_min", s.thickness_min);
    s.thickness_max = detail::get_or(j, "thickness_max", s.thickness_max);
    s.contrast = detail::get_or(j, "contrast", s.contrast);
    s.noise_sd = detail::get_or(j, "noise_sd", s.noise_sd);
    s.max_distractors = detail::get_or(j, "max_distractors", s.max_distractors);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("glyph style: ") + e.what());
  }
  if (s.extent <= 0 || s.extent > 1 || s.scale_min <= 0 || s.scale_max < s.scale_min ||
      s.thickness_min <= 0 || s.thickness_max < s.thickness_min || s.contrast < 0 ||
      s.contrast > 1 || s.noise_sd < 0) {
    throw ConfigError("glyph style: parameter out of range");
  }
  return s;
}

LabeledDataset gen_glyphs(std::size_t classes, std::size_t per_class, std::size_t height,
                          std::size_t width, std::uint64_t seed, const GlyphStyle& style) {
  if (classes < 1 || classes > kGlyphClasses) {
    throw ConfigError("gen_glyphs: class count must be in [1, " + std::to_string(kGlyphClasses) +
                      "]");
  }
  std::vector<std::uint32_t> ids(classes);
  for (std::size_t c = 0; c < classes; ++c) ids[c] = static_cast<std::uint32_t>(c);
  return gen_glyphs(ids, per_class, height, width, seed, style);
}

LabeledDataset gen_glyphs(std::span<const std::uint32_t> template_ids, std::size_t per_class,
                          std::size_t height, std::size_t width, std::uint64_t seed,
                          const GlyphStyle& style) {
  const std::size_t classes = template_ids.size();
  if (classes < 1) throw ConfigError("gen_glyphs: needs at least one template");
  for (std::size_t c = 0; c < classes; ++c) {
    if (template_ids[c] >= kGlyphClasses) {
      throw ConfigError("gen_glyphs: template " + std::to_string(template_ids[c]) +
                        " outside [0, " + std::to_string(kGlyphClasses) + ")");
    }
    for (std::size_t d = 0; d < c; ++d) {
      if (template_ids[d] == template_ids[c]) throw ConfigError("gen_glyphs: repeated template");
    }
  }
  if (height < 8 || width < 8) throw ShapeError("gen_glyphs: images must be at least 8x8");
  const std::size_t n = classes * per_class;
  LabeledDataset ds;
  ds.images = Tensor({n, 1, height, width}, 0.0f);
  ds.classes = classes;
  ds.labels.resize(n);
  ds.provenance = "glyphs(templates=";
  for (std::size_t c = 0; c < classes; ++c) {
    ds.provenance += (c ? "," : "") + std::to_string(template_ids[c]);
  }
  ds.provenance += ";seed=" + std::to_string(seed) + ")";

  const double side = static_cast<double>(std::min(height, width));
  const double box = style.extent * side;
  const double cx = static_cast<double>(width) / 2.0, cy = static_cast<double>(height) / 2.0;
  const double px_scale = side / 28.0;
  const std::size_t plane = height * width;

  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(i % classes);
    ds.labels[i] = label;
    Rng rng(Rng::derive(seed, i));
    const double theta = rng.uniform(-style.rotation_deg, style.rotation_deg) * std::numbers::pi / 180.0;
    const double scale = rng.uniform(style.scale_min, style.scale_max);
    const double sx = rng.uniform(-style.shift, style.shift) * box;
    const double sy = rng.uniform(-style.shift, style.shift) * box;
    const double thickness = rng.uniform(style.thickness_min, style.thickness_max) * px_scale;
    const double ct = std::cos(theta), st = std::sin(theta);
    auto place = [&](Point q) {
      const double ux = (q.x - 0.5) * scale * box, uy = (q.y - 0.5) * scale * box;
      return Point{cx + ct * ux - st * uy + sx, cy + st * ux + ct * uy + sy};
    };

    std::vector<Polyline> strokes;
    for (const auto& line : templates()[template_ids[label]]) {
      Polyline out;
      for (Point q : line) {
        q.x += rng.normal(0.0, style.stroke_jitter);
        q.y += rng.normal(0.0, style.stroke_jitter);
        out.push_back(place(q));
      }
      strokes.push_back(std::move(out));
    }
    const std::size_t distractors =
        style.max_distractors ? rng.index(style.max_distractors + 1) : 0;
    for (std::size_t d = 0; d < distractors; ++d) {
      const Point a{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const Point b{a.x + 0.3 * std::cos(ang), a.y + 0.3 * std::sin(ang)};
      strokes.push_back({place(a), place(b)});
    }

    auto image = ds.images.data().subspan(i * plane, plane);
    render(image, height, width, strokes, thickness, style.contrast);
    if (style.noise_sd > 0) {
      for (float& v : image) {
        v = static_cast<float>(std::clamp(v + rng.normal(0.0, style.noise_sd), 0.0, 1.0));
      }
    }
  }
  return ds;
}

}  // namespace dsprobe
