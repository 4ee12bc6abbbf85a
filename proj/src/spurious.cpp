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

#include "dsprobe/spurious.hpp"

#include <algorithm>

#include "dsprobe/rng.hpp"

namespace dsprobe {
namespace {

// Stream tags keep the per-sample draws of the three operations independent
// when callers reuse one seed.
constexpr std::uint64_t kInjectStream = 1;
constexpr std::uint64_t kInterveneStream = 2;
constexpr std::uint64_t kPairStream = 3;

bool overlaps(const Location& a, const Location& b, std::size_t p) {
  return a.row < b.row + p && b.row < a.row + p && a.col < b.col + p && b.col < a.col + p;
}

std::uint32_t draw_other(Rng& rng, std::uint32_t label, std::size_t classes) {
  if (classes < 2) return label;
  auto other = static_cast<std::uint32_t>(rng.index(classes - 1));
  return other >= label ? other + 1 : other;
}

std::vector<Location> resolve_locations(const SpuriousSpec& spec, std::size_t h, std::size_t w,
                                        std::size_t classes) {
  const std::size_t p = spec.patch_size;
  if (p == 0) throw ConfigError("spurious: patch size must be positive");
  std::vector<Location> locs = spec.locations;
  const std::size_t needed = spec.kind == SpuriousSpec::Kind::kPatch ? classes : 1;
  if (locs.empty()) locs = default_patch_locations(h, w, p, needed);
  if (locs.size() != needed) {
    throw ConfigError("spurious: expected " + std::to_string(needed) + " locations, got " +
                      std::to_string(locs.size()));
  }
  for (std::size_t i = 0; i < locs.size(); ++i) {
    if (locs[i].row + p > h || locs[i].col + p > w) {
      throw ShapeError("spurious: patch at (" + std::to_string(locs[i].row) + ", " +
                       std::to_string(locs[i].col) + ") does not fit a " + std::to_string(h) +
                       "x" + std::to_string(w) + " image");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (overlaps(locs[i], locs[j], p)) {
        throw ConfigError("spurious: overlapping patch locations for classes " +
                          std::to_string(j) + " and " + std::to_string(i));
      }
    }
  }
  return locs;
}

void stamp(Tensor& images, std::size_t sample, const SpuriousSpec& spec,
           const std::vector<Location>& locs, std::uint32_t attribute) {
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t p = spec.patch_size;
  const Location at = spec.kind == SpuriousSpec::Kind::kPatch ? locs.at(attribute) : locs.at(0);
  const auto pattern = patch_pattern(spec, attribute);
  auto data = images.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        data[((sample * c + ch) * h + at.row + i) * w + at.col + j] = pattern[i * p + j];
      }
    }
  }
}

}  // namespace

std::vector<Location> default_patch_locations(std::size_t height, std::size_t width,
                                              std::size_t patch, std::size_t count) {
  if (patch + 2 > height || patch + 2 > width) {
    throw ShapeError("spurious: a " + std::to_string(patch) + "-pixel patch does not fit " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t bottom = height - 1 - patch, right = width - 1 - patch;
  std::vector<Location> candidates = {{1, 1}, {1, right}, {bottom, 1}, {bottom, right}};
  for (std::size_t col = 1; col <= right; col += patch + 1) candidates.push_back({1, col});
  for (std::size_t col = 1; col <= right; col += patch + 1) candidates.push_back({bottom, col});
  for (std::size_t row = 1; row <= bottom; row += patch + 1) candidates.push_back({row, 1});
  for (std::size_t row = 1; row <= bottom; row += patch + 1) candidates.push_back({row, right});
  std::vector<Location> out;
  for (const auto& cand : candidates) {
    if (out.size() == count) break;
    if (std::none_of(out.begin(), out.end(), [&](const Location& l) { return overlaps(l, cand, patch); })) {
      out.push_back(cand);
    }
  }
  if (out.size() < count) {
    throw ShapeError("spurious: image too small for " + std::to_string(count) +
                     " disjoint border patches");
  }
  return out;
}

std::vector<float> patch_pattern(const SpuriousSpec& spec, std::uint32_t a) {
  const std::size_t p = spec.patch_size;
  std::vector<float> out(p * p, 0.0f);
  const bool shared = spec.kind == SpuriousSpec::Kind::kPatch && spec.content_shared;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const bool edge = i == 0 || j == 0 || i + 1 == p || j + 1 == p;
      bool on = true;
      if (!shared) {
        switch (a % 10) {
          case 0: on = true; break;
          case 1: on = edge; break;
          case 2: on = i == p / 2 || j == p / 2; break;
          case 3: on = (i + j) % 2 == 0; break;
          case 4: on = i == j; break;
          case 5: on = i + j + 1 == p; break;
          case 6: on = i % 2 == 0; break;
          case 7: on = j % 2 == 0; break;
          case 8: on = !edge; break;
          default: on = i == j || i + j + 1 == p; break;
        }
      }
      out[i * p + j] = on ? spec.intensity : 0.0f;
    }
  }
  return out;
}

LabeledDataset inject_patch(const LabeledDataset& ds, SpuriousSpec spec, std::uint64_t seed) {
  validate(ds);
  if (ds.spurious) throw StateError("inject_patch: dataset already carries a spurious feature");
  if (spec.kind == SpuriousSpec::Kind::kDominoTop) {
    throw ConfigError("inject_patch: domino tops are built with compose_dominoes");
  }
  if (spec.correlation < 0.0 || spec.correlation > 1.0) {
    throw ConfigError("inject_patch: correlation must lie in [0, 1]");
  }
  if (spec.intensity < 0.0f || spec.intensity > 1.0f) {
    throw ConfigError("inject_patch: intensity must lie in [0, 1]");
  }
  spec.locations = resolve_locations(spec, ds.images.dim(2), ds.images.dim(3), ds.classes);

  LabeledDataset out = ds;
  SpuriousRecord rec;
  rec.spec = spec;
  rec.clean = ds.images;
  rec.attribute.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Rng rng(Rng::derive(Rng::derive(seed, kInjectStream), i));
    const std::uint32_t y = ds.labels[i];
    const std::uint32_t a = rng.bernoulli(spec.correlation) ? y : draw_other(rng, y, ds.classes);
    rec.attribute[i] = a;
    stamp(out.images, i, spec, spec.locations, a);
  }
  out.spurious = std::move(rec);
  out.provenance = ds.provenance + "+" + to_string(spec.kind);
  return out;
}

LabeledDataset intervene_randomize_spurious(const LabeledDataset& ds, std::uint64_t seed) {
  if (!ds.spurious) throw StateError("intervene: dataset has no spurious record");
  const SpuriousRecord& src = ds.spurious.value();
  LabeledDataset out = ds;
  SpuriousRecord& rec = out.spurious.value();

  if (src.spec.kind == SpuriousSpec::Kind::kDominoTop) {
    if (!ds.domino_top_rows) throw StateError("intervene: domino record without a top half");
    std::vector<std::vector<std::size_t>> pool(ds.classes);
    for (std::size_t i = 0; i < ds.size(); ++i) pool.at(src.attribute[i]).push_back(i);
    const std::size_t c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    const std::size_t top = ds.domino_top_rows * w;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      Rng rng(Rng::derive(Rng::derive(seed, kInterveneStream), i));
      const auto a = static_cast<std::uint32_t>(rng.index(ds.classes));
      if (pool[a].empty()) throw StateError("intervene: no top image of class " + std::to_string(a));
      const std::size_t j = pool[a][rng.index(pool[a].size())];
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::copy_n(ds.images.data().begin() + static_cast<std::ptrdiff_t>((j * c + ch) * h * w), top,
                    out.images.data().begin() + static_cast<std::ptrdiff_t>((i * c + ch) * h * w));
      }
      rec.attribute[i] = a;
    }
  } else {
    if (src.clean.shape() != ds.images.shape()) {
      throw StateError("intervene: spurious record lacks the clean images");
    }
    out.images = src.clean;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      Rng rng(Rng::derive(Rng::derive(seed, kInterveneStream), i));
      const auto a = static_cast<std::uint32_t>(rng.index(ds.classes));
      rec.attribute[i] = a;
      stamp(out.images, i, src.spec, src.spec.locations, a);
    }
  }
  out.provenance = ds.provenance + "+do(s)";
  return out;
}

LabeledDataset compose_dominoes(const LabeledDataset& top, const LabeledDataset& bottom,
                                std::uint64_t pairing_seed, double correlation) {
  validate(top);
  validate(bottom);
  if (top.images.dim(3) != bottom.images.dim(3)) {
    throw ShapeError("compose_dominoes: width mismatch, top " + shape_str(top.images.shape()) +
                     " vs bottom " + shape_str(bottom.images.shape()));
  }
  if (top.images.dim(1) != bottom.images.dim(1)) {
    throw ShapeError("compose_dominoes: channel mismatch");
  }
  if (top.classes != bottom.classes) {
    throw ConfigError("compose_dominoes: top and bottom class counts differ");
  }
  if (correlation < 0.0 || correlation > 1.0) {
    throw ConfigError("compose_dominoes: correlation must lie in [0, 1]");
  }
  std::vector<std::vector<std::size_t>> pool(top.classes);
  for (std::size_t i = 0; i < top.size(); ++i) pool[top.labels[i]].push_back(i);

  const std::size_t c = bottom.images.dim(1), ht = top.images.dim(2), hb = bottom.images.dim(2),
                    w = bottom.images.dim(3);
  LabeledDataset out;
  out.images = Tensor({bottom.size(), c, ht + hb, w}, 0.0f);
  out.labels = bottom.labels;
  out.classes = bottom.classes;
  out.domino_top_rows = ht;
  out.provenance = "domino(top=" + top.provenance + ",bottom=" + bottom.provenance + ")";
  SpuriousRecord rec;
  rec.spec.kind = SpuriousSpec::Kind::kDominoTop;
  rec.spec.correlation = correlation;
  rec.attribute.resize(bottom.size());

  const auto tsrc = top.images.data();
  const auto bsrc = bottom.images.data();
  auto dst = out.images.data();
  for (std::size_t i = 0; i < bottom.size(); ++i) {
    Rng rng(Rng::derive(Rng::derive(pairing_seed, kPairStream), i));
    const std::uint32_t y = bottom.labels[i];
    const std::uint32_t a = rng.bernoulli(correlation) ? y : draw_other(rng, y, top.classes);
    if (pool[a].empty()) {
      throw ConfigError("compose_dominoes: top set has no image of class " + std::to_string(a));
    }
    const std::size_t j = pool[a][rng.index(pool[a].size())];
    rec.attribute[i] = a;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto out_plane = dst.begin() + static_cast<std::ptrdiff_t>((i * c + ch) * (ht + hb) * w);
      std::copy_n(tsrc.begin() + static_cast<std::ptrdiff_t>((j * c + ch) * ht * w), ht * w, out_plane);
      std::copy_n(bsrc.begin() + static_cast<std::ptrdiff_t>((i * c + ch) * hb * w), hb * w,
                  out_plane + static_cast<std::ptrdiff_t>(ht * w));
    }
  }
  out.spurious = std::move(rec);
  return out;
}

LabeledDataset mask_core_only(const LabeledDataset& ds) {
  if (!ds.domino_top_rows) throw StateError("mask_core_only: dataset is not a domino dataset");
  LabeledDataset out = ds;
  const std::size_t n = ds.size(), c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
  auto data = out.images.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::fill_n(data.begin() + static_cast<std::ptrdiff_t>((i * c + ch) * h * w),
                  ds.domino_top_rows * w, 0.0f);
    }
  }
  out.provenance = ds.provenance + "+core_only";
  return out;
}

}  // namespace dsprobe
