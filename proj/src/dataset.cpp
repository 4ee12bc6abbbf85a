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

#include "dsprobe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dsprobe/rng.hpp"
#include "dsprobe/tensor_io.hpp"
#include "json_util.hpp"

namespace dsprobe {

std::string to_string(SpuriousSpec::Kind kind) {
  switch (kind) {
    case SpuriousSpec::Kind::kPatch: return "patch";
    case SpuriousSpec::Kind::kSourceToken: return "source_token";
    case SpuriousSpec::Kind::kDominoTop: return "domino_top";
  }
  return "patch";
}

SpuriousSpec::Kind spurious_kind_from_string(const std::string& name) {
  if (name == "patch") return SpuriousSpec::Kind::kPatch;
  if (name == "source_token") return SpuriousSpec::Kind::kSourceToken;
  if (name == "domino_top") return SpuriousSpec::Kind::kDominoTop;
  throw ConfigError("unknown spurious kind '" + name + "'");
}

nlohmann::json to_json(const SpuriousSpec& spec) {
  nlohmann::json locs = nlohmann::json::array();
  for (const auto& l : spec.locations) locs.push_back({l.row, l.col});
  return {{"kind", to_string(spec.kind)},       {"patch_size", spec.patch_size},
          {"intensity", spec.intensity},        {"locations", locs},
          {"content_shared", spec.content_shared}, {"correlation", spec.correlation}};
}

SpuriousSpec spurious_spec_from_json(const nlohmann::json& j) {
  detail::require_keys(
      j, {"kind", "patch_size", "intensity", "locations", "content_shared", "correlation"},
      "spurious");
  SpuriousSpec spec;
  try {
    spec.kind = spurious_kind_from_string(detail::get_or<std::string>(j, "kind", "patch"));
    spec.patch_size = detail::get_or<std::size_t>(j, "patch_size", spec.patch_size);
    spec.intensity = detail::get_or<float>(j, "intensity", spec.intensity);
    spec.content_shared = detail::get_or<bool>(j, "content_shared", spec.content_shared);
    spec.correlation = detail::get_or<double>(j, "correlation", spec.correlation);
    if (j.contains("locations")) {
      for (const auto& l : j.at("locations")) {
        const auto rc = l.get<std::vector<std::size_t>>();
        if (rc.size() != 2) throw ConfigError("spurious: a location is [row, col]");
        spec.locations.push_back({rc[0], rc[1]});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("spurious: ") + e.what());
  }
  if (spec.correlation < 0.0 || spec.correlation > 1.0) {
    throw ConfigError("spurious: correlation must lie in [0, 1]");
  }
  return spec;
}

std::uint64_t LabeledDataset::count_of(std::uint32_t label) const {
  return static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), label));
}

void validate(const LabeledDataset& ds) {
  if (ds.images.rank() != 4) {
    throw ShapeError("dataset: images must be N x C x H x W, got " + shape_str(ds.images.shape()));
  }
  if (ds.images.dim(0) != ds.labels.size()) {
    throw ShapeError("dataset: " + std::to_string(ds.images.dim(0)) + " images but " +
                     std::to_string(ds.labels.size()) + " labels");
  }
  if (ds.classes < 1) throw ConfigError("dataset: class count must be positive");
  for (std::uint32_t y : ds.labels) {
    if (y >= ds.classes) {
      throw ConfigError("dataset: label " + std::to_string(y) + " outside " +
                        std::to_string(ds.classes) + " classes");
    }
  }
  for (float v : ds.images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw NumericError("dataset: pixel outside [0, 1]");
  }
  if (ds.spurious && ds.spurious->attribute.size() != ds.size()) {
    throw ShapeError("dataset: spurious record does not cover every sample");
  }
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> index) {
  LabeledDataset out;
  out.images = ds.images.gather_rows(index);
  out.classes = ds.classes;
  out.provenance = ds.provenance;
  out.domino_top_rows = ds.domino_top_rows;
  out.labels.reserve(index.size());
  for (std::size_t i : index) out.labels.push_back(ds.labels.at(i));
  if (ds.spurious) {
    SpuriousRecord rec;
    rec.spec = ds.spurious->spec;
    for (std::size_t i : index) rec.attribute.push_back(ds.spurious->attribute.at(i));
    if (!ds.spurious->clean.empty()) rec.clean = ds.spurious->clean.gather_rows(index);
    out.spurious = std::move(rec);
  }
  return out;
}

Splits split_dataset(const LabeledDataset& ds, double val, double test, std::uint64_t seed) {
  if (val < 0.0 || test < 0.0 || val + test >= 1.0) {
    throw ConfigError("split: val and test fractions must be non-negative and sum below 1");
  }
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, 0x53504c4954ULL));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_val = static_cast<std::size_t>(std::llround(val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(test * static_cast<double>(n)));
  const std::size_t n_train = n - n_val - n_test;
  auto take = [&](std::size_t b, std::size_t e) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                 order.begin() + static_cast<std::ptrdiff_t>(e));
    std::sort(idx.begin(), idx.end());
    return subset(ds, idx);
  };
  return {take(0, n_train), take(n_train, n_train + n_val), take(n_train + n_val, n)};
}

void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds) {
  validate(ds);
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  save_tensor(dir / "images.dstf", ds.images);
  save_tensor(dir / "labels.dstf", LabelTensor({ds.labels.size()}, ds.labels));
  manifest["images"] = "images.dstf";
  manifest["labels"] = "labels.dstf";
  if (ds.spurious) {
    save_tensor(dir / "spurious.dstf",
                LabelTensor({ds.spurious->attribute.size()}, ds.spurious->attribute));
    manifest["spurious"] = "spurious.dstf";
    manifest["spurious_spec"] = to_json(ds.spurious->spec);
    if (!ds.spurious->clean.empty()) {
      save_tensor(dir / "clean.dstf", ds.spurious->clean);
      manifest["clean"] = "clean.dstf";
    }
  }
  manifest["classes"] = ds.classes;
  manifest["provenance"] = ds.provenance;
  manifest["domino_top_rows"] = ds.domino_top_rows;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw FormatError("save_dataset: cannot write " + (dir / "manifest.json").string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  const auto manifest_path =
      std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("load_dataset: cannot open " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_dataset: " + std::string(e.what()));
  }
  detail::require_keys(m, {"images", "labels", "spurious", "spurious_spec", "clean", "classes",
                           "provenance", "domino_top_rows"},
                       "dataset manifest");
  const auto dir = manifest_path.parent_path();
  auto file = [&](const char* key) {
    return dir / detail::get_required<std::string>(m, key, "dataset manifest");
  };
  LabeledDataset ds;
  ds.images = load_tensor<float>(file("images"));
  ds.labels = load_tensor<std::uint32_t>(file("labels")).storage();
  ds.classes = detail::get_required<std::size_t>(m, "classes", "dataset manifest");
  ds.provenance = detail::get_or<std::string>(m, "provenance", "");
  ds.domino_top_rows = detail::get_or<std::size_t>(m, "domino_top_rows", 0);
  if (m.contains("spurious")) {
    SpuriousRecord rec;
    rec.attribute = load_tensor<std::uint32_t>(file("spurious")).storage();
    if (m.contains("spurious_spec")) rec.spec = spurious_spec_from_json(m.at("spurious_spec"));
    if (m.contains("clean")) rec.clean = load_tensor<float>(file("clean"));
    ds.spurious = std::move(rec);
  }
  validate(ds);
  return ds;
}

}  // namespace dsprobe
