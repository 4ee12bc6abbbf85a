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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsprobe/tensor.hpp"

namespace dsprobe {

/// Top-left corner of a patch, in pixels.
struct Location {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Location&, const Location&) = default;
};

struct SpuriousSpec {
  enum class Kind {
    kPatch,        // attribute selects the patch location
    kSourceToken,  // fixed location, attribute selects the token pattern
    kDominoTop,    // attribute is the class of the top half of a domino
  };
  Kind kind = Kind::kPatch;
  std::size_t patch_size = 5;
  float intensity = 1.0f;
  /// One location per class (kPatch) or a single location (kSourceToken).
  /// Empty selects the default border table.
  std::vector<Location> locations;
  /// kPatch only: same content at every location, so only the position
  /// carries the attribute. When false each attribute also has its own
  /// pattern.
  bool content_shared = true;
  double correlation = 1.0;
};

std::string to_string(SpuriousSpec::Kind kind);
SpuriousSpec::Kind spurious_kind_from_string(const std::string& name);
nlohmann::json to_json(const SpuriousSpec& spec);
SpuriousSpec spurious_spec_from_json(const nlohmann::json& j);

/// Everything needed to re-sample the spurious attribute later.
struct SpuriousRecord {
  SpuriousSpec spec;
  std::vector<std::uint32_t> attribute;
  /// Images before the feature was stamped (kPatch, kSourceToken). Unused
  /// for dominoes, whose tops are re-paired instead.
  Tensor clean;
};

struct LabeledDataset {
  Tensor images;  // N x C x H x W, values in [0, 1]
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;
  std::optional<SpuriousRecord> spurious;
  std::string provenance;
  /// Rows of the top (spurious) half for domino datasets, 0 otherwise.
  std::size_t domino_top_rows = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  std::uint64_t count_of(std::uint32_t label) const;
};

/// Checks shapes, label range and pixel range; throws on violation.
void validate(const LabeledDataset& ds);

/// Rows in the given order; the spurious record follows the selection.
LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> index);

struct Splits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

/// Seeded disjoint split; `val` and `test` are fractions of the total.
Splits split_dataset(const LabeledDataset& ds, double val, double test, std::uint64_t seed);

/// Writes images/labels/spurious tensors plus manifest.json into `dir`.
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds);
/// Reads a dataset written by save_dataset (path to the manifest or its directory).
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace dsprobe
