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
#include <vector>

#include "dsprobe/dataset.hpp"

namespace dsprobe {

/// Corners first, then the remaining top and bottom border slots, one pixel
/// from the edge. Throws when the image cannot hold `count` disjoint patches.
std::vector<Location> default_patch_locations(std::size_t height, std::size_t width,
                                              std::size_t patch, std::size_t count);

/// Pixel pattern of attribute `a` inside a patch x patch square (row-major).
std::vector<float> patch_pattern(const SpuriousSpec& spec, std::uint32_t a);

/// Stamps the spurious feature. With probability spec.correlation a sample
/// gets its own class's attribute, otherwise a uniformly drawn other class.
LabeledDataset inject_patch(const LabeledDataset& ds, SpuriousSpec spec, std::uint64_t seed);

/// do(s): re-draws every attribute uniformly over all classes, independent
/// of the label. Pixels outside the feature are untouched.
LabeledDataset intervene_randomize_spurious(const LabeledDataset& ds, std::uint64_t seed);

/// Stacks top over bottom. The label is the bottom's; the top is drawn from
/// the top set's class equal to the label with probability `correlation`,
/// otherwise from the other class.
LabeledDataset compose_dominoes(const LabeledDataset& top, const LabeledDataset& bottom,
                                std::uint64_t pairing_seed, double correlation = 1.0);

/// Zeroes the top half of a domino dataset.
LabeledDataset mask_core_only(const LabeledDataset& ds);

}  // namespace dsprobe
