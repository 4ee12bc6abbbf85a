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

#include <filesystem>

#include "dsprobe/dataset.hpp"

namespace dsprobe {

/// Big-endian IDX files (0x00000803 images, 0x00000801 labels). Pixels are
/// scaled from u8 to [0, 1]; class count is max label + 1.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace dsprobe
