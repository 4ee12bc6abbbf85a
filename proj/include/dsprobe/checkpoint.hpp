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

#include <cstdint>
#include <filesystem>

#include "dsprobe/model.hpp"
#include "dsprobe/train.hpp"

namespace dsprobe {

// Checkpoint file, little-endian:
//   magic "DSCK" | u32 version | u64 header bytes | JSON header
//   | parameter tensors | Adam first moments | Adam second moments
//   | best-epoch parameters, each tensor in the DSTF layout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  TrainState state;
};

/// Writes through a temporary file and renames, so readers never observe a
/// partially written checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TrainState& state);

/// Throws FormatError on truncation or corruption and on a version mismatch;
/// nothing is returned unless the whole file parsed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsprobe
