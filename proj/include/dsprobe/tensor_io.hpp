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
#include <iosfwd>
#include <string>
#include <variant>

#include "dsprobe/tensor.hpp"

namespace dsprobe {

// Native tensor format ("DSTF"), little-endian:
//   magic "DSTF" | u8 dtype (1 f32, 2 f64, 3 u32) | u8 rank | u16 reserved = 0
//   | rank x u64 dims | row-major payload

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kU32 = 3 };

using AnyTensor = std::variant<Tensor, Tensor64, LabelTensor>;

void write_tensor(std::ostream& out, const Tensor& t);
void write_tensor(std::ostream& out, const Tensor64& t);
void write_tensor(std::ostream& out, const LabelTensor& t);

/// Reads one tensor record. Throws FormatError on bad magic, dtype, rank or
/// a payload shorter than the header announces.
AnyTensor read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::filesystem::path& path, const BasicTensor<T>& t);

AnyTensor load_any_tensor(const std::filesystem::path& path);

/// Loads a tensor and requires the stored dtype to match T.
template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace dsprobe
