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

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <type_traits>
#include <vector>

namespace dsprobe {

// Little-endian and big-endian stream helpers shared by the binary formats.

template <typename T>
using uint_of = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                std::conditional_t<sizeof(T) == 2, std::uint16_t,
                std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;

template <typename T>
void put_le(std::ostream& out, T value) {
  auto bits = std::bit_cast<uint_of<T>>(value);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  uint_of<T> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<uint_of<T>>(static_cast<uint_of<T>>(buf[i]) << (8 * i));
  }
  value = std::bit_cast<T>(bits);
  return true;
}

template <typename T>
void put_le_array(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) put_le(out, v);
  }
}

template <typename T>
bool get_le_array(std::istream& in, std::span<T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
    return static_cast<std::size_t>(in.gcount()) == values.size_bytes();
  } else {
    for (T& v : values) {
      if (!get_le(in, v)) return false;
    }
    return true;
  }
}

inline bool get_be_u32(std::istream& in, std::uint32_t& value) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) return false;
  value = (std::uint32_t{buf[0]} << 24) | (std::uint32_t{buf[1]} << 16) |
          (std::uint32_t{buf[2]} << 8) | std::uint32_t{buf[3]};
  return true;
}

}  // namespace dsprobe
