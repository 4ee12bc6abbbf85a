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

#include "dsprobe/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dsprobe/byte_order.hpp"

namespace dsprobe {
namespace {

constexpr std::array<char, 4> kMagic = {'D', 'S', 'T', 'F'};

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, double>) return DType::kF64;
  else return DType::kU32;
}

template <typename T>
void write_impl(std::ostream& out, const BasicTensor<T>& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  put_le<std::uint16_t>(out, 0);
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  put_le_array<T>(out, t.data());
  if (!out) throw FormatError("write_tensor: stream write failed");
}

template <typename T>
BasicTensor<T> read_payload(std::istream& in, Shape shape) {
  std::vector<T> data(numel(shape));
  if (!get_le_array<T>(in, data)) {
    throw FormatError("read_tensor: payload length mismatch (expected " +
                      std::to_string(data.size() * sizeof(T)) + " bytes for " +
                      shape_str(shape) + ")");
  }
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) { write_impl(out, t); }
void write_tensor(std::ostream& out, const Tensor64& t) { write_impl(out, t); }
void write_tensor(std::ostream& out, const LabelTensor& t) { write_impl(out, t); }

AnyTensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw FormatError("read_tensor: truncated header");
  if (magic != kMagic) throw FormatError("read_tensor: bad magic");
  std::uint8_t dtype = 0, rank = 0;
  std::uint16_t reserved = 0;
  if (!get_le(in, dtype) || !get_le(in, rank) || !get_le(in, reserved)) {
    throw FormatError("read_tensor: truncated header");
  }
  if (reserved != 0) throw FormatError("read_tensor: reserved field must be zero");
  if (rank > kMaxRank) throw FormatError("read_tensor: bad rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    std::uint64_t v = 0;
    if (!get_le(in, v)) throw FormatError("read_tensor: truncated dims");
    d = static_cast<std::size_t>(v);
  }
  switch (static_cast<DType>(dtype)) {
    case DType::kF32: return read_payload<float>(in, std::move(shape));
    case DType::kF64: return read_payload<double>(in, std::move(shape));
    case DType::kU32: return read_payload<std::uint32_t>(in, std::move(shape));
  }
  throw FormatError("read_tensor: bad dtype " + std::to_string(dtype));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const BasicTensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_tensor: cannot open " + path.string());
  write_tensor(out, t);
}

AnyTensor load_any_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_tensor: cannot open " + path.string());
  AnyTensor t = read_tensor(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("load_tensor: payload length mismatch (trailing bytes) in " + path.string());
  }
  return t;
}

template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& path) {
  AnyTensor any = load_any_tensor(path);
  if (auto* t = std::get_if<BasicTensor<T>>(&any)) return std::move(*t);
  throw FormatError("load_tensor: unexpected dtype in " + path.string());
}

template void save_tensor(const std::filesystem::path&, const Tensor&);
template void save_tensor(const std::filesystem::path&, const Tensor64&);
template void save_tensor(const std::filesystem::path&, const LabelTensor&);
template Tensor load_tensor<float>(const std::filesystem::path&);
template Tensor64 load_tensor<double>(const std::filesystem::path&);
template LabelTensor load_tensor<std::uint32_t>(const std::filesystem::path&);

}  // namespace dsprobe
