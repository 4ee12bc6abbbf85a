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

#include "dsprobe/idx.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "dsprobe/byte_order.hpp"

namespace dsprobe {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open " + path.string());
  return in;
}

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!get_be_u32(in, v)) throw FormatError("idx: truncated header in " + path.string());
  return v;
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "idx: wrong magic 0x%08x (expected 0x%08x) in ", got, want);
    throw FormatError(buf + path.string());
  }
}

std::vector<unsigned char> read_body(std::istream& in, std::size_t bytes,
                                     const std::filesystem::path& path) {
  std::vector<unsigned char> body(bytes);
  in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw FormatError("idx: truncated file " + path.string() + " (expected " +
                      std::to_string(bytes) + " payload bytes)");
  }
  return body;
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto img = open(images);
  check_magic(read_u32(img, images), kImageMagic, images);
  const std::size_t n = read_u32(img, images);
  const std::size_t h = read_u32(img, images);
  const std::size_t w = read_u32(img, images);

  auto lab = open(labels);
  check_magic(read_u32(lab, labels), kLabelMagic, labels);
  const std::size_t n_labels = read_u32(lab, labels);
  if (n_labels != n) {
    throw FormatError("idx: count mismatch, " + std::to_string(n) + " images vs " +
                      std::to_string(n_labels) + " labels");
  }

  const auto pixels = read_body(img, n * h * w, images);
  const auto raw_labels = read_body(lab, n, labels);

  LabeledDataset ds;
  ds.images = Tensor({n, 1, h, w});
  auto data = ds.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) data[i] = static_cast<float>(pixels[i]) / 255.0f;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.classes = n ? *std::max_element(ds.labels.begin(), ds.labels.end()) + std::size_t{1} : 0;
  ds.provenance = "idx(" + images.filename().string() + ")";
  return ds;
}

}  // namespace dsprobe
