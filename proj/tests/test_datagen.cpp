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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"

#include "dsprobe/dataset.hpp"
#include "dsprobe/glyphs.hpp"
#include "dsprobe/idx.hpp"
#include "dsprobe/spurious.hpp"
#include "dsprobe/tensor_io.hpp"
#include "dsprobe/train.hpp"
#include "test_util.hpp"

using namespace dsprobe;

namespace {

const std::filesystem::path kFixtures = DSPROBE_FIXTURE_DIR;

bool patch_at(const LabeledDataset& ds, std::size_t i, const Location& at, const std::vector<float>& pattern) {
  const std::size_t w = ds.images.dim(3), h = ds.images.dim(2), p = ds.spurious->spec.patch_size;
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c)
      if (ds.images[i * h * w + (at.row + r) * w + at.col + c] != pattern[r * p + c]) return false;
  return true;
}

// Pearson correlation of two 0/1 series.
double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Pearson chi-square statistic of a 2 x 2 contingency table.
double chi_square_2x2(const std::vector<std::uint32_t>& x, const std::vector<std::uint32_t>& y) {
  double t[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < x.size(); ++i) t[x[i]][y[i]] += 1;
  const double n = static_cast<double>(x.size());
  double chi = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double e = (t[i][0] + t[i][1]) * (t[0][j] + t[1][j]) / n;
      chi += (t[i][j] - e) * (t[i][j] - e) / e;
    }
  return chi;
}

}  // namespace

TEST_CASE("glyph generator class counts and determinism") {
  const LabeledDataset a = gen_glyphs(2, 100, 28, 28, 5), b = gen_glyphs(2, 100, 28, 28, 5);
  CHECK(a.size() == 200);
  CHECK(a.count_of(0) == 100);
  CHECK(a.count_of(1) == 100);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK_FALSE(gen_glyphs(2, 100, 28, 28, 6).images == a.images);
  validate(a);
}

TEST_CASE("a larger glyph set extends a smaller one with the same seed") {
  const LabeledDataset small = gen_glyphs(3, 4, 16, 16, 9), large = gen_glyphs(3, 6, 16, 16, 9);
  CHECK(large.images.rows(0, small.size()) == small.images);
}

TEST_CASE("template ids select which glyph each class draws") {
  const std::vector<std::uint32_t> ids{4, 7};
  const LabeledDataset sel = gen_glyphs(ids, 10, 20, 20, 3);
  CHECK(sel.classes == 2);
  const std::vector<std::uint32_t> bad{1, 1};
  CHECK_THROWS_AS(gen_glyphs(bad, 10, 20, 20, 3), ConfigError);
  const std::vector<std::uint32_t> big{0, 10};
  CHECK_THROWS_AS(gen_glyphs(big, 10, 20, 20, 3), ConfigError);
}

TEST_CASE("mlp-2 learns a 5k-sample glyph instance to 90% held-out accuracy within 10 epochs") {
  const LabeledDataset ds = gen_glyphs(10, 500, 28, 28, 21, glyph_style_preset("standard"));
  const Splits s = split_dataset(ds, 0.2, 0.0, 21);
  Model m(preset_model("mlp-2", {1, 28, 28}, 10), 21);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 21;
  train(m, s.train, nullptr, cfg);
  CHECK(accuracy(m, s.val) >= 0.90);
}

TEST_CASE("full correlation stamps every sample at its own class location") {
  const LabeledDataset base = gen_glyphs(2, 50, 28, 28, 1);
  const LabeledDataset ds = inject_patch(base, SpuriousSpec{}, 2);
  const auto locs = default_patch_locations(28, 28, 5, 2);
  const auto pattern = patch_pattern(ds.spurious->spec, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds.spurious->attribute[i] == ds.labels[i]);
    CHECK(patch_at(ds, i, locs[ds.labels[i]], pattern));
  }
}

TEST_CASE("partial correlation matches its rate within a binomial interval") {
  SpuriousSpec spec;
  spec.correlation = 0.5;
  const LabeledDataset ds = inject_patch(gen_glyphs(2, 1000, 28, 28, 3), spec, 4);
  std::size_t own = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) own += ds.spurious->attribute[i] == ds.labels[i];
  const double rate = static_cast<double>(own) / static_cast<double>(ds.size());
  CHECK(std::abs(rate - 0.5) < 4.0 * std::sqrt(0.25 / static_cast<double>(ds.size())));

  spec.correlation = 0.9;
  const LabeledDataset d9 = inject_patch(gen_glyphs(2, 1000, 28, 28, 3), spec, 4);
  own = 0;
  for (std::size_t i = 0; i < d9.size(); ++i) own += d9.spurious->attribute[i] == d9.labels[i];
  CHECK(std::abs(static_cast<double>(own) / 2000.0 - 0.9) < 4.0 * std::sqrt(0.09 / 2000.0));
}

TEST_CASE("do(s) makes the attribute independent of the label") {
  const LabeledDataset ds = inject_patch(gen_glyphs(2, 2500, 16, 16, 5), SpuriousSpec{}, 6);
  CHECK(ds.spurious->attribute == ds.labels);
  const LabeledDataset di = intervene_randomize_spurious(ds, 7);
  std::vector<double> a, y;
  for (std::size_t i = 0; i < di.size(); ++i) {
    a.push_back(di.spurious->attribute[i]);
    y.push_back(di.labels[i]);
  }
  CHECK(std::abs(correlation(a, y)) < 0.05);
  // p > 0.01 for one degree of freedom.
  CHECK(chi_square_2x2(di.spurious->attribute, di.labels) < 6.635);
  CHECK(di.labels == ds.labels);
}

TEST_CASE("do(s) leaves pixels off the patch locations bit-exact") {
  const LabeledDataset ds = inject_patch(gen_glyphs(2, 200, 28, 28, 8), SpuriousSpec{}, 9);
  const LabeledDataset di = intervene_randomize_spurious(ds, 10);
  const auto locs = default_patch_locations(28, 28, 5, 2);
  auto on_patch = [&](std::size_t r, std::size_t c) {
    return std::any_of(locs.begin(), locs.end(), [&](const Location& l) {
      return r >= l.row && r < l.row + 5 && c >= l.col && c < l.col + 5;
    });
  };
  bool same = true;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c)
        if (!on_patch(r, c)) same = same && ds.images[i * 784 + r * 28 + c] == di.images[i * 784 + r * 28 + c];
  CHECK(same);
}

TEST_CASE("applying do(s) twice matches applying it once in distribution") {
  const LabeledDataset ds = inject_patch(gen_glyphs(2, 2500, 16, 16, 11), SpuriousSpec{}, 12);
  const LabeledDataset once = intervene_randomize_spurious(ds, 13);
  const LabeledDataset twice = intervene_randomize_spurious(once, 14);
  auto own_rate = [](const LabeledDataset& d) {
    double own = 0;
    for (std::size_t i = 0; i < d.size(); ++i) own += d.spurious->attribute[i] == d.labels[i];
    return own / static_cast<double>(d.size());
  };
  CHECK(std::abs(own_rate(once) - 0.5) < 0.03);
  CHECK(std::abs(own_rate(twice) - 0.5) < 0.03);
  CHECK(std::abs(correlation(std::vector<double>(twice.spurious->attribute.begin(), twice.spurious->attribute.end()),
                             std::vector<double>(twice.labels.begin(), twice.labels.end()))) < 0.05);
}

TEST_CASE("dominoes stack a 32x32 top over a 32x32 bottom") {
  const LabeledDataset top = gen_glyphs(std::vector<std::uint32_t>{2, 3}, 20, 32, 32, 1);
  const LabeledDataset bottom = gen_glyphs(std::vector<std::uint32_t>{0, 1}, 20, 32, 32, 2);
  const LabeledDataset dom = compose_dominoes(top, bottom, 3);
  CHECK(dom.images.shape() == Shape{40, 1, 64, 32});
  CHECK(dom.domino_top_rows == 32);
  CHECK(dom.labels == bottom.labels);
  for (std::size_t i = 0; i < dom.size(); ++i) {
    CAPTURE(i);
    // Bottom half is the bottom image.
    CHECK(std::equal(bottom.images.data().begin() + static_cast<std::ptrdiff_t>(i * 1024),
                     bottom.images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * 1024),
                     dom.images.data().begin() + static_cast<std::ptrdiff_t>(i * 2048 + 1024)));
    // Top half bit-equals a top image of the same class.
    bool found = false;
    for (std::size_t j = 0; j < top.size() && !found; ++j) {
      found = top.labels[j] == dom.labels[i] &&
              std::equal(top.images.data().begin() + static_cast<std::ptrdiff_t>(j * 1024),
                         top.images.data().begin() + static_cast<std::ptrdiff_t>((j + 1) * 1024),
                         dom.images.data().begin() + static_cast<std::ptrdiff_t>(i * 2048));
    }
    CHECK(found);
  }
}

TEST_CASE("core-only masking zeroes the top half and is idempotent") {
  const LabeledDataset top = gen_glyphs(2, 10, 32, 32, 4), bottom = gen_glyphs(2, 10, 32, 32, 5);
  const LabeledDataset dom = compose_dominoes(top, bottom, 6);
  const LabeledDataset m1 = mask_core_only(dom), m2 = mask_core_only(m1);
  for (std::size_t i = 0; i < dom.size(); ++i)
    for (std::size_t k = 0; k < 2048; ++k) {
      const float want = k < 1024 ? 0.0f : dom.images[i * 2048 + k];
      if (m1.images[i * 2048 + k] != want) FAIL("masked pixel differs at sample " << i << " offset " << k);
    }
  CHECK(m2.images == m1.images);
}

TEST_CASE("IDX fixture round-trips counts and pixels") {
  const LabeledDataset ds = load_idx(kFixtures / "tiny-images.idx3", kFixtures / "tiny-labels.idx1");
  CHECK(ds.images.shape() == Shape{4, 1, 2, 3});
  CHECK(ds.labels == std::vector<std::uint32_t>{3, 1, 4, 1});
  CHECK(ds.classes == 5);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(ds.images[n * 6 + r * 3 + c] == static_cast<float>(40 * n + 10 * r + 3 * c) / 255.0f);
}

TEST_CASE("IDX errors: wrong magic and count mismatch") {
  CHECK_THROWS_WITH_AS(load_idx(kFixtures / "wrong-magic.idx3", kFixtures / "tiny-labels.idx1"),
                       doctest::Contains("wrong magic"), FormatError);
  CHECK_THROWS_WITH_AS(load_idx(kFixtures / "tiny-images.idx3", kFixtures / "three-labels.idx1"),
                       doctest::Contains("count mismatch"), FormatError);
}

TEST_CASE("DSTF tensors round-trip bit-exactly") {
  Tensor t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(std::sin(1.0 + i)) * 1e3f;
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(std::get<Tensor>(read_tensor(ss)) == t);

  std::stringstream s0;
  write_tensor(s0, Tensor64::scalar(2.5));
  const Tensor64 back = std::get<Tensor64>(read_tensor(s0));
  CHECK(back.rank() == 0);
  CHECK(back.item() == 2.5);
}

TEST_CASE("a truncated DSTF payload is a length error") {
  std::stringstream ss;
  write_tensor(ss, Tensor({4, 4}, 1.0f));
  const std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor(cut), FormatError);
}

TEST_CASE("datasets round-trip through save and load") {
  const LabeledDataset ds = inject_patch(gen_glyphs(2, 5, 12, 12, 1), SpuriousSpec{}, 2);
  const auto dir = test_util::scratch_dir("dataset_roundtrip");
  save_dataset(dir, ds);
  const LabeledDataset back = load_dataset(dir);
  CHECK(back.images == ds.images);
  CHECK(back.labels == ds.labels);
  REQUIRE(back.spurious);
  CHECK(back.spurious->attribute == ds.spurious->attribute);
  CHECK(back.spurious->clean == ds.spurious->clean);
}
