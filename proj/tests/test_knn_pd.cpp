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
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "doctest.h"

#include "dsprobe/glyphs.hpp"
#include "dsprobe/knn.hpp"
#include "dsprobe/pd.hpp"
#include "dsprobe/rng.hpp"

using namespace dsprobe;

namespace {

struct OracleVote {
  std::uint32_t predicted;
  bool valid;
  std::vector<std::size_t> neighbors;
};

// Exhaustive search: sort every (distance, index) pair, take the first k,
// count votes, break vote ties toward the lower class.
OracleVote brute_force(const Tensor& bank, const std::vector<std::uint32_t>& labels,
                       const std::vector<float>& q, std::size_t k, std::size_t classes, double delta) {
  const std::size_t m = bank.dim(0), d = bank.dim(1);
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += std::abs(static_cast<double>(bank[i * d + j]) - q[j]);
    all.emplace_back(s, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> counts(classes, 0);
  OracleVote out{};
  for (std::size_t i = 0; i < k; ++i) {
    out.neighbors.push_back(all[i].second);
    ++counts[labels[all[i].second]];
  }
  out.predicted = static_cast<std::uint32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const double kk = static_cast<double>(k);
  if (classes == 2) {
    out.valid = std::abs(counts[1] / kk - 0.5) >= delta - 1e-12;
  } else {
    out.valid = counts[out.predicted] / kk >= 1.0 / static_cast<double>(classes) + delta - 1e-12;
  }
  return out;
}

PdHistogram histogram_of(const std::vector<std::optional<std::size_t>>& pds, std::size_t probes) {
  std::vector<PdRecord> recs(pds.size());
  for (std::size_t i = 0; i < pds.size(); ++i) {
    recs[i].sample_id = i;
    recs[i].pd = pds[i];
  }
  return pd_histogram(recs, probes);
}

}  // namespace

TEST_CASE("probe embeddings pool 16x16 to 8x8 and leave 4x4 alone") {
  Tensor big({2, 3, 16, 16}, 1.0f), small({2, 3, 4, 4}, 1.0f);
  CHECK(probe_embedding(big).shape() == Shape{2, 3 * 8 * 8});
  CHECK(probe_embedding(small).shape() == Shape{2, 3 * 4 * 4});
  CHECK(probe_embedding(small).storage() == small.storage());
  // 2x2 block means of a ramp.
  Tensor ramp({1, 1, 16, 16});
  for (std::size_t i = 0; i < 256; ++i) ramp[i] = static_cast<float>(i);
  const Tensor p = probe_embedding(ramp);
  CHECK(p[0] == doctest::Approx((0 + 1 + 16 + 17) / 4.0));
  CHECK(probe_embedding(Tensor({3, 5}, 2.0f)).shape() == Shape{3, 5});
}

TEST_CASE("stratified sample keeps per-class counts within one") {
  std::vector<std::uint32_t> labels;
  for (std::size_t i = 0; i < 300; ++i) labels.push_back(static_cast<std::uint32_t>(i % 7 == 0 ? 2 : i % 2));
  for (std::size_t m : {10, 31, 100}) {
    const auto ids = stratified_sample(labels, 3, m, 5);
    CHECK(ids.size() == m);
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    std::vector<std::size_t> counts(3, 0);
    for (auto i : ids) ++counts[labels[i]];
    CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  }
  CHECK(stratified_sample(labels, 3, 31, 5) == stratified_sample(labels, 3, 31, 5));
}

TEST_CASE("a bank of 29 identical positives votes 1 with f = 1") {
  ProbeSet set({Tensor({29, 4}, 0.5f)}, std::vector<std::uint32_t>(29, 1), std::vector<std::size_t>(29, 0), 2, 29,
               0.1, 8);
  const std::vector<float> q{9, 9, 9, 9};
  const KnnVote v = knn_predict(set, 1, q);
  CHECK(v.predicted == 1);
  CHECK(v.positive_fraction == 1.0);
  CHECK(v.valid);
}

TEST_CASE("15 of 29 positive neighbors is an invalid binary vote") {
  std::vector<std::uint32_t> labels(29, 0);
  std::fill(labels.begin(), labels.begin() + 15, 1u);
  const KnnVote v = vote(labels, 2, 0.1);
  CHECK(v.positive_fraction == doctest::Approx(15.0 / 29.0));
  CHECK(std::abs(v.positive_fraction - 0.5) == doctest::Approx(0.0172).epsilon(0.01));
  CHECK_FALSE(v.valid);
  CHECK(v.predicted == 1);
  // 18 of 29 is 0.62, valid.
  std::fill(labels.begin(), labels.begin() + 18, 1u);
  CHECK(vote(labels, 2, 0.1).valid);
}

TEST_CASE("vote ties resolve to the lower class") {
  const std::vector<std::uint32_t> labels{2, 1, 2, 1, 0};
  const KnnVote v = vote(labels, 3, 0.0);
  CHECK(v.predicted == 1);
  CHECK(v.counts == std::vector<std::uint32_t>{1, 2, 2});
}

TEST_CASE("kNN matches the exhaustive oracle on random 50-point banks, ties included") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t classes = trial % 2 ? 3 : 2, d = 1 + rng.index(4), k = 1 + 2 * rng.index(10);
    Tensor bank({50, d});
    std::vector<std::uint32_t> labels(50);
    // Small integer grid so equal distances are common.
    for (auto& v : bank.storage()) v = static_cast<float>(rng.index(3));
    for (auto& y : labels) y = static_cast<std::uint32_t>(rng.index(classes));
    ProbeSet set({bank}, labels, std::vector<std::size_t>(50, 0), classes, k, 0.1, 8);
    for (int q = 0; q < 20; ++q) {
      std::vector<float> query(d);
      for (auto& v : query) v = static_cast<float>(rng.index(3));
      const OracleVote want = brute_force(bank, labels, query, k, classes, 0.1);
      CHECK(nearest_neighbors(bank, query, k) == want.neighbors);
      const KnnVote got = knn_predict(set, 1, query);
      CHECK(got.predicted == want.predicted);
      CHECK(got.valid == want.valid);
    }
  }
}

TEST_CASE("prediction depth reference cases") {
  using C = std::vector<std::uint32_t>;
  using V = std::vector<std::uint8_t>;
  CHECK(prediction_depth(C{1, 1, 1, 1}, V{1, 1, 1, 1}) == std::optional<std::size_t>(1));
  CHECK(prediction_depth(C{0, 1, 1, 1}, V{1, 1, 1, 1}) == std::optional<std::size_t>(2));
  CHECK_FALSE(prediction_depth(C{1, 1, 1, 1}, V{1, 1, 1, 0}).has_value());
  CHECK_FALSE(prediction_depth(C{1, 1, 1, 1}, V{1, 0, 1, 1}).has_value());
  // An invalid probe before the last three only pushes the depth past it.
  CHECK(prediction_depth(C{1, 1, 1, 1, 1}, V{0, 1, 1, 1, 1}) == std::optional<std::size_t>(2));
  CHECK(prediction_depth(C{1, 0, 1, 1, 1}, V{1, 1, 1, 1, 1}) == std::optional<std::size_t>(3));
  CHECK_THROWS(prediction_depth(C{1, 1}, V{1, 1}));
}

TEST_CASE("prediction depth property: probes from pd onward agree with the last probe") {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 3 + rng.index(8);
    std::vector<std::uint32_t> c(n);
    std::vector<std::uint8_t> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = static_cast<std::uint32_t>(rng.index(2));
      v[i] = rng.bernoulli(0.85);
    }
    const auto pd = prediction_depth(c, v);
    const bool tail_valid = v[n - 1] && v[n - 2] && v[n - 3];
    CHECK(pd.has_value() == tail_valid);
    if (!pd) continue;
    for (std::size_t p = *pd; p <= n; ++p) CHECK((v[p - 1] && c[p - 1] == c[n - 1]));
    if (*pd > 1) CHECK_FALSE((v[*pd - 2] && c[*pd - 2] == c[n - 1]));
  }
}

TEST_CASE("histogram means") {
  const PdHistogram all_one = histogram_of(std::vector<std::optional<std::size_t>>(10, 1), 9);
  CHECK(all_one.mean_pd == 1.0);
  CHECK(all_one.undefined == 0);
  std::vector<std::optional<std::size_t>> half{1, 3, 1, 3, std::nullopt};
  const PdHistogram h = histogram_of(half, 4);
  CHECK(h.mean_pd == 2.0);
  CHECK(h.undefined == 1);
  CHECK(h.total == 5);
  CHECK(std::isnan(histogram_of({std::nullopt}, 4).mean_pd));
}

TEST_CASE("early-peak detector reference cases") {
  const PdHistogram peaked = histogram_of(std::vector<std::optional<std::size_t>>(30, 1), 9);
  for (double mu : {2.0, 5.0}) {
    const DetectorVerdict v = early_peak_detector(peaked, {0.25, 0.5, mu});
    CHECK(v.suspicious);
    CHECK(v.early_probes == 3);
  }
  std::vector<std::optional<std::size_t>> uniform;
  for (std::size_t p = 1; p <= 9; ++p)
    for (int r = 0; r < 4; ++r) uniform.push_back(p);
  const PdHistogram flat = histogram_of(uniform, 9);
  const DetectorVerdict v = early_peak_detector(flat, {0.25, 0.5, flat.mean_pd});
  CHECK_FALSE(v.suspicious);
  CHECK(v.early_mass == doctest::Approx(3.0 / 9.0));
}

TEST_CASE("snapshot series returns one deterministic histogram per requested epoch") {
  const LabeledDataset ds = gen_glyphs(2, 60, 8, 8, 1);
  const Splits s = split_dataset(ds, 0.25, 0.0, 1);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 2;
  ProbeParams pp;
  pp.bank_size = 60;
  pp.k = 9;
  const std::vector<std::size_t> epochs{0, 1, 2, 5, 10};
  auto run = [&] {
    Model m(preset_model("cnn-2conv", {1, 8, 8}, 2), 3);
    return epoch_snapshot_series(m, s.train, s.val, cfg, pp, epochs);
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].epoch == epochs[i]);
    CHECK(a[i].histogram.counts == b[i].histogram.counts);
    CHECK(a[i].histogram.undefined == b[i].histogram.undefined);
    CHECK(a[i].histogram.total == s.val.size());
  }
}
