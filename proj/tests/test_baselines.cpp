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

#include <cmath>
#include <vector>

#include "doctest.h"

#include "dsprobe/baselines.hpp"
#include "dsprobe/error.hpp"
#include "dsprobe/glyphs.hpp"
#include "dsprobe/spurious.hpp"

using namespace dsprobe;

namespace {

// Two classes on a 1 x 4 x 4 grid: class 0 lights pixel 0, class 1 pixel 15.
LabeledDataset two_pixel_set(std::size_t per_class) {
  LabeledDataset ds;
  ds.classes = 2;
  ds.images = Tensor({2 * per_class, 1, 4, 4});
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::uint32_t y = static_cast<std::uint32_t>(i % 2);
    ds.labels.push_back(y);
    ds.images[i * 16 + (y ? 15 : 0)] = 1.0f;
  }
  return ds;
}

}  // namespace

TEST_CASE("softmax entropy matches closed forms in nats") {
  const std::vector<double> two{0.0, 0.0};
  CHECK(softmax_entropy(two) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const std::vector<double> four{3.0, 3.0, 3.0, 3.0};
  CHECK(softmax_entropy(four) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // p = (1/4, 3/4)
  const std::vector<double> skew{0.0, std::log(3.0)};
  const double h = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
  CHECK(softmax_entropy(skew) == doctest::Approx(h).epsilon(1e-12));
  const std::vector<double> sharp{1000.0, 0.0};
  const double e = softmax_entropy(sharp);
  CHECK(std::isfinite(e));
  CHECK(e >= 0.0);
  CHECK(e < 1e-12);
}

TEST_CASE("linear ensemble on separable data drives entropy toward zero") {
  const LabeledDataset ds = two_pixel_set(64);
  EnsembleSpec spec;
  spec.count = 3;
  spec.family = "linear";
  spec.train.epochs = 40;
  spec.train.batch_size = 16;
  spec.train.lr = 0.05;
  const EnsembleEntropy short_run = [&] {
    EnsembleSpec s = spec;
    s.train.epochs = 1;
    s.train.lr = 0.001;
    return ensemble_entropy(ds, ds, s, 5);
  }();
  const EnsembleEntropy r = ensemble_entropy(ds, ds, spec, 5);
  CHECK(r.members == 3);
  REQUIRE(r.per_sample.size() == ds.size());
  CHECK(r.mean < 0.05);
  CHECK(r.mean < short_run.mean);
  for (double h : r.per_sample) {
    CHECK(h >= 0.0);
    CHECK(h <= std::log(2.0) + 1e-12);
  }
}

TEST_CASE("ensemble rejects a single member") {
  const LabeledDataset ds = two_pixel_set(8);
  EnsembleSpec spec;
  spec.count = 1;
  CHECK_THROWS_AS(ensemble_entropy(ds, ds, spec, 1), ConfigError);
}

TEST_CASE("dominoes with the top already masked: validation equals core-only") {
  const LabeledDataset top = gen_glyphs(std::vector<std::uint32_t>{2, 3}, 60, 14, 14, 11);
  const LabeledDataset bottom = gen_glyphs(std::vector<std::uint32_t>{0, 1}, 60, 14, 14, 12);
  const LabeledDataset masked = mask_core_only(compose_dominoes(top, bottom, 13));
  const Splits s = split_dataset(masked, 0.25, 0.0, 3);
  Model model(preset_model("mlp-2", masked.sample_shape(), 2), 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 3;
  train(model, s.train, nullptr, cfg);
  const CoreOnlyAccuracy acc = core_only_accuracy(model, s.val);
  CHECK(acc.validation == acc.core_only);
  CHECK(acc.validation == doctest::Approx(accuracy(model, s.val)));
}

TEST_CASE("a spurious patch independent of the label is benign") {
  // Correlation 0.5 over two classes: the patch location carries no label
  // information, so do(s) leaves the distribution unchanged.
  LabeledDataset base = gen_glyphs(std::vector<std::uint32_t>{0, 1}, 150, 16, 16, 21,
                                   glyph_style_preset("standard"));
  SpuriousSpec sp;
  sp.patch_size = 3;
  sp.correlation = 0.5;
  const LabeledDataset ds = inject_patch(base, sp, 22);
  HarmfulnessParams p;
  p.family = preset_model("mlp-2", ds.sample_shape(), 2);
  p.train.epochs = 3;
  p.seeds = {1, 2, 3, 4, 5};
  const HarmfulnessVerdict v = harmfulness_verdict(ds, p);
  CHECK(v.psi_observational.size() == 5);
  CHECK(v.psi_interventional.size() == 5);
  CHECK_FALSE(v.harmful);
  CHECK(v.verdict == "benign");
}

TEST_CASE("harmfulness argument checks") {
  LabeledDataset base = gen_glyphs(2, 20, 12, 12, 1);
  HarmfulnessParams p;
  p.family = preset_model("linear", base.sample_shape(), 2);
  SUBCASE("no spurious record") { CHECK_THROWS_AS(harmfulness_verdict(base, p), ConfigError); }
  SpuriousSpec sp;
  sp.patch_size = 3;
  const LabeledDataset ds = inject_patch(base, sp, 2);
  SUBCASE("mean-pd needs three probes") {
    p.metric = DifficultyMetric::kMeanPd;
    CHECK_THROWS_AS(harmfulness_verdict(ds, p), ConfigError);
  }
  SUBCASE("no seeds") {
    p.seeds.clear();
    CHECK_THROWS_AS(harmfulness_verdict(ds, p), ConfigError);
  }
  SUBCASE("negative tolerance") {
    p.tolerance = -1.0;
    CHECK_THROWS_AS(harmfulness_verdict(ds, p), ConfigError);
  }
}

TEST_CASE("difficulty metric names round-trip") {
  for (DifficultyMetric m : {DifficultyMetric::kMeanPd, DifficultyMetric::kAccuracy, DifficultyMetric::kVInfo}) {
    CHECK(difficulty_metric_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(difficulty_metric_from_string("entropy"), ConfigError);
}
