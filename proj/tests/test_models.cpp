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
#include <vector>

#include "doctest.h"

#include "dsprobe/model.hpp"
#include "dsprobe/rng.hpp"

using namespace dsprobe;

namespace {

Tensor random_images(std::size_t n, const Shape& chw, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, chw[0], chw[1], chw[2]});
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform());
  return t;
}

// relu(W x + b) in double for one row, W stored out x in.
std::vector<double> dense_relu(const Tensor64& w, const Tensor64& b, const std::vector<double>& x, bool act) {
  std::vector<double> y(w.dim(0));
  for (std::size_t o = 0; o < y.size(); ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < x.size(); ++i) acc += w[o * x.size() + i] * x[i];
    y[o] = act ? std::max(acc, 0.0) : acc;
  }
  return y;
}

ModelSpec tiny_patchpool(std::size_t hw, std::size_t patch) {
  ModelSpec s;
  s.input_shape = {1, hw, hw};
  s.classes = 2;
  s.layers = {PatchPoolLayer{patch, {4}, {3}}, DenseLayer{2}};
  return s;
}

}  // namespace

TEST_CASE("cnn-small emits N x C logits") {
  Model m(preset_model("cnn-small", {1, 28, 28}, 2), 1);
  CHECK(m.logits(random_images(3, {1, 28, 28}, 2)).shape() == Shape{3, 2});
}

TEST_CASE("same seed gives identical initial parameters") {
  Model a(preset_model("cnn-small", {1, 28, 28}, 2), 7), b(preset_model("cnn-small", {1, 28, 28}, 2), 7),
      c(preset_model("cnn-small", {1, 28, 28}, 2), 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].value == b.parameters()[i].value);
    differs = differs || !(a.parameters()[i].value == c.parameters()[i].value);
  }
  CHECK(differs);
}

TEST_CASE("probe policy after every relu counts relus plus the final layer") {
  ModelSpec s = preset_model("mlp-2", {1, 8, 8}, 2);
  s.layers.insert(s.layers.end() - 1, {DenseLayer{16}, ReluLayer{}});
  s.probes.kind = ProbePolicy::Kind::kRelu;
  CHECK(resolve_probes(s).size() == 4);
  Model m(s, 1);
  CHECK(m.probe_count() == 4);
  CHECK(m.probe_layers().back() == s.layers.size());
}

TEST_CASE("forward_with_probes returns one embedding per probe and unchanged logits") {
  Model m(preset_model("cnn-small", {1, 28, 28}, 2), 3);
  const Tensor x = random_images(1, {1, 28, 28}, 4);
  const auto out = m.forward_with_probes(x);
  CHECK(out.embeddings.size() == m.probe_count());
  CHECK(out.logits == m.logits(x));
  for (std::size_t p = 0; p < m.probe_count(); ++p) {
    CAPTURE(p);
    CHECK(out.embeddings[p] == m.forward_until(x, m.probe_layers()[p]));
  }
}

TEST_CASE("probe embeddings exist for every sample at every probe") {
  Model m(preset_model("cnn-2conv", {1, 8, 8}, 3), 5);
  const auto out = m.forward_with_probes(random_images(7, {1, 8, 8}, 6));
  for (const auto& e : out.embeddings) CHECK(e.dim(0) == 7);
}

TEST_CASE("patch pooling is invariant to swapping patches") {
  Model m(preset_model("patchpool", {1, 28, 28}, 2), 11);
  const Tensor x = random_images(1, {1, 28, 28}, 12);
  Tensor y = x;
  // Swap the 7x7 patches at grid (0,0) and (2,3).
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) std::swap(y[r * 28 + c], y[(14 + r) * 28 + 21 + c]);
  const Tensor a = m.logits(x), b = m.logits(y);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-5f);
}

TEST_CASE("a single-patch image reduces patch pooling to a plain MLP") {
  Model64 m(tiny_patchpool(4, 4), 13);
  Rng rng(14);
  Tensor64 x({1, 1, 4, 4});
  for (auto& v : x.storage()) v = rng.uniform();
  const auto& p = m.parameters();
  std::vector<double> h(x.storage().begin(), x.storage().end());
  h = dense_relu(p[0].value, p[1].value, h, true);
  h = dense_relu(p[2].value, p[3].value, h, true);
  h = dense_relu(p[4].value, p[5].value, h, false);
  const Tensor64 got = m.logits(x);
  for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(h[i]).epsilon(1e-12));
}

TEST_CASE("an all-zero input gives rho(P * phi(0))") {
  Model64 m(tiny_patchpool(8, 4), 15);
  const auto& p = m.parameters();
  std::vector<double> phi0 = dense_relu(p[0].value, p[1].value, std::vector<double>(16, 0.0), true);
  for (auto& v : phi0) v *= 4.0;  // four patches
  std::vector<double> h = dense_relu(p[2].value, p[3].value, phi0, true);
  h = dense_relu(p[4].value, p[5].value, h, false);
  const Tensor64 got = m.logits(Tensor64({1, 1, 8, 8}, 0.0));
  for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(h[i]).epsilon(1e-12));
}

TEST_CASE("model specs round-trip through JSON") {
  for (const char* name : {"cnn-small", "mlp-2", "patchpool", "linear", "conv-relu-linear", "cnn-2conv"}) {
    CAPTURE(name);
    const ModelSpec s = preset_model(name, {1, 28, 28}, 2);
    const ModelSpec t = model_spec_from_json(to_json(s));
    CHECK(to_json(t) == to_json(s));
    CHECK(resolve_probes(t) == resolve_probes(s));
  }
}

TEST_CASE("invalid model specs are rejected") {
  CHECK_THROWS_AS(preset_model("resnet", {1, 28, 28}, 2), ConfigError);
  ModelSpec s = preset_model("mlp-2", {1, 8, 8}, 2);
  s.layers.pop_back();
  CHECK_THROWS(resolve_probes(s));
  Model m(preset_model("mlp-2", {1, 8, 8}, 2), 1);
  CHECK_THROWS_AS(m.logits(Tensor({1, 1, 9, 8})), ShapeError);
}
