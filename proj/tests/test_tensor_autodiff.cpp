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
#include <cstdint>
#include <vector>

#include "doctest.h"

#include "dsprobe/autodiff.hpp"
#include "dsprobe/gradcheck.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/ops.hpp"
#include "dsprobe/optim.hpp"
#include "dsprobe/rng.hpp"
#include "dsprobe/tensor.hpp"

using namespace dsprobe;

namespace {

Tensor64 random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor64 t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Direct six-loop cross-correlation, the oracle for conv2d.
Tensor64 naive_conv(const Tensor64& x, const Tensor64& w, const Tensor64& b, std::size_t stride,
                    std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor64 out({n, o, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[f];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                acc += x[((s * c + ch) * h + r) * wd + q] * w[((f * c + ch) * k + u) * k + v];
              }
          out[((s * o + f) * oh + i) * ow + j] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("relu zeroes negatives and keeps positives") {
  Tape<float> tape;
  auto y = relu(tape.input(Tensor({3}, std::vector<float>{-1, 0, 2})));
  CHECK(y.value() == Tensor({3}, std::vector<float>{0, 0, 2}));
}

TEST_CASE("conv2d of ones with a ones kernel sums the window") {
  Tape<float> tape;
  auto y = conv2d(tape.input(Tensor({1, 1, 3, 3}, 1.0f)), tape.input(Tensor({1, 1, 3, 3}, 1.0f)),
                  tape.input(Tensor({1}, 0.0f)));
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value()[0] == 9.0f);
}

TEST_CASE("conv2d matches a direct loop oracle with stride and padding") {
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}}) {
    const Tensor64 x = random_tensor({2, 3, 6, 5}, 1), w = random_tensor({4, 3, 3, 3}, 2),
                   b = random_tensor({4}, 3);
    Tape<double> tape;
    auto y = conv2d(tape.input(x), tape.input(w), tape.input(b), {stride, pad});
    const Tensor64 want = naive_conv(x, w, b, stride, pad);
    REQUIRE(y.shape() == want.shape());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul by the identity returns the operand") {
  Tape<double> tape;
  Tensor64 eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const Tensor64 a = random_tensor({3, 4}, 5);
  auto y = matmul(tape.input(eye), tape.input(a));
  CHECK(y.value() == a);
}

TEST_CASE("cross-entropy reference values") {
  const std::vector<std::uint32_t> zero{0};
  {
    Tape<double> tape;
    auto l = cross_entropy(tape.input(Tensor64({1, 2}, 0.0)), zero);
    CHECK(l.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    Tape<double> tape;
    auto l = cross_entropy(tape.input(Tensor64({1, 2}, std::vector<double>{20, -20})), zero);
    CHECK(l.value().item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(l.value().item() < 1e-15);
  }
  {
    Tape<double> tape;
    const std::vector<std::uint32_t> labels{0, 1};
    auto l = cross_entropy(tape.input(Tensor64({2, 2}, 0.0)), labels);
    CHECK(l.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("gradient of a sum is all ones") {
  Tape<double> tape;
  auto x = tape.input(random_tensor({2, 3}, 7));
  auto s = sum_reduce(x);
  tape.backward_from(s, Tensor64::scalar(1.0));
  CHECK(*tape.grad(x) == Tensor64({2, 3}, 1.0));
}

TEST_CASE("relu passes no gradient in its inactive region") {
  Tape<double> tape;
  auto x = tape.input(Tensor64({2}, std::vector<double>{-1.0, 2.0}));
  tape.backward_from(sum_reduce(relu(x)), Tensor64::scalar(1.0));
  CHECK((*tape.grad(x))[0] == 0.0);
  CHECK((*tape.grad(x))[1] == 1.0);
}

TEST_CASE("recording after backward is rejected") {
  Tape<double> tape;
  auto x = tape.input(Tensor64({1}, 1.0));
  auto s = sum_reduce(x);
  tape.backward_from(s, Tensor64::scalar(1.0));
  CHECK_THROWS_AS(relu(x), StateError);
}

TEST_CASE("non-finite forward values raise NumericError") {
  Tape<double> tape;
  auto x = tape.input(Tensor64({1}, std::vector<double>{1e308}));
  CHECK_THROWS_AS(scale(x, 1e10), NumericError);
}

TEST_CASE("every primitive passes a central-difference check") {
  const double h = 1e-5, tol = 1e-5;
  auto check = [&](const char* name, ScalarFn fn, std::vector<Tensor64> inputs) {
    CAPTURE(name);
    const GradcheckReport r = gradcheck_inputs(fn, std::move(inputs), h, tol);
    for (const auto& b : r.blocks) {
      CAPTURE(b.name);
      CHECK(b.max_rel_error < tol);
    }
    CHECK(r.passed());
  };
  const std::vector<std::uint32_t> labels{0, 2, 1};
  check("matmul", [](Tape<double>&, std::span<const Var<double>> v) { return sum_reduce(matmul(v[0], v[1])); },
        {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)});
  check("dense+ce",
        [&](Tape<double>&, std::span<const Var<double>> v) { return cross_entropy(dense(v[0], v[1], v[2]), labels); },
        {random_tensor({3, 5}, 3), random_tensor({3, 5}, 4), random_tensor({3}, 5)});
  check("conv2d+ce",
        [&](Tape<double>&, std::span<const Var<double>> v) {
          auto y = flatten(conv2d(v[0], v[1], v[2], {2, 1}));
          return cross_entropy(dense(y, v[3], v[4]), labels);
        },
        {random_tensor({3, 2, 5, 5}, 6), random_tensor({2, 2, 3, 3}, 7), random_tensor({2}, 8),
         random_tensor({3, 18}, 9), random_tensor({3}, 10)});
  check("relu", [](Tape<double>&, std::span<const Var<double>> v) { return sum_reduce(mul(relu(v[0]), v[1])); },
        {random_tensor({10}, 11), random_tensor({10}, 12)});
  check("max_pool2d",
        [](Tape<double>&, std::span<const Var<double>> v) { return sum_reduce(mul(max_pool2d(v[0], 2), v[1])); },
        {random_tensor({1, 2, 4, 4}, 13), random_tensor({1, 2, 2, 2}, 14)});
  check("avg_pool2d",
        [](Tape<double>&, std::span<const Var<double>> v) { return sum_reduce(mul(avg_pool2d(v[0], 2, 1), v[1])); },
        {random_tensor({1, 1, 4, 4}, 15), random_tensor({1, 1, 3, 3}, 16)});
  check("adaptive_avg_pool2d",
        [](Tape<double>&, std::span<const Var<double>> v) {
          return sum_reduce(mul(adaptive_avg_pool2d(v[0], 3, 2), v[1]));
        },
        {random_tensor({1, 2, 7, 5}, 17), random_tensor({1, 2, 3, 2}, 18)});
  check("softmax", [](Tape<double>&, std::span<const Var<double>> v) { return sum_reduce(mul(softmax(v[0]), v[1])); },
        {random_tensor({2, 3}, 19), random_tensor({2, 3}, 20)});
  check("add/sub/scale",
        [](Tape<double>&, std::span<const Var<double>> v) {
          return sum_reduce(mul(sub(add(v[0], v[1]), scale(v[1], 3.0)), v[0]));
        },
        {random_tensor({4}, 21), random_tensor({4}, 22)});
  check("soft_cross_entropy",
        [](Tape<double>&, std::span<const Var<double>> v) {
          return soft_cross_entropy(v[0], Tensor64({3}, std::vector<double>{0.2, 0.5, 0.3}));
        },
        {random_tensor({2, 3}, 23)});
  check("patchify+group_sum",
        [](Tape<double>&, std::span<const Var<double>> v) {
          return sum_reduce(mul(group_sum(patchify(v[0], 2), 4), v[1]));
        },
        {random_tensor({2, 1, 4, 4}, 24), random_tensor({2, 4}, 25)});
  check("reshape", [](Tape<double>&, std::span<const Var<double>> v) { return sum_reduce(mul(reshape(v[0], {3, 2}), v[1])); },
        {random_tensor({2, 3}, 26), random_tensor({3, 2}, 27)});
}

TEST_CASE("linear model under a quadratic loss matches the closed-form gradient") {
  // loss = sum((X w^T + b - t)^2), so dL/dw = 2 r^T X and dL/db = 2 sum r.
  const Tensor64 x = random_tensor({5, 3}, 31), w = random_tensor({1, 3}, 32), b = random_tensor({1}, 33),
                 t = random_tensor({5, 1}, 34);
  Tape<double> tape;
  auto vw = tape.input(w), vb = tape.input(b);
  auto r = sub(dense(tape.input(x, false), vw, vb), tape.constant(t));
  tape.backward_from(sum_reduce(mul(r, r)), Tensor64::scalar(1.0));
  std::vector<double> res(5), gw(3, 0.0);
  double gb = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    res[i] = b[0] - t[i];
    for (std::size_t j = 0; j < 3; ++j) res[i] += x[i * 3 + j] * w[j];
    gb += 2 * res[i];
    for (std::size_t j = 0; j < 3; ++j) gw[j] += 2 * res[i] * x[i * 3 + j];
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK((*tape.grad(vw))[j] == doctest::Approx(gw[j]).epsilon(1e-8));
  CHECK((*tape.grad(vb))[0] == doctest::Approx(gb).epsilon(1e-8));
}

TEST_CASE("two-conv CNN passes the model-level finite-difference check") {
  Model64 model(preset_model("cnn-2conv", {1, 6, 6}, 3), 42);
  const Tensor64 batch = random_tensor({4, 1, 6, 6}, 43);
  const std::vector<std::uint32_t> labels{0, 1, 2, 1};
  const GradcheckReport r = finite_diff_gradcheck(model, batch, labels, 1e-5, 1e-5);
  CHECK(r.blocks.size() == model.parameters().size());
  for (const auto& b : r.blocks) {
    CAPTURE(b.name);
    CHECK(b.max_rel_error < 1e-5);
  }
}

TEST_CASE("gradcheck without parameter blocks gives an empty report") {
  // Every model spec ends in a dense layer, so the parameter-free case is
  // exercised through the input-level checker.
  const GradcheckReport r = gradcheck_inputs(
      [](Tape<double>& tape, std::span<const Var<double>>) {
        return sum_reduce(tape.constant(Tensor64({2}, 1.0)));
      },
      {}, 1e-5, 1e-5);
  CHECK(r.blocks.empty());
  CHECK(r.passed());
}

TEST_CASE("SGD and Adam reference updates") {
  ParamGrads<double> grads;
  SUBCASE("sgd lr 0.1 moves 1 to 0.9") {
    OptimizerState<double> s;
    s.kind = OptimizerKind::kSgd;
    s.lr = 0.1;
    Tensor64 p({1}, 1.0);
    grads.emplace(0, Tensor64({1}, 1.0));
    std::vector<Tensor64*> ps{&p};
    optimizer_step(s, std::span<Tensor64* const>(ps), grads);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  }
  SUBCASE("adam with zero gradient leaves the parameter") {
    OptimizerState<double> s;
    Tensor64 p({1}, 1.0);
    grads.emplace(0, Tensor64({1}, 0.0));
    std::vector<Tensor64*> ps{&p};
    optimizer_step(s, std::span<Tensor64* const>(ps), grads);
    CHECK(p[0] == 1.0);
  }
  SUBCASE("first adam step moves by about lr") {
    OptimizerState<double> s;
    s.lr = 0.01;
    Tensor64 p({1}, 1.0);
    grads.emplace(0, Tensor64({1}, 1.0));
    std::vector<Tensor64*> ps{&p};
    optimizer_step(s, std::span<Tensor64* const>(ps), grads);
    // m_hat = 1, v_hat = 1, step = lr * 1 / (1 + eps).
    CHECK(p[0] == doctest::Approx(1.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
  }
}

TEST_CASE("identical seeds give bit-identical parameters after several steps") {
  auto run = [] {
    Model64 model(preset_model("cnn-2conv", {1, 6, 6}, 2), 9);
    OptimizerState<double> s;
    const Tensor64 batch = random_tensor({4, 1, 6, 6}, 10);
    const std::vector<std::uint32_t> labels{0, 1, 1, 0};
    for (int step = 0; step < 3; ++step) {
      Tape<double> tape;
      auto trace = model.forward(tape, tape.input(batch, false));
      auto grads = tape.backward(cross_entropy(trace.output, labels));
      auto ps = model.parameter_values();
      optimizer_step(s, std::span<Tensor64* const>(ps), grads);
    }
    return model.parameters();
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value == b[i].value);
}
