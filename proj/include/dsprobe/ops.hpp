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

#include <cstddef>
#include <cstdint>
#include <span>

#include "dsprobe/autodiff.hpp"
#include "dsprobe/tensor.hpp"

namespace dsprobe {

// Differentiable primitives. Every op validates shapes and throws a
// ShapeError naming the op and the offending shapes. Image batches use the
// N x C x H x W layout.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

/// x[N x in] * weight[out x in]^T + bias[out].
template <typename T> Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Cross-correlation of x[N x C x H x W] with weight[O x C x K x K] plus bias[O].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, Conv2dOptions options = {});

template <typename T> Var<T> relu(Var<T> x);

/// Window `kernel`, stride `stride` (0 means stride = kernel), no padding.
template <typename T> Var<T> max_pool2d(Var<T> x, std::size_t kernel, std::size_t stride = 0);
template <typename T> Var<T> avg_pool2d(Var<T> x, std::size_t kernel, std::size_t stride = 0);

/// Averages over the adaptive windows [floor(i*H/oh), ceil((i+1)*H/oh)).
template <typename T> Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w);

/// N x ... -> N x (product of the rest).
template <typename T> Var<T> flatten(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

/// Row-wise softmax of x[N x C].
template <typename T> Var<T> softmax(Var<T> x);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
/// Elementwise product.
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> sum_reduce(Var<T> x);

/// Mean over the batch of -ln softmax(logits)[label].
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels);

/// Mean over rows of -sum_c target[c] ln softmax(logits)[c]; target is
/// either N x C or a single C-vector shared by every row.
template <typename T>
Var<T> soft_cross_entropy(Var<T> logits, const BasicTensor<T>& target);

/// x[N x C x H x W] -> [(N*P) x (C*p*p)], patches in row-major grid order.
template <typename T> Var<T> patchify(Var<T> x, std::size_t patch);

/// x[(N*G) x h] -> [N x h], summing each run of G rows in ascending order.
template <typename T> Var<T> group_sum(Var<T> x, std::size_t group);

namespace kernels {

/// Non-differentiable building blocks shared with the probing code.
template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Row-wise log-softmax of x[N x C], computed in double.
template <typename T>
std::vector<double> log_softmax_rows(const BasicTensor<T>& logits);

}  // namespace kernels

}  // namespace dsprobe
