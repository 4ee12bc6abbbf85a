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
#include <string>
#include <vector>

#include "dsprobe/autodiff.hpp"
#include "dsprobe/tensor.hpp"

namespace dsprobe {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

/// First-order optimizer state. Moment buffers are created lazily on the
/// first step and always shape-match their parameters.
template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> first_moment;
  std::vector<BasicTensor<T>> second_moment;
};

/// Applies one update. `grads` maps parameter index to gradient; parameters
/// absent from the map are treated as having a zero gradient.
template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<BasicTensor<T>* const> params,
                    const ParamGrads<T>& grads);

}  // namespace dsprobe
