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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dsprobe/autodiff.hpp"
#include "dsprobe/model.hpp"

namespace dsprobe {

struct GradcheckBlock {
  std::string name;
  std::size_t elements = 0;
  /// max |analytic - numeric| / max(max |analytic|, max |numeric|) over the block.
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckBlock> blocks;
  bool passed() const;
};

/// Builds a scalar loss from the given input leaves.
using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

/// Compares reverse-mode gradients of `fn` with central differences, one
/// block per input tensor.
GradcheckReport gradcheck_inputs(const ScalarFn& fn, std::vector<Tensor64> inputs, double h,
                                 double tolerance);

/// Same check over every parameter block of a model under a mean
/// cross-entropy loss on (batch, labels).
GradcheckReport finite_diff_gradcheck(Model64& model, const Tensor64& batch,
                                      std::span<const std::uint32_t> labels, double h,
                                      double tolerance);

/// Generic variant with a caller-defined loss over the model.
using ModelLossFn = std::function<Var<double>(Tape<double>&, const Model64&)>;
GradcheckReport finite_diff_gradcheck(Model64& model, const ModelLossFn& loss, double h,
                                      double tolerance);

}  // namespace dsprobe
