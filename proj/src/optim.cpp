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

#include "dsprobe/optim.hpp"

#include <cmath>

namespace dsprobe {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<BasicTensor<T>* const> params,
                    const ParamGrads<T>& grads) {
  for (const auto& [key, g] : grads) {
    if (key >= params.size()) throw ShapeError("optimizer_step: gradient for unknown parameter");
    if (g.shape() != params[key]->shape()) {
      throw ShapeError("optimizer_step: parameter " + std::to_string(key) + " " +
                       shape_str(params[key]->shape()) + " vs gradient " + shape_str(g.shape()));
    }
  }
  if (state.kind == OptimizerKind::kAdam) {
    if (state.first_moment.empty()) {
      for (const auto* p : params) {
        state.first_moment.emplace_back(p->shape(), T{0});
        state.second_moment.emplace_back(p->shape(), T{0});
      }
    }
    if (state.first_moment.size() != params.size()) {
      throw ShapeError("optimizer_step: moment buffers do not match parameter count");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (state.first_moment[i].shape() != params[i]->shape()) {
        throw ShapeError("optimizer_step: moment buffer " + std::to_string(i) +
                         " does not match its parameter");
      }
    }
  }
  ++state.step;

  if (state.kind == OptimizerKind::kSgd) {
    for (const auto& [key, g] : grads) {
      auto p = params[key]->data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] = static_cast<T>(p[j] - state.lr * g[j]);
      }
    }
    return;
  }

  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(i);
    auto p = params[i]->data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = it == grads.end() ? 0.0 : static_cast<double>(it->second[j]);
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = state.lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps);
      p[j] = static_cast<T>(p[j] - update);
    }
  }
}

template void optimizer_step(OptimizerState<float>&, std::span<Tensor* const>, const ParamGrads<float>&);
template void optimizer_step(OptimizerState<double>&, std::span<Tensor64* const>,
                             const ParamGrads<double>&);

}  // namespace dsprobe
