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

#include "dsprobe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dsprobe/ops.hpp"

namespace dsprobe {
namespace {

GradcheckBlock compare(std::string name, std::span<const double> analytic,
                       std::span<const double> numeric, double tolerance) {
  GradcheckBlock b;
  b.name = std::move(name);
  b.elements = analytic.size();
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  b.max_rel_error = scale > 0.0 ? diff / scale : diff;
  b.passed = std::isfinite(b.max_rel_error) && b.max_rel_error < tolerance;
  return b;
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const auto& b) { return b.passed; });
}

GradcheckReport gradcheck_inputs(const ScalarFn& fn, std::vector<Tensor64> inputs, double h,
                                 double tolerance) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor64>* grads) {
    Tape<double> tape(with_grad);
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    const Var<double> loss = fn(tape, vars);
    const double value = loss.value().item();
    if (grads) {
      tape.backward(loss);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor64* g = tape.grad(vars[i]);
        grads->push_back(g ? *g : Tensor64(inputs[i].shape(), 0.0));
      }
    }
    return value;
  };

  std::vector<Tensor64> analytic;
  evaluate(true, &analytic);
  GradcheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double saved = inputs[k][j];
      inputs[k][j] = saved + h;
      const double up = evaluate(false, nullptr);
      inputs[k][j] = saved - h;
      const double down = evaluate(false, nullptr);
      inputs[k][j] = saved;
      numeric[j] = (up - down) / (2.0 * h);
    }
    report.blocks.push_back(
        compare("input" + std::to_string(k), analytic[k].data(), numeric, tolerance));
  }
  return report;
}

GradcheckReport finite_diff_gradcheck(Model64& model, const ModelLossFn& loss, double h,
                                      double tolerance) {
  ParamGrads<double> grads;
  {
    Tape<double> tape;
    grads = tape.backward(loss(tape, model));
  }
  auto evaluate = [&] {
    Tape<double> tape(false);
    return loss(tape, model).value().item();
  };
  GradcheckReport report;
  auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].value.data();
    std::vector<double> numeric(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + h;
      const double up = evaluate();
      values[j] = saved - h;
      const double down = evaluate();
      values[j] = saved;
      numeric[j] = (up - down) / (2.0 * h);
    }
    const auto it = grads.find(k);
    const Tensor64 analytic = it != grads.end() ? it->second : Tensor64(params[k].value.shape(), 0.0);
    report.blocks.push_back(compare(params[k].name, analytic.data(), numeric, tolerance));
  }
  return report;
}

GradcheckReport finite_diff_gradcheck(Model64& model, const Tensor64& batch,
                                      std::span<const std::uint32_t> labels, double h,
                                      double tolerance) {
  return finite_diff_gradcheck(
      model,
      [&](Tape<double>& tape, const Model64& m) {
        return cross_entropy(m.forward(tape, tape.constant(batch)).output, labels);
      },
      h, tolerance);
}

}  // namespace dsprobe
