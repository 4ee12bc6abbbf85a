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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsprobe/error.hpp"
#include "dsprobe/tensor.hpp"

namespace dsprobe {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Everything a backward rule may read or write.
template <typename T>
struct BackwardCtx {
  const BasicTensor<T>& out;
  const BasicTensor<T>& grad_out;
  std::span<const BasicTensor<T>* const> inputs;
  /// Zero-initialized accumulators; nullptr where the input needs no gradient.
  std::span<BasicTensor<T>* const> grad_inputs;
};

template <typename T>
using BackwardFn = std::function<void(const BackwardCtx<T>&)>;

/// Map from parameter key to its gradient.
template <typename T>
using ParamGrads = std::map<std::size_t, BasicTensor<T>>;

/// Reverse-mode tape for one forward/backward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep visits each node once. A tape may be swept
/// backward exactly once; a new forward pass needs a new tape.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(BasicTensor<T> value) { return push("constant", std::move(value), {}, {}, false); }

  /// Leaf whose gradient can be read back with grad() after a sweep.
  Var<T> input(BasicTensor<T> value, bool requires_grad = true) {
    return push("input", std::move(value), {}, {}, requires_grad && grad_enabled_);
  }

  /// Leaf bound to a model parameter; its gradient is reported under `key`.
  Var<T> parameter(std::size_t key, BasicTensor<T> value) {
    Var<T> v = push("parameter", std::move(value), {}, {}, grad_enabled_);
    nodes_[v.id].param_key = key;
    return v;
  }

  /// Records the result of a primitive. Rejects non-finite values.
  Var<T> record(std::string_view op, BasicTensor<T> value, std::vector<Var<T>> inputs,
                BackwardFn<T> backward) {
    if (!value.all_finite()) {
      throw NumericError(std::string(op) + ": non-finite value in forward output");
    }
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var<T>& in : inputs) {
      if (in.tape != this) throw StateError(std::string(op) + ": input belongs to another tape");
      ids.push_back(in.id);
      needs = needs || nodes_[in.id].requires_grad;
    }
    if (!needs) backward = nullptr;
    return push(op, std::move(value), std::move(ids), std::move(backward), needs);
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }

  /// Gradient accumulated at a node during the last sweep, if any.
  const BasicTensor<T>* grad(Var<T> v) const {
    if (v.id >= grads_.size() || !grads_[v.id]) return nullptr;
    return &*grads_[v.id];
  }

  std::size_t size() const { return nodes_.size(); }

  /// Sweeps backward from a scalar loss and returns parameter gradients.
  ParamGrads<T> backward(Var<T> loss) {
    if (value(loss).size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
    }
    backward_from(loss, BasicTensor<T>(value(loss).shape(), T{1}));
    ParamGrads<T> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].param_key && grads_[i]) out.emplace(*nodes_[i].param_key, *grads_[i]);
    }
    return out;
  }

  /// Sweeps backward from an arbitrary node seeded with `seed` (same shape).
  void backward_from(Var<T> root, const BasicTensor<T>& seed) {
    if (consumed_) throw StateError("backward: tape already swept; run a new forward pass");
    if (!grad_enabled_) throw StateError("backward: tape was recorded without gradients");
    if (seed.shape() != value(root).shape()) {
      throw ShapeError("backward: seed " + shape_str(seed.shape()) + " vs node " +
                       shape_str(value(root).shape()));
    }
    consumed_ = true;
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[root.id] = seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!grads_[i] || !node.backward) continue;
      std::vector<const BasicTensor<T>*> in_values;
      std::vector<BasicTensor<T>*> in_grads;
      for (std::size_t id : node.inputs) {
        in_values.push_back(&nodes_[id].value);
        if (nodes_[id].requires_grad) {
          if (!grads_[id]) grads_[id] = BasicTensor<T>(nodes_[id].value.shape(), T{0});
          in_grads.push_back(&*grads_[id]);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      node.backward(BackwardCtx<T>{node.value, *grads_[i], in_values, in_grads});
      for (BasicTensor<T>* g : in_grads) {
        if (g && !g->all_finite()) {
          throw NumericError(node.op + ": non-finite value in backward gradient");
        }
      }
    }
  }

 private:
  struct Node {
    std::string op;
    BasicTensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn<T> backward;
    bool requires_grad = false;
    std::optional<std::size_t> param_key;
  };

  Var<T> push(std::string_view op, BasicTensor<T> value, std::vector<std::size_t> inputs,
              BackwardFn<T> backward, bool requires_grad) {
    if (consumed_) throw StateError("tape: cannot record after backward");
    nodes_.push_back(Node{std::string(op), std::move(value), std::move(inputs),
                          std::move(backward), requires_grad, std::nullopt});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<std::optional<BasicTensor<T>>> grads_;
  bool grad_enabled_;
  bool consumed_ = false;
};

}  // namespace dsprobe
