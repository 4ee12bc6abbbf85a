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
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dsprobe/autodiff.hpp"
#include "dsprobe/tensor.hpp"

namespace dsprobe {

struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
};
struct ReluLayer {};
struct MaxPoolLayer {
  std::size_t kernel = 2;
};
struct FlattenLayer {};
struct DenseLayer {
  std::size_t units = 0;
};
/// Permutation-invariant set encoder: splits the image into a grid of
/// patch_size x patch_size patches, maps each through phi (dense+relu
/// stack), sums over patches and applies rho (dense+relu stack).
struct PatchPoolLayer {
  std::size_t patch_size = 0;
  std::vector<std::size_t> phi;
  std::vector<std::size_t> rho;
};

using LayerSpec =
    std::variant<ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer, DenseLayer, PatchPoolLayer>;

struct ProbePolicy {
  enum class Kind {
    kActivations,  // after every relu, max-pool and patch-pool layer
    kRelu,         // after every relu (patch-pool counts: it ends in a relu)
    kExplicit,     // the listed 1-based layer indices
  };
  Kind kind = Kind::kActivations;
  std::vector<std::size_t> layers;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // C, H, W
  std::size_t classes = 2;
  ProbePolicy probes;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Reference architectures: "cnn-small", "mlp-2", "patchpool", "linear",
/// "conv-relu-linear", "cnn-2conv".
ModelSpec preset_model(const std::string& name, const Shape& input_shape, std::size_t classes);

/// Validates the layer sequence and returns the resolved probe layers
/// (1-based, strictly increasing, ending at the final layer).
std::vector<std::size_t> resolve_probes(const ModelSpec& spec);

template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::string dataset_id;
};

/// Sequential classifier with registered probe points.
///
/// The model is immutable during forward passes, so concurrent read-only
/// evaluation is safe; training mutates parameters through parameter_values().
template <typename T>
class BasicModel {
 public:
  /// Builds and initializes the model (Kaiming-uniform weights, zero biases).
  BasicModel(ModelSpec spec, std::uint64_t seed);
  /// Adopts existing parameters; shapes must match the spec exactly.
  BasicModel(ModelSpec spec, std::vector<Parameter<T>> params);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  std::vector<BasicTensor<T>*> parameter_values();

  const std::vector<std::size_t>& probe_layers() const { return probe_layers_; }
  std::size_t probe_count() const { return probe_layers_.size(); }
  std::size_t layer_count() const { return spec_.layers.size(); }

  struct Trace {
    Var<T> output;
    std::vector<Var<T>> probes;
  };

  /// Records layers 1..stop_after (all layers when 0) on the tape.
  Trace forward(Tape<T>& tape, Var<T> input, std::size_t stop_after = 0) const;

  BasicTensor<T> logits(const BasicTensor<T>& batch) const;

  struct ProbeOutput {
    BasicTensor<T> logits;
    std::vector<BasicTensor<T>> embeddings;  // one per probe, raw layer output
  };
  ProbeOutput forward_with_probes(const BasicTensor<T>& batch) const;

  /// Output after layer `layer` (1-based) without recording gradients.
  BasicTensor<T> forward_until(const BasicTensor<T>& batch, std::size_t layer) const;

  template <typename U>
  BasicModel<U> cast() const {
    std::vector<Parameter<U>> out;
    for (const auto& p : params_) out.push_back({p.name, p.value.template cast<U>()});
    BasicModel<U> m(spec_, std::move(out));
    m.meta = meta;
    return m;
  }

  TrainingMeta meta;

 private:
  struct LayerParams {
    std::size_t first = 0;
    std::size_t count = 0;
  };

  void plan();
  void check_input(const BasicTensor<T>& batch) const;

  ModelSpec spec_;
  std::vector<Parameter<T>> params_;
  std::vector<LayerParams> layer_params_;
  std::vector<std::size_t> probe_layers_;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

}  // namespace dsprobe
