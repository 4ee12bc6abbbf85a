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

#include "dsprobe/model.hpp"

#include <algorithm>
#include <cmath>

#include "dsprobe/ops.hpp"
#include "dsprobe/rng.hpp"
#include "json_util.hpp"

namespace dsprobe {
namespace {

using detail::get_or;
using detail::require_keys;

constexpr std::size_t kEvalChunk = 256;

struct ParamShape {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 marks a bias
};

struct LayerInfo {
  Shape out;  // per-sample output shape
  std::vector<ParamShape> params;
};

std::string layer_name(const LayerSpec& l) {
  return std::visit(
      [](const auto& v) -> std::string {
        using L = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<L, ConvLayer>) return "conv";
        else if constexpr (std::is_same_v<L, ReluLayer>) return "relu";
        else if constexpr (std::is_same_v<L, MaxPoolLayer>) return "maxpool";
        else if constexpr (std::is_same_v<L, FlattenLayer>) return "flatten";
        else if constexpr (std::is_same_v<L, DenseLayer>) return "dense";
        else return "patch_pool";
      },
      l);
}

std::vector<LayerInfo> infer_layers(const ModelSpec& spec) {
  if (spec.input_shape.size() != 3) {
    throw ShapeError("model: input_shape must be C x H x W, got " + shape_str(spec.input_shape));
  }
  if (spec.classes < 2) throw ConfigError("model: need at least 2 classes");
  if (spec.layers.empty()) throw ConfigError("model: empty layer list");
  Shape cur = spec.input_shape;
  std::vector<LayerInfo> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::string where = "model layer " + std::to_string(i + 1) + " (" +
                              layer_name(spec.layers[i]) + ")";
    LayerInfo info;
    const std::string prefix = "layer" + std::to_string(i + 1);
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            if (cur.size() != 3) throw ShapeError(where + ": needs an image input, got " + shape_str(cur));
            if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
              throw ConfigError(where + ": out_channels, kernel and stride must be positive");
            }
            if (cur[1] + 2 * l.pad < l.kernel || cur[2] + 2 * l.pad < l.kernel) {
              throw ShapeError(where + ": kernel larger than padded input " + shape_str(cur));
            }
            const std::size_t fan = cur[0] * l.kernel * l.kernel;
            info.params.push_back({prefix + ".conv.weight", {l.out_channels, cur[0], l.kernel, l.kernel}, fan});
            info.params.push_back({prefix + ".conv.bias", {l.out_channels}, 0});
            cur = {l.out_channels, (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1,
                   (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1};
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            if (cur.size() != 3) throw ShapeError(where + ": needs an image input, got " + shape_str(cur));
            if (l.kernel == 0 || cur[1] < l.kernel || cur[2] < l.kernel) {
              throw ShapeError(where + ": kernel does not fit input " + shape_str(cur));
            }
            cur = {cur[0], (cur[1] - l.kernel) / l.kernel + 1, (cur[2] - l.kernel) / l.kernel + 1};
          } else if constexpr (std::is_same_v<L, FlattenLayer>) {
            cur = {numel(cur)};
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            if (cur.size() != 1) {
              throw ShapeError(where + ": dense needs a flat input (add flatten first), got " +
                               shape_str(cur));
            }
            if (l.units == 0) throw ConfigError(where + ": units must be positive");
            info.params.push_back({prefix + ".dense.weight", {l.units, cur[0]}, cur[0]});
            info.params.push_back({prefix + ".dense.bias", {l.units}, 0});
            cur = {l.units};
          } else {
            if (cur.size() != 3) throw ShapeError(where + ": needs an image input, got " + shape_str(cur));
            if (l.patch_size == 0 || cur[1] % l.patch_size || cur[2] % l.patch_size) {
              throw ShapeError(where + ": patch size " + std::to_string(l.patch_size) +
                               " does not tile " + shape_str(cur));
            }
            if (l.phi.empty()) throw ConfigError(where + ": phi needs at least one layer");
            std::size_t width = cur[0] * l.patch_size * l.patch_size;
            for (std::size_t k = 0; k < l.phi.size(); ++k) {
              const std::string n = prefix + ".phi" + std::to_string(k);
              info.params.push_back({n + ".weight", {l.phi[k], width}, width});
              info.params.push_back({n + ".bias", {l.phi[k]}, 0});
              width = l.phi[k];
            }
            for (std::size_t k = 0; k < l.rho.size(); ++k) {
              const std::string n = prefix + ".rho" + std::to_string(k);
              info.params.push_back({n + ".weight", {l.rho[k], width}, width});
              info.params.push_back({n + ".bias", {l.rho[k]}, 0});
              width = l.rho[k];
            }
            cur = {width};
          }
        },
        spec.layers[i]);
    info.out = cur;
    out.push_back(std::move(info));
  }
  const auto* last = std::get_if<DenseLayer>(&spec.layers.back());
  if (!last || last->units != spec.classes) {
    throw ConfigError("model: final layer must be dense(" + std::to_string(spec.classes) +
                      ") emitting the class logits");
  }
  return out;
}

}  // namespace

std::vector<std::size_t> resolve_probes(const ModelSpec& spec) {
  infer_layers(spec);
  const std::size_t n = spec.layers.size();
  std::vector<std::size_t> probes;
  if (spec.probes.kind == ProbePolicy::Kind::kExplicit) {
    probes = spec.probes.layers;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      if (probes[i] < 1 || probes[i] > n) {
        throw ConfigError("model: probe layer " + std::to_string(probes[i]) + " out of range");
      }
      if (i && probes[i] <= probes[i - 1]) {
        throw ConfigError("model: probe layers must be strictly increasing");
      }
    }
  } else {
    const bool pools = spec.probes.kind == ProbePolicy::Kind::kActivations;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& l = spec.layers[i];
      if (std::holds_alternative<ReluLayer>(l) || std::holds_alternative<PatchPoolLayer>(l) ||
          (pools && std::holds_alternative<MaxPoolLayer>(l))) {
        probes.push_back(i + 1);
      }
    }
  }
  if (probes.empty() || probes.back() != n) probes.push_back(n);
  return probes;
}

nlohmann::json to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          nlohmann::json j{{"type", layer_name(layer)}};
          if constexpr (std::is_same_v<L, ConvLayer>) {
            j["out_channels"] = l.out_channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["pad"] = l.pad;
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            j["kernel"] = l.kernel;
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            j["units"] = l.units;
          } else if constexpr (std::is_same_v<L, PatchPoolLayer>) {
            j["patch_size"] = l.patch_size;
            j["phi"] = l.phi;
            j["rho"] = l.rho;
          }
          layers.push_back(std::move(j));
        },
        layer);
  }
  nlohmann::json probes;
  switch (spec.probes.kind) {
    case ProbePolicy::Kind::kActivations: probes = "activations"; break;
    case ProbePolicy::Kind::kRelu: probes = "relu"; break;
    case ProbePolicy::Kind::kExplicit: probes = spec.probes.layers; break;
  }
  return {{"layers", layers}, {"input_shape", spec.input_shape}, {"classes", spec.classes},
          {"probes", probes}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  require_keys(j, {"layers", "input_shape", "classes", "probes"}, "model");
  ModelSpec spec;
  try {
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.classes = j.at("classes").get<std::size_t>();
    for (const auto& lj : j.at("layers")) {
      const std::string type = lj.at("type").get<std::string>();
      if (type == "conv") {
        require_keys(lj, {"type", "out_channels", "kernel", "stride", "pad"}, "conv layer");
        spec.layers.push_back(ConvLayer{lj.at("out_channels").get<std::size_t>(),
                                        get_or<std::size_t>(lj, "kernel", 3),
                                        get_or<std::size_t>(lj, "stride", 1),
                                        get_or<std::size_t>(lj, "pad", 0)});
      } else if (type == "relu") {
        require_keys(lj, {"type"}, "relu layer");
        spec.layers.push_back(ReluLayer{});
      } else if (type == "maxpool") {
        require_keys(lj, {"type", "kernel"}, "maxpool layer");
        spec.layers.push_back(MaxPoolLayer{get_or<std::size_t>(lj, "kernel", 2)});
      } else if (type == "flatten") {
        require_keys(lj, {"type"}, "flatten layer");
        spec.layers.push_back(FlattenLayer{});
      } else if (type == "dense") {
        require_keys(lj, {"type", "units"}, "dense layer");
        spec.layers.push_back(DenseLayer{lj.at("units").get<std::size_t>()});
      } else if (type == "patch_pool") {
        require_keys(lj, {"type", "patch_size", "phi", "rho"}, "patch_pool layer");
        spec.layers.push_back(PatchPoolLayer{lj.at("patch_size").get<std::size_t>(),
                                             lj.at("phi").get<std::vector<std::size_t>>(),
                                             get_or<std::vector<std::size_t>>(lj, "rho", {})});
      } else {
        throw ConfigError("model: unknown layer type '" + type + "'");
      }
    }
    const auto& pj = j.contains("probes") ? j.at("probes") : nlohmann::json("activations");
    if (pj.is_string()) {
      const std::string p = pj.get<std::string>();
      if (p == "activations") spec.probes.kind = ProbePolicy::Kind::kActivations;
      else if (p == "relu") spec.probes.kind = ProbePolicy::Kind::kRelu;
      else throw ConfigError("model: unknown probe policy '" + p + "'");
    } else {
      spec.probes.kind = ProbePolicy::Kind::kExplicit;
      spec.probes.layers = pj.get<std::vector<std::size_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  resolve_probes(spec);
  return spec;
}

ModelSpec preset_model(const std::string& name, const Shape& input_shape, std::size_t classes) {
  ModelSpec spec;
  spec.input_shape = input_shape;
  spec.classes = classes;
  auto& L = spec.layers;
  if (name == "cnn-small") {
    for (std::size_t ch : {8, 16, 16}) {
      L.push_back(ConvLayer{ch, 3, 1, 1});
      L.push_back(ReluLayer{});
      L.push_back(MaxPoolLayer{2});
    }
    L.push_back(FlattenLayer{});
    L.push_back(DenseLayer{64});
    L.push_back(ReluLayer{});
    L.push_back(DenseLayer{32});
    L.push_back(ReluLayer{});
    L.push_back(DenseLayer{classes});
  } else if (name == "mlp-2") {
    L = {FlattenLayer{}, DenseLayer{128}, ReluLayer{}, DenseLayer{64}, ReluLayer{},
         DenseLayer{classes}};
  } else if (name == "patchpool") {
    if (input_shape.size() != 3) throw ShapeError("patchpool: input_shape must be C x H x W");
    std::size_t patch = 0;
    for (std::size_t p : {7, 8, 4}) {
      if (input_shape[1] % p == 0 && input_shape[2] % p == 0) {
        patch = p;
        break;
      }
    }
    if (!patch) throw ShapeError("patchpool: no default patch size tiles " + shape_str(input_shape));
    L = {PatchPoolLayer{patch, {32, 32}, {32}}, DenseLayer{classes}};
  } else if (name == "linear") {
    L = {FlattenLayer{}, DenseLayer{classes}};
  } else if (name == "conv-relu-linear") {
    L = {ConvLayer{8, 3, 1, 1}, ReluLayer{}, FlattenLayer{}, DenseLayer{classes}};
  } else if (name == "cnn-2conv") {
    L = {ConvLayer{4, 3, 1, 1}, ReluLayer{}, MaxPoolLayer{2}, ConvLayer{4, 3, 1, 1}, ReluLayer{},
         FlattenLayer{}, DenseLayer{classes}};
  } else {
    throw ConfigError("unknown model preset '" + name + "'");
  }
  resolve_probes(spec);
  return spec;
}

template <typename T>
BasicModel<T>::BasicModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  const auto layers = infer_layers(spec_);
  Rng rng(seed);
  for (const auto& info : layers) {
    for (const auto& p : info.params) {
      BasicTensor<T> value(p.shape, T{0});
      if (p.fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
        for (T& v : value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      }
      params_.push_back({p.name, std::move(value)});
    }
  }
  meta.seed = seed;
  plan();
}

template <typename T>
BasicModel<T>::BasicModel(ModelSpec spec, std::vector<Parameter<T>> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  const auto layers = infer_layers(spec_);
  std::size_t k = 0;
  for (const auto& info : layers) {
    for (const auto& p : info.params) {
      if (k >= params_.size() || params_[k].value.shape() != p.shape) {
        throw ShapeError("model: parameter " + p.name + " expects " + shape_str(p.shape));
      }
      params_[k].name = p.name;
      ++k;
    }
  }
  if (k != params_.size()) throw ShapeError("model: too many parameters for spec");
  plan();
}

template <typename T>
void BasicModel<T>::plan() {
  const auto layers = infer_layers(spec_);
  layer_params_.clear();
  std::size_t first = 0;
  for (const auto& info : layers) {
    layer_params_.push_back({first, info.params.size()});
    first += info.params.size();
  }
  probe_layers_ = resolve_probes(spec_);
}

template <typename T>
std::vector<BasicTensor<T>*> BasicModel<T>::parameter_values() {
  std::vector<BasicTensor<T>*> out;
  for (auto& p : params_) out.push_back(&p.value);
  return out;
}

template <typename T>
void BasicModel<T>::check_input(const BasicTensor<T>& batch) const {
  const Shape s = batch.shape();
  if (s.size() != 4 || !std::equal(s.begin() + 1, s.end(), spec_.input_shape.begin())) {
    throw ShapeError("model: batch " + shape_str(s) + " does not match input N x " +
                     shape_str(spec_.input_shape));
  }
}

template <typename T>
typename BasicModel<T>::Trace BasicModel<T>::forward(Tape<T>& tape, Var<T> input,
                                                     std::size_t stop_after) const {
  const Shape s = input.shape();
  if (s.size() != 4 || !std::equal(s.begin() + 1, s.end(), spec_.input_shape.begin())) {
    throw ShapeError("model: batch " + shape_str(s) + " does not match input N x " +
                     shape_str(spec_.input_shape));
  }
  const std::size_t last = stop_after ? std::min(stop_after, spec_.layers.size()) : spec_.layers.size();
  auto param = [&](std::size_t key) { return tape.parameter(key, params_[key].value); };
  Trace trace;
  Var<T> x = input;
  std::size_t next_probe = 0;
  for (std::size_t i = 0; i < last; ++i) {
    const std::size_t p0 = layer_params_[i].first;
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, ConvLayer>) {
            x = conv2d(x, param(p0), param(p0 + 1), Conv2dOptions{l.stride, l.pad});
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            x = relu(x);
          } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
            x = max_pool2d(x, l.kernel);
          } else if constexpr (std::is_same_v<L, FlattenLayer>) {
            x = flatten(x);
          } else if constexpr (std::is_same_v<L, DenseLayer>) {
            x = dense(x, param(p0), param(p0 + 1));
          } else {
            const std::size_t patches =
                (x.shape()[2] / l.patch_size) * (x.shape()[3] / l.patch_size);
            x = patchify(x, l.patch_size);
            std::size_t k = p0;
            for (std::size_t j = 0; j < l.phi.size(); ++j, k += 2) {
              x = relu(dense(x, param(k), param(k + 1)));
            }
            x = group_sum(x, patches);
            for (std::size_t j = 0; j < l.rho.size(); ++j, k += 2) {
              x = relu(dense(x, param(k), param(k + 1)));
            }
          }
        },
        spec_.layers[i]);
    if (next_probe < probe_layers_.size() && probe_layers_[next_probe] == i + 1) {
      trace.probes.push_back(x);
      ++next_probe;
    }
  }
  trace.output = x;
  return trace;
}

template <typename T>
BasicTensor<T> BasicModel<T>::logits(const BasicTensor<T>& batch) const {
  return forward_until(batch, spec_.layers.size());
}

template <typename T>
BasicTensor<T> BasicModel<T>::forward_until(const BasicTensor<T>& batch, std::size_t layer) const {
  check_input(batch);
  if (layer < 1 || layer > spec_.layers.size()) {
    throw ConfigError("model: layer " + std::to_string(layer) + " out of range");
  }
  const std::size_t n = batch.dim(0);
  std::vector<T> data;
  Shape shape;
  for (std::size_t b = 0; b < n || (n == 0 && b == 0); b += kEvalChunk) {
    Tape<T> tape(false);
    const std::size_t e = std::min(n, b + kEvalChunk);
    const auto out = forward(tape, tape.constant(batch.rows(b, e)), layer).output.value();
    shape = out.shape();
    data.insert(data.end(), out.data().begin(), out.data().end());
    if (n == 0) break;
  }
  shape[0] = n;
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T>
typename BasicModel<T>::ProbeOutput BasicModel<T>::forward_with_probes(
    const BasicTensor<T>& batch) const {
  check_input(batch);
  const std::size_t n = batch.dim(0);
  std::vector<std::vector<T>> parts(probe_layers_.size());
  std::vector<Shape> shapes(probe_layers_.size());
  std::vector<T> logit_data;
  Shape logit_shape;
  for (std::size_t b = 0; b < std::max<std::size_t>(n, 1); b += kEvalChunk) {
    Tape<T> tape(false);
    const std::size_t e = std::min(n, b + kEvalChunk);
    const auto trace = forward(tape, tape.constant(batch.rows(b, e)));
    for (std::size_t p = 0; p < trace.probes.size(); ++p) {
      const auto& v = trace.probes[p].value();
      shapes[p] = v.shape();
      parts[p].insert(parts[p].end(), v.data().begin(), v.data().end());
    }
    const auto& lv = trace.output.value();
    logit_shape = lv.shape();
    logit_data.insert(logit_data.end(), lv.data().begin(), lv.data().end());
    if (n == 0) break;
  }
  ProbeOutput out;
  logit_shape[0] = n;
  out.logits = BasicTensor<T>(std::move(logit_shape), std::move(logit_data));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    shapes[p][0] = n;
    out.embeddings.emplace_back(std::move(shapes[p]), std::move(parts[p]));
  }
  return out;
}

template class BasicModel<float>;
template class BasicModel<double>;

}  // namespace dsprobe
