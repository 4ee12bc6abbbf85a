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

#include "dsprobe/checkpoint.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dsprobe/byte_order.hpp"
#include "dsprobe/tensor_io.hpp"

namespace dsprobe {
namespace {

constexpr std::array<char, 4> kMagic = {'D', 'S', 'C', 'K'};

Tensor read_f32(std::istream& in, const char* what) {
  AnyTensor t = read_tensor(in);
  if (!std::holds_alternative<Tensor>(t)) {
    throw FormatError(std::string("checkpoint: ") + what + " tensor is not f32");
  }
  return std::get<Tensor>(std::move(t));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const TrainState& state) {
  nlohmann::json header;
  header["model"] = to_json(model.spec());
  header["meta"] = {{"seed", model.meta.seed},
                    {"epochs", model.meta.epochs},
                    {"dataset_id", model.meta.dataset_id}};
  nlohmann::json names = nlohmann::json::array();
  for (const auto& p : model.parameters()) names.push_back(p.name);
  header["parameters"] = names;
  const auto& opt = state.optimizer;
  header["optimizer"] = {{"kind", to_string(opt.kind)}, {"lr", opt.lr},       {"beta1", opt.beta1},
                         {"beta2", opt.beta2},          {"eps", opt.eps},     {"step", opt.step},
                         {"moments", opt.first_moment.size()}};
  header["epoch"] = state.epoch;
  header["train_loss"] = state.train_loss;
  header["val_loss"] = state.val_loss;
  header["best_val_loss"] = std::isfinite(state.best_val_loss) ? nlohmann::json(state.best_val_loss)
                                                               : nlohmann::json(nullptr);
  header["best_epoch"] = state.best_epoch;
  header["bad_epochs"] = state.bad_epochs;
  header["best_params"] = state.best_params.size();
  header["stopped_early"] = state.stopped_early;
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.parameters()) write_tensor(out, p.value);
    for (const auto& m : opt.first_moment) write_tensor(out, m);
    for (const auto& v : opt.second_moment) write_tensor(out, v);
    for (const auto& b : state.best_params) write_tensor(out, b);
    out.flush();
    if (!out) throw FormatError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("checkpoint: cannot open " + path.string());
  std::stringstream in;
  in << file.rdbuf();

  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw FormatError("checkpoint: truncated header");
  if (magic != kMagic) throw FormatError("checkpoint: bad magic");
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  if (!get_le(in, version)) throw FormatError("checkpoint: truncated header");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: format version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (!get_le(in, length) || length > (std::uint64_t{1} << 32)) {
    throw FormatError("checkpoint: truncated header");
  }
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw FormatError("checkpoint: truncated JSON header");
  }
  try {
    const auto h = nlohmann::json::parse(text);
    const ModelSpec spec = model_spec_from_json(h.at("model"));
    const auto names = h.at("parameters").get<std::vector<std::string>>();
    std::vector<Parameter<float>> params;
    for (const auto& name : names) params.push_back({name, read_f32(in, "parameter")});

    TrainState state;
    const auto& o = h.at("optimizer");
    state.optimizer.kind = optimizer_from_string(o.at("kind").get<std::string>());
    state.optimizer.lr = o.at("lr").get<double>();
    state.optimizer.beta1 = o.at("beta1").get<double>();
    state.optimizer.beta2 = o.at("beta2").get<double>();
    state.optimizer.eps = o.at("eps").get<double>();
    state.optimizer.step = o.at("step").get<std::uint64_t>();
    const auto moments = o.at("moments").get<std::size_t>();
    for (std::size_t i = 0; i < moments; ++i) state.optimizer.first_moment.push_back(read_f32(in, "moment"));
    for (std::size_t i = 0; i < moments; ++i) state.optimizer.second_moment.push_back(read_f32(in, "moment"));
    state.epoch = h.at("epoch").get<std::size_t>();
    state.train_loss = h.at("train_loss").get<std::vector<double>>();
    state.val_loss = h.at("val_loss").get<std::vector<double>>();
    if (!h.at("best_val_loss").is_null()) state.best_val_loss = h.at("best_val_loss").get<double>();
    state.best_epoch = h.at("best_epoch").get<std::size_t>();
    state.bad_epochs = h.at("bad_epochs").get<std::size_t>();
    state.stopped_early = h.at("stopped_early").get<bool>();
    const auto best = h.at("best_params").get<std::size_t>();
    for (std::size_t i = 0; i < best; ++i) state.best_params.push_back(read_f32(in, "best parameter"));
    if (in.peek() != std::char_traits<char>::eof()) {
      throw FormatError("checkpoint: trailing bytes after the last tensor");
    }

    Model model(spec, std::move(params));
    const auto& meta = h.at("meta");
    model.meta.seed = meta.at("seed").get<std::uint64_t>();
    model.meta.epochs = meta.at("epochs").get<std::size_t>();
    model.meta.dataset_id = meta.at("dataset_id").get<std::string>();
    return Checkpoint{std::move(model), std::move(state)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace dsprobe
