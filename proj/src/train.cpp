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

#include "dsprobe/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsprobe/ops.hpp"
#include "dsprobe/rng.hpp"
#include "json_util.hpp"

namespace dsprobe {
namespace {

constexpr std::uint64_t kShuffleStream = 0x7368756666ULL;

void restore_best(Model& model, const TrainState& state) {
  auto& params = model.parameters();
  if (state.best_params.size() != params.size()) return;
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = state.best_params[i];
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", to_string(c.optimizer)},
          {"lr", c.lr},
          {"seed", c.seed},
          {"early_stopping_patience", c.early_stopping_patience}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::require_keys(
      j, {"epochs", "batch_size", "optimizer", "lr", "seed", "early_stopping_patience"}, "training");
  TrainConfig c;
  c.seed = detail::get_required<std::uint64_t>(j, "seed", "training");
  try {
    c.epochs = detail::get_or(j, "epochs", c.epochs);
    c.batch_size = detail::get_or(j, "batch_size", c.batch_size);
    c.optimizer = optimizer_from_string(detail::get_or<std::string>(j, "optimizer", "adam"));
    c.lr = detail::get_or(j, "lr", c.lr);
    c.early_stopping_patience = detail::get_or(j, "early_stopping_patience", c.early_stopping_patience);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  if (c.batch_size == 0) throw ConfigError("training: batch_size must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("training: lr must be positive");
  return c;
}

TrainState initial_train_state(const TrainConfig& config) {
  TrainState s;
  s.optimizer.kind = config.optimizer;
  s.optimizer.lr = config.lr;
  return s;
}

void train(Model& model, TrainState& state, const LabeledDataset& train_set,
           const LabeledDataset* val_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (train_set.size() == 0) throw ConfigError("train: empty training set");
  const bool early_stop = config.early_stopping_patience > 0 && val_set && val_set->size() > 0;
  const std::size_t n = train_set.size();
  auto params = model.parameter_values();

  while (state.epoch < config.epochs && !state.stopped_early) {
    const std::size_t epoch = state.epoch + 1;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::derive(Rng::derive(config.seed, kShuffleStream), epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t e = std::min(n, b + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      std::vector<std::uint32_t> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(train_set.labels[i]);

      Tape<float> tape;
      const auto trace = model.forward(tape, tape.constant(train_set.images.gather_rows(idx)));
      const Var<float> loss = cross_entropy(trace.output, std::span<const std::uint32_t>(labels));
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(idx.size());
      const auto grads = tape.backward(loss);
      optimizer_step(state.optimizer, std::span<Tensor* const>(params), grads);
    }
    state.train_loss.push_back(loss_sum / static_cast<double>(n));
    state.epoch = epoch;

    if (val_set && val_set->size() > 0) {
      const double v = mean_loss(model, *val_set);
      state.val_loss.push_back(v);
      if (early_stop) {
        if (v < state.best_val_loss) {
          state.best_val_loss = v;
          state.best_epoch = epoch;
          state.bad_epochs = 0;
          state.best_params.clear();
          for (const auto& p : model.parameters()) state.best_params.push_back(p.value);
        } else if (++state.bad_epochs >= config.early_stopping_patience) {
          state.stopped_early = true;
        }
      }
    }
    if (on_epoch) on_epoch(epoch, model);
  }
  if (early_stop) restore_best(model, state);
  model.meta.seed = config.seed;
  model.meta.epochs = state.epoch;
}

TrainState train(Model& model, const LabeledDataset& train_set, const LabeledDataset* val_set,
                 const TrainConfig& config, const EpochCallback& on_epoch) {
  TrainState state = initial_train_state(config);
  train(model, state, train_set, val_set, config, on_epoch);
  return state;
}

double mean_loss(const Model& model, const LabeledDataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto logits = model.logits(ds.images);
  const auto logp = kernels::log_softmax_rows(logits);
  const std::size_t c = logits.dim(1);
  double sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) sum -= logp[i * c + ds.labels[i]];
  return sum / static_cast<double>(ds.size());
}

std::vector<std::uint32_t> predict(const Model& model, const Tensor& images) {
  const auto logits = model.logits(images);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * c, c);
    out[i] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double accuracy(const Model& model, const LabeledDataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = predict(model, ds.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ds.labels[i];
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace dsprobe
