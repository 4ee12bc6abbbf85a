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
#include <limits>
#include <vector>

#include "json.hpp"

#include "dsprobe/dataset.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/optim.hpp"

namespace dsprobe {

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Epochs without validation-loss improvement before stopping; 0 disables.
  /// Stopping restores the parameters of the best epoch.
  std::size_t early_stopping_patience = 0;
};

nlohmann::json to_json(const TrainConfig& config);
/// Strict parse; "seed" is mandatory.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Everything besides the parameters that a resumed run needs.
struct TrainState {
  OptimizerState<float> optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t bad_epochs = 0;
  std::vector<Tensor> best_params;
  bool stopped_early = false;
};

TrainState initial_train_state(const TrainConfig& config);

/// Called after every completed epoch (1-based) with the current parameters.
using EpochCallback = std::function<void(std::size_t epoch, const Model& model)>;

/// Continues training from `state` up to config.epochs. Each epoch visits
/// the training set in an order drawn from (seed, epoch) alone, so a run
/// resumed from a checkpoint matches an uninterrupted one bit for bit.
void train(Model& model, TrainState& state, const LabeledDataset& train_set,
           const LabeledDataset* val_set, const TrainConfig& config,
           const EpochCallback& on_epoch = {});

/// Fresh run.
TrainState train(Model& model, const LabeledDataset& train_set, const LabeledDataset* val_set,
                 const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean cross-entropy (nats) over the dataset.
double mean_loss(const Model& model, const LabeledDataset& ds);
std::vector<std::uint32_t> predict(const Model& model, const Tensor& images);
double accuracy(const Model& model, const LabeledDataset& ds);

}  // namespace dsprobe
