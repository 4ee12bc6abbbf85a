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

#include "json.hpp"

#include "dsprobe/dataset.hpp"
#include "dsprobe/knn.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/train.hpp"

namespace dsprobe {

/// Softmax entropy of one logit row, in nats.
double softmax_entropy(std::span<const double> logits);

struct EnsembleSpec {
  std::size_t count = 5;         // E, at least 2
  std::string family = "linear";  // "linear" or "conv-relu-linear"
  TrainConfig train;              // train.seed is ignored; members derive theirs
};

nlohmann::json to_json(const EnsembleSpec& spec);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j);

struct EnsembleEntropy {
  std::vector<double> per_sample;  // mean member entropy, nats
  double mean = 0.0;
  std::size_t members = 0;
};

/// Trains `spec.count` independently seeded members on `train_set` and
/// averages their softmax entropies on every sample of `eval`.
EnsembleEntropy ensemble_entropy(const LabeledDataset& train_set, const LabeledDataset& eval,
                                 const EnsembleSpec& spec, std::uint64_t seed);

struct CoreOnlyAccuracy {
  double validation = 0.0;  // held-out unmasked dominoes
  double core_only = 0.0;   // same samples with the top half zeroed
};

CoreOnlyAccuracy core_only_accuracy(const Model& model, const LabeledDataset& domino_test);

enum class DifficultyMetric { kMeanPd, kAccuracy, kVInfo };
std::string to_string(DifficultyMetric metric);
DifficultyMetric difficulty_metric_from_string(const std::string& name);

struct HarmfulnessParams {
  ModelSpec family;
  TrainConfig train;  // train.seed is replaced by each run seed
  DifficultyMetric metric = DifficultyMetric::kVInfo;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double heldout_fraction = 0.2;
  ProbeParams probe;  // mean-pd only
  /// Gaps up to this size count as no change. Arms whose inputs differ only
  /// by what the family cannot see still drift at float rounding level.
  double tolerance = 1e-6;
};

struct HarmfulnessVerdict {
  DifficultyMetric metric = DifficultyMetric::kVInfo;
  std::vector<std::uint64_t> seeds;
  std::vector<double> psi_observational;   // one per seed
  std::vector<double> psi_interventional;  // one per seed
  bool harmful = false;
  std::string verdict;  // "harmful" or "benign"
};

nlohmann::json to_json(const HarmfulnessVerdict& v);

/// Difficulty of a trained model on held-out data, higher is harder:
/// 1 - accuracy, H(Y|X) - H(Y) in bits, or mean prediction depth.
/// `reference` supplies the probe bank for mean-pd and the label marginal
/// for the null model of v-info.
double task_difficulty(const Model& model, const LabeledDataset& reference,
                       const LabeledDataset& heldout, DifficultyMetric metric,
                       const ProbeParams& probe, std::uint64_t seed);

/// For every seed, splits `ds` and its do(s) intervention with the same
/// indices, trains one family member on each training split and measures
/// the difficulty on the matching held-out split. Harmful iff every
/// interventional difficulty exceeds every observational one by more than
/// the tolerance.
HarmfulnessVerdict harmfulness_verdict(const LabeledDataset& ds, const HarmfulnessParams& params);

}  // namespace dsprobe
