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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsprobe/dataset.hpp"
#include "dsprobe/knn.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/train.hpp"

namespace dsprobe {

/// Per-sample probe trace.
struct PdRecord {
  std::size_t sample_id = 0;
  std::uint32_t label = 0;
  std::vector<std::uint32_t> classes;      // predicted class per probe
  std::vector<double> top_fraction;        // vote share of that class
  std::vector<std::uint8_t> valid;         // 1 when the probe output is valid
  std::vector<std::uint32_t> label_votes;  // neighbors carrying the true label
  std::optional<std::size_t> pd;           // 1-based probe, empty when undefined
};

/// Undefined when any of the last three probes is invalid; otherwise the
/// smallest p such that probes p..N are valid and agree with probe N.
/// Needs at least three probes.
std::optional<std::size_t> prediction_depth(std::span<const std::uint32_t> classes,
                                            std::span<const std::uint8_t> valid);

/// Probes every sample of `eval` against `set`.
std::vector<PdRecord> compute_pd_records(const Model& model, const ProbeSet& set,
                                         const LabeledDataset& eval);

struct PdHistogram {
  std::vector<std::uint64_t> counts;  // counts[i] holds pd = i + 1
  std::uint64_t undefined = 0;
  std::uint64_t total = 0;
  double mean_pd = 0.0;  // over defined samples; NaN when none is defined

  std::size_t probes() const { return counts.size(); }
  std::uint64_t defined() const { return total - undefined; }
};

PdHistogram pd_histogram(std::span<const PdRecord> records, std::size_t probes);

/// Builds the probe set from `reference`, probes `eval` and histograms it.
PdHistogram pd_histogram(const Model& model, const LabeledDataset& reference,
                         const LabeledDataset& eval, const ProbeParams& params,
                         std::vector<PdRecord>* records = nullptr);

struct DetectorParams {
  double alpha = 0.25;
  double mass = 0.5;
  /// Reference mean PD; 0 disables the mean rule.
  double mu_ref = 0.0;
};

struct DetectorVerdict {
  bool suspicious = false;
  bool mass_rule = false;
  bool mean_rule = false;
  std::size_t early_probes = 0;  // ceil(alpha * N)
  double early_mass = 0.0;       // defined-sample share in the early probes
  double mean_pd = 0.0;
  double mu_ref = 0.0;
  std::vector<std::size_t> peak_probes;  // probes holding the largest count
};

DetectorVerdict early_peak_detector(const PdHistogram& hist, const DetectorParams& params = {});

struct PdSnapshot {
  std::size_t epoch = 0;
  PdHistogram histogram;
  double val_accuracy = 0.0;
};

/// Trains `model` per `config` and probes it at each requested epoch (0 is
/// the untrained model), rebuilding the probe set from the current
/// parameters every time. Snapshot epochs beyond the run are ignored.
std::vector<PdSnapshot> epoch_snapshot_series(Model& model, const LabeledDataset& train_set,
                                              const LabeledDataset& eval,
                                              const TrainConfig& config,
                                              const ProbeParams& params,
                                              std::span<const std::size_t> snapshot_epochs,
                                              TrainState* state = nullptr);

}  // namespace dsprobe
