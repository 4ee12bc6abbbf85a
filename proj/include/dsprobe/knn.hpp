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
#include <vector>

#include "dsprobe/dataset.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/tensor.hpp"

namespace dsprobe {

struct ProbeParams {
  std::size_t bank_size = 1000;  // M
  std::size_t k = 29;
  double delta = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_spatial = 8;
};

/// Probe view of a raw layer output: image-shaped embeddings are adaptively
/// average-pooled to at most max_spatial x max_spatial (never up-sampled),
/// then every sample is flattened. Returns N x d.
Tensor probe_embedding(const Tensor& raw, std::size_t max_spatial = 8);

/// L1 distance accumulated in double in index order.
double l1_distance(std::span<const float> a, std::span<const float> b);

/// Indices of the k nearest rows of bank (M x d) by L1 distance, nearest
/// first; equal distances resolve to the lower row index.
std::vector<std::size_t> nearest_neighbors(const Tensor& bank, std::span<const float> query,
                                           std::size_t k);

struct KnnVote {
  std::uint32_t predicted = 0;
  double top_fraction = 0.0;       // share of the predicted class
  double positive_fraction = 0.0;  // share of class 1 (binary tasks)
  bool valid = false;
  std::vector<std::uint32_t> counts;  // votes per class
};

/// Plurality vote over neighbor labels; equal counts resolve to the lower
/// class. Binary tasks are valid iff |f_pos - 0.5| >= delta, multiclass
/// tasks iff f_top >= 1/C + delta.
KnnVote vote(std::span<const std::uint32_t> neighbor_labels, std::size_t classes, double delta);

/// Reference banks for every probe of a model, all built from the same
/// reference samples.
class ProbeSet {
 public:
  ProbeSet(std::vector<Tensor> banks, std::vector<std::uint32_t> labels,
           std::vector<std::size_t> reference_ids, std::size_t classes, std::size_t k,
           double delta, std::size_t max_spatial);

  std::size_t probe_count() const { return banks_.size(); }
  std::size_t bank_size() const { return labels_.size(); }
  std::size_t classes() const { return classes_; }
  std::size_t k() const { return k_; }
  double delta() const { return delta_; }
  std::size_t max_spatial() const { return max_spatial_; }
  /// probe is 1-based.
  const Tensor& bank(std::size_t probe) const;
  const std::vector<std::uint32_t>& labels() const { return labels_; }
  const std::vector<std::size_t>& reference_ids() const { return reference_ids_; }

 private:
  std::vector<Tensor> banks_;
  std::vector<std::uint32_t> labels_;
  std::vector<std::size_t> reference_ids_;
  std::size_t classes_;
  std::size_t k_;
  double delta_;
  std::size_t max_spatial_;
};

/// Class-stratified sample of M row indices (per-class counts differ by at
/// most one), ascending.
std::vector<std::size_t> stratified_sample(std::span<const std::uint32_t> labels,
                                           std::size_t classes, std::size_t m,
                                           std::uint64_t seed);

ProbeSet build_probe_set(const Model& model, const LabeledDataset& reference,
                         const ProbeParams& params);

/// query is a probe embedding row (see probe_embedding); probe is 1-based.
KnnVote knn_predict(const ProbeSet& set, std::size_t probe, std::span<const float> query);

}  // namespace dsprobe
