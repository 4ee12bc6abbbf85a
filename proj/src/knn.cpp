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

#include "dsprobe/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsprobe/ops.hpp"
#include "dsprobe/rng.hpp"

namespace dsprobe {
namespace {

// Validity thresholds compare vote shares that are exact ratios of small
// integers; the slack keeps e.g. 18/29 - 0.5 >= 0.1 from failing on rounding.
constexpr double kShareSlack = 1e-12;

}  // namespace

Tensor probe_embedding(const Tensor& raw, std::size_t max_spatial) {
  if (raw.rank() < 2) throw ShapeError("probe_embedding: expected a batch, got " + shape_str(raw.shape()));
  const std::size_t n = raw.dim(0);
  if (raw.rank() == 4 && max_spatial > 0) {
    const std::size_t oh = std::min(raw.dim(2), max_spatial);
    const std::size_t ow = std::min(raw.dim(3), max_spatial);
    Tensor pooled = (oh == raw.dim(2) && ow == raw.dim(3))
                        ? raw
                        : kernels::adaptive_avg_pool2d(raw, oh, ow);
    return pooled.reshaped({n, pooled.size() / std::max<std::size_t>(n, 1)});
  }
  return raw.reshaped({n, n ? raw.size() / n : 0});
}

double l1_distance(std::span<const float> a, std::span<const float> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return d;
}

std::vector<std::size_t> nearest_neighbors(const Tensor& bank, std::span<const float> query,
                                           std::size_t k) {
  if (bank.rank() != 2) throw ShapeError("knn: bank must be M x d, got " + shape_str(bank.shape()));
  const std::size_t m = bank.dim(0), d = bank.dim(1);
  if (query.size() != d) {
    throw ShapeError("knn: query has " + std::to_string(query.size()) + " features, bank rows " +
                     std::to_string(d));
  }
  if (k == 0 || k > m) {
    throw ConfigError("knn: k=" + std::to_string(k) + " needs 1 <= k <= bank size " +
                      std::to_string(m));
  }
  std::vector<std::pair<double, std::size_t>> dist(m);
  const auto data = bank.data();
  for (std::size_t j = 0; j < m; ++j) dist[j] = {l1_distance(query, data.subspan(j * d, d)), j};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

KnnVote vote(std::span<const std::uint32_t> neighbor_labels, std::size_t classes, double delta) {
  if (classes < 2) throw ConfigError("knn: need at least 2 classes");
  if (neighbor_labels.empty()) throw ConfigError("knn: no neighbors");
  KnnVote v;
  v.counts.assign(classes, 0);
  for (std::uint32_t y : neighbor_labels) {
    if (y >= classes) throw ConfigError("knn: neighbor label out of range");
    ++v.counts[y];
  }
  v.predicted = static_cast<std::uint32_t>(
      std::max_element(v.counts.begin(), v.counts.end()) - v.counts.begin());
  const double k = static_cast<double>(neighbor_labels.size());
  v.top_fraction = v.counts[v.predicted] / k;
  v.positive_fraction = v.counts[1] / k;
  if (classes == 2) {
    v.valid = std::abs(v.positive_fraction - 0.5) >= delta - kShareSlack;
  } else {
    v.valid = v.top_fraction >= 1.0 / static_cast<double>(classes) + delta - kShareSlack;
  }
  return v;
}

ProbeSet::ProbeSet(std::vector<Tensor> banks, std::vector<std::uint32_t> labels,
                   std::vector<std::size_t> reference_ids, std::size_t classes, std::size_t k,
                   double delta, std::size_t max_spatial)
    : banks_(std::move(banks)),
      labels_(std::move(labels)),
      reference_ids_(std::move(reference_ids)),
      classes_(classes),
      k_(k),
      delta_(delta),
      max_spatial_(max_spatial) {
  if (k_ % 2 == 0) throw ConfigError("probe set: k must be odd, got " + std::to_string(k_));
  if (k_ > labels_.size()) {
    throw ConfigError("probe set: bank of " + std::to_string(labels_.size()) +
                      " samples is smaller than k=" + std::to_string(k_));
  }
  if (!(delta_ > 0.0 && delta_ < 0.5)) throw ConfigError("probe set: delta must lie in (0, 0.5)");
  for (const auto& b : banks_) {
    if (b.rank() != 2 || b.dim(0) != labels_.size()) {
      throw ShapeError("probe set: bank " + shape_str(b.shape()) + " does not hold " +
                       std::to_string(labels_.size()) + " rows");
    }
  }
}

const Tensor& ProbeSet::bank(std::size_t probe) const {
  if (probe < 1 || probe > banks_.size()) {
    throw ConfigError("probe index " + std::to_string(probe) + " outside [1, " +
                      std::to_string(banks_.size()) + "]");
  }
  return banks_[probe - 1];
}

std::vector<std::size_t> stratified_sample(std::span<const std::uint32_t> labels,
                                           std::size_t classes, std::size_t m,
                                           std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(i);
  Rng rng(seed);
  for (auto& rows : by_class) rng.shuffle(std::span<std::size_t>(rows));
  // Round-robin over classes keeps per-class counts within one of each other
  // for as long as every class still has samples left.
  std::vector<std::size_t> out;
  std::vector<std::size_t> taken(classes, 0);
  while (out.size() < m) {
    bool progressed = false;
    for (std::size_t c = 0; c < classes && out.size() < m; ++c) {
      if (taken[c] < by_class[c].size()) {
        out.push_back(by_class[c][taken[c]++]);
        progressed = true;
      }
    }
    if (!progressed) {
      throw ConfigError("probe set: requested " + std::to_string(m) + " reference samples from " +
                        std::to_string(labels.size()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

ProbeSet build_probe_set(const Model& model, const LabeledDataset& reference,
                         const ProbeParams& params) {
  if (params.bank_size < params.k) {
    throw ConfigError("probe set: M=" + std::to_string(params.bank_size) + " is smaller than k=" +
                      std::to_string(params.k));
  }
  const auto ids = stratified_sample(reference.labels, reference.classes, params.bank_size, params.seed);
  const Tensor images = reference.images.gather_rows(ids);
  std::vector<std::uint32_t> labels;
  for (std::size_t i : ids) labels.push_back(reference.labels[i]);
  auto out = model.forward_with_probes(images);
  std::vector<Tensor> banks;
  for (const auto& e : out.embeddings) banks.push_back(probe_embedding(e, params.max_spatial));
  return ProbeSet(std::move(banks), std::move(labels), ids, reference.classes, params.k,
                  params.delta, params.max_spatial);
}

KnnVote knn_predict(const ProbeSet& set, std::size_t probe, std::span<const float> query) {
  const Tensor& bank = set.bank(probe);
  const auto idx = nearest_neighbors(bank, query, set.k());
  std::vector<std::uint32_t> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(set.labels()[i]);
  return vote(labels, set.classes(), set.delta());
}

}  // namespace dsprobe
