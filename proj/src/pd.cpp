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

#include "dsprobe/pd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsprobe {
namespace {

constexpr std::size_t kProbeChunk = 256;
constexpr std::size_t kTail = 3;

}  // namespace

std::optional<std::size_t> prediction_depth(std::span<const std::uint32_t> classes,
                                            std::span<const std::uint8_t> valid) {
  const std::size_t n = classes.size();
  if (valid.size() != n) throw ShapeError("prediction_depth: class and validity traces differ in length");
  if (n < kTail) {
    throw ConfigError("prediction_depth: needs at least 3 probes, got " + std::to_string(n));
  }
  for (std::size_t i = n - kTail; i < n; ++i) {
    if (!valid[i]) return std::nullopt;
  }
  const std::uint32_t final_class = classes[n - 1];
  std::size_t p = n;
  while (p > 1 && valid[p - 2] && classes[p - 2] == final_class) --p;
  return p;
}

std::vector<PdRecord> compute_pd_records(const Model& model, const ProbeSet& set,
                                         const LabeledDataset& eval) {
  if (model.probe_count() != set.probe_count()) {
    throw ConfigError("pd: model has " + std::to_string(model.probe_count()) +
                      " probes but the probe set " + std::to_string(set.probe_count()));
  }
  const std::size_t probes = set.probe_count();
  std::vector<PdRecord> records(eval.size());
  for (std::size_t b = 0; b < eval.size(); b += kProbeChunk) {
    const std::size_t e = std::min(eval.size(), b + kProbeChunk);
    const auto out = model.forward_with_probes(eval.images.rows(b, e));
    for (std::size_t p = 0; p < probes; ++p) {
      const Tensor emb = probe_embedding(out.embeddings[p], set.max_spatial());
      const std::size_t d = emb.dim(1);
      for (std::size_t i = b; i < e; ++i) {
        PdRecord& r = records[i];
        const KnnVote v = knn_predict(set, p + 1, emb.data().subspan((i - b) * d, d));
        r.classes.push_back(v.predicted);
        r.top_fraction.push_back(v.top_fraction);
        r.valid.push_back(v.valid ? 1 : 0);
        r.label_votes.push_back(v.counts.at(eval.labels[i]));
      }
    }
    for (std::size_t i = b; i < e; ++i) {
      records[i].sample_id = i;
      records[i].label = eval.labels[i];
      records[i].pd = prediction_depth(records[i].classes, records[i].valid);
    }
  }
  return records;
}

PdHistogram pd_histogram(std::span<const PdRecord> records, std::size_t probes) {
  PdHistogram h;
  h.counts.assign(probes, 0);
  h.total = records.size();
  double sum = 0.0;
  for (const auto& r : records) {
    if (!r.pd) {
      ++h.undefined;
      continue;
    }
    if (*r.pd < 1 || *r.pd > probes) throw ConfigError("pd_histogram: pd outside [1, N]");
    ++h.counts[*r.pd - 1];
    sum += static_cast<double>(*r.pd);
  }
  h.mean_pd = h.defined() ? sum / static_cast<double>(h.defined())
                          : std::numeric_limits<double>::quiet_NaN();
  return h;
}

PdHistogram pd_histogram(const Model& model, const LabeledDataset& reference,
                         const LabeledDataset& eval, const ProbeParams& params,
                         std::vector<PdRecord>* records) {
  const ProbeSet set = build_probe_set(model, reference, params);
  auto recs = compute_pd_records(model, set, eval);
  PdHistogram h = pd_histogram(recs, set.probe_count());
  if (records) *records = std::move(recs);
  return h;
}

DetectorVerdict early_peak_detector(const PdHistogram& hist, const DetectorParams& params) {
  if (!(params.alpha > 0.0 && params.alpha < 1.0)) {
    throw ConfigError("early_peak_detector: alpha must lie in (0, 1)");
  }
  DetectorVerdict v;
  const std::size_t n = hist.probes();
  v.early_probes = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(params.alpha * static_cast<double>(n))));
  std::uint64_t early = 0;
  for (std::size_t i = 0; i < v.early_probes; ++i) early += hist.counts[i];
  v.early_mass = hist.defined() ? static_cast<double>(early) / static_cast<double>(hist.defined()) : 0.0;
  v.mean_pd = hist.mean_pd;
  v.mu_ref = params.mu_ref;
  v.mass_rule = hist.defined() > 0 && v.early_mass >= params.mass;
  v.mean_rule = params.mu_ref > 0.0 && hist.defined() > 0 && hist.mean_pd < 0.5 * params.mu_ref;
  v.suspicious = v.mass_rule || v.mean_rule;
  if (n) {
    const std::uint64_t top = *std::max_element(hist.counts.begin(), hist.counts.end());
    for (std::size_t i = 0; i < n && top > 0; ++i) {
      if (hist.counts[i] == top) v.peak_probes.push_back(i + 1);
    }
  }
  return v;
}

std::vector<PdSnapshot> epoch_snapshot_series(Model& model, const LabeledDataset& train_set,
                                              const LabeledDataset& eval,
                                              const TrainConfig& config,
                                              const ProbeParams& params,
                                              std::span<const std::size_t> snapshot_epochs,
                                              TrainState* state) {
  std::vector<std::size_t> wanted(snapshot_epochs.begin(), snapshot_epochs.end());
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  auto is_wanted = [&](std::size_t e) { return std::binary_search(wanted.begin(), wanted.end(), e); };

  std::vector<PdSnapshot> out;
  auto snap = [&](std::size_t epoch, const Model& m) {
    PdSnapshot s;
    s.epoch = epoch;
    s.histogram = pd_histogram(m, train_set, eval, params);
    s.val_accuracy = accuracy(m, eval);
    out.push_back(std::move(s));
  };
  TrainState local = initial_train_state(config);
  TrainState& st = state ? *state : local;
  if (st.epoch == 0 && is_wanted(0)) snap(0, model);
  train(model, st, train_set, &eval, config, [&](std::size_t epoch, const Model& m) {
    if (is_wanted(epoch)) snap(epoch, m);
  });
  return out;
}

}  // namespace dsprobe
