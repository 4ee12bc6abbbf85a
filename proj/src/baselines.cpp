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

#include "dsprobe/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "dsprobe/infometrics.hpp"
#include "dsprobe/ops.hpp"
#include "dsprobe/pd.hpp"
#include "dsprobe/rng.hpp"
#include "dsprobe/spurious.hpp"
#include "json_util.hpp"

namespace dsprobe {
namespace {

constexpr std::uint64_t kMemberStream = 0x656e73ULL;
constexpr std::uint64_t kInterveneStream = 2;
constexpr std::size_t kMinPdProbes = 3;

}  // namespace

double softmax_entropy(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax_entropy: empty logit row");
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - top);
  const double log_z = std::log(z);
  double h = 0.0;
  for (double v : logits) {
    const double logp = v - top - log_z;
    h -= std::exp(logp) * logp;
  }
  // Rounding can push a one-hot row a hair below zero.
  return std::max(h, 0.0);
}

nlohmann::json to_json(const EnsembleSpec& spec) {
  auto train = to_json(spec.train);
  train.erase("seed");
  return {{"count", spec.count}, {"family", spec.family}, {"training", train}};
}

EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {"count", "family", "training"}, "ensemble");
  EnsembleSpec spec;
  spec.count = detail::get_required<std::size_t>(j, "count", "ensemble");
  spec.family = detail::get_or<std::string>(j, "family", spec.family);
  if (j.contains("training")) {
    auto t = j.at("training");
    if (t.is_object() && !t.contains("seed")) t["seed"] = 0;
    spec.train = train_config_from_json(t);
  }
  if (spec.count < 2) throw ConfigError("ensemble: count must be at least 2");
  if (spec.family != "linear" && spec.family != "conv-relu-linear") {
    throw ConfigError("ensemble: family must be 'linear' or 'conv-relu-linear', got '" +
                      spec.family + "'");
  }
  return spec;
}

EnsembleEntropy ensemble_entropy(const LabeledDataset& train_set, const LabeledDataset& eval,
                                 const EnsembleSpec& spec, std::uint64_t seed) {
  if (spec.count < 2) throw ConfigError("ensemble: count must be at least 2");
  const ModelSpec family = preset_model(spec.family, train_set.sample_shape(), train_set.classes);
  EnsembleEntropy out;
  out.members = spec.count;
  out.per_sample.assign(eval.size(), 0.0);
  for (std::size_t m = 0; m < spec.count; ++m) {
    const std::uint64_t member_seed = Rng::derive(seed, kMemberStream + m);
    Model model(family, member_seed);
    TrainConfig cfg = spec.train;
    cfg.seed = member_seed;
    train(model, train_set, nullptr, cfg);
    const Tensor logits = model.logits(eval.images);
    const std::size_t c = logits.dim(1);
    std::vector<double> row(c);
    for (std::size_t i = 0; i < eval.size(); ++i) {
      for (std::size_t k = 0; k < c; ++k) row[k] = logits[i * c + k];
      out.per_sample[i] += softmax_entropy(row);
    }
  }
  double total = 0.0;
  for (double& v : out.per_sample) {
    v /= static_cast<double>(spec.count);
    total += v;
  }
  out.mean = eval.size() ? total / static_cast<double>(eval.size()) : 0.0;
  return out;
}

CoreOnlyAccuracy core_only_accuracy(const Model& model, const LabeledDataset& domino_test) {
  return {accuracy(model, domino_test), accuracy(model, mask_core_only(domino_test))};
}

std::string to_string(DifficultyMetric metric) {
  switch (metric) {
    case DifficultyMetric::kMeanPd: return "mean-pd";
    case DifficultyMetric::kAccuracy: return "accuracy";
    case DifficultyMetric::kVInfo: return "v-info";
  }
  return "?";
}

DifficultyMetric difficulty_metric_from_string(const std::string& name) {
  if (name == "mean-pd") return DifficultyMetric::kMeanPd;
  if (name == "accuracy") return DifficultyMetric::kAccuracy;
  if (name == "v-info") return DifficultyMetric::kVInfo;
  throw ConfigError("unknown difficulty metric '" + name + "'");
}

nlohmann::json to_json(const HarmfulnessVerdict& v) {
  return {{"metric", to_string(v.metric)},
          {"psi_observational", v.psi_observational},
          {"psi_interventional", v.psi_interventional},
          {"seeds", v.seeds},
          {"verdict", v.verdict}};
}

double task_difficulty(const Model& model, const LabeledDataset& reference,
                       const LabeledDataset& heldout, DifficultyMetric metric,
                       const ProbeParams& probe, std::uint64_t seed) {
  switch (metric) {
    case DifficultyMetric::kAccuracy:
      return 1.0 - accuracy(model, heldout);
    case DifficultyMetric::kVInfo: {
      const Model null_model = train_null_model(reference.labels, model.spec(), seed);
      const PviReport r = pvi_report(null_model, model, heldout);
      return r.h_y_given_x - r.h_y;
    }
    case DifficultyMetric::kMeanPd: {
      if (model.probe_count() < kMinPdProbes) {
        throw ConfigError("difficulty: mean-pd needs at least 3 probes, the model has " +
                          std::to_string(model.probe_count()));
      }
      ProbeParams p = probe;
      p.seed = seed;
      return pd_histogram(model, reference, heldout, p).mean_pd;
    }
  }
  throw ConfigError("difficulty: unknown metric");
}

HarmfulnessVerdict harmfulness_verdict(const LabeledDataset& ds, const HarmfulnessParams& params) {
  if (!ds.spurious) throw ConfigError("harmfulness: dataset carries no spurious record");
  if (params.seeds.empty()) throw ConfigError("harmfulness: needs at least one seed");
  if (!(params.tolerance >= 0.0)) throw ConfigError("harmfulness: tolerance must be non-negative");
  if (params.metric == DifficultyMetric::kMeanPd &&
      resolve_probes(params.family).size() < kMinPdProbes) {
    throw ConfigError("harmfulness: mean-pd needs a family with at least 3 probes");
  }
  HarmfulnessVerdict v;
  v.metric = params.metric;
  v.seeds = params.seeds;
  for (std::uint64_t seed : params.seeds) {
    const LabeledDataset intervened =
        intervene_randomize_spurious(ds, Rng::derive(seed, kInterveneStream));
    for (const LabeledDataset* d : {&ds, &intervened}) {
      // The split depends only on the size and seed, so both arms share indices.
      const Splits s = split_dataset(*d, params.heldout_fraction, 0.0, seed);
      Model model(params.family, seed);
      TrainConfig cfg = params.train;
      cfg.seed = seed;
      train(model, s.train, nullptr, cfg);
      const double psi = task_difficulty(model, s.train, s.val, params.metric, params.probe, seed);
      (d == &ds ? v.psi_observational : v.psi_interventional).push_back(psi);
    }
  }
  const double obs_max = *std::max_element(v.psi_observational.begin(), v.psi_observational.end());
  const double int_min = *std::min_element(v.psi_interventional.begin(), v.psi_interventional.end());
  v.harmful = int_min > obs_max + params.tolerance;
  v.verdict = v.harmful ? "harmful" : "benign";
  return v;
}

}  // namespace dsprobe
