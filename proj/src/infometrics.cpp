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

#include "dsprobe/infometrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "dsprobe/ops.hpp"
#include "dsprobe/optim.hpp"

namespace dsprobe {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

double mean_defined_pd(std::span<const std::optional<std::size_t>> pd) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& p : pd) {
    if (p) {
      s += static_cast<double>(*p);
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : kNaN;
}

// Share of defined samples with pd <= depth (shallow) or pd > depth (deep).
double share(std::span<const std::optional<std::size_t>> pd, std::size_t depth, bool shallow) {
  std::size_t hit = 0, n = 0;
  for (const auto& p : pd) {
    if (!p) continue;
    ++n;
    hit += shallow ? (*p <= depth) : (*p > depth);
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

}  // namespace

double neg_log2(double p, bool* clamped) {
  const bool clamp = !(p >= kMinProbability);
  if (clamped) *clamped = clamp;
  return -std::log2(clamp ? kMinProbability : p);
}

double pvi(double p_null, double p_given_x) { return neg_log2(p_null) - neg_log2(p_given_x); }

double pvi_second_term(double p_given_x) { return -neg_log2(p_given_x); }

Model train_null_model(std::span<const std::uint32_t> labels, const ModelSpec& family,
                       std::uint64_t seed, const NullModelOptions& options) {
  const std::size_t c = family.classes;
  Tensor marginal({c}, 0.0f);
  std::vector<double> counts(c, 0.0);
  for (std::uint32_t y : labels) {
    if (y >= c) throw ConfigError("null model: label outside the family's classes");
    counts[y] += 1.0;
  }
  if (labels.empty()) throw ConfigError("null model: no labels");
  for (std::size_t k = 0; k < c; ++k) {
    marginal[k] = static_cast<float>(counts[k] / static_cast<double>(labels.size()));
  }

  Model g(family, seed);
  Shape input{1};
  input.insert(input.end(), family.input_shape.begin(), family.input_shape.end());
  const Tensor zeros(input, 0.0f);
  OptimizerState<float> opt;
  opt.kind = OptimizerKind::kAdam;
  opt.lr = options.lr;
  auto params = g.parameter_values();
  for (std::size_t step = 0; step < options.steps; ++step) {
    Tape<float> tape;
    const auto out = g.forward(tape, tape.constant(zeros)).output;
    const auto grads = tape.backward(soft_cross_entropy(out, marginal));
    optimizer_step(opt, std::span<Tensor* const>(params), grads);
  }
  g.meta.seed = seed;
  g.meta.dataset_id = "null-input";
  return g;
}

std::vector<double> neg_log2_likelihood(const Model& model, const LabeledDataset& ds,
                                        std::size_t* clamp_count) {
  const auto logits = model.logits(ds.images);
  const auto logp = kernels::log_softmax_rows(logits);
  const std::size_t c = logits.dim(1);
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    bool clamped = false;
    out[i] = neg_log2(std::exp(logp[i * c + ds.labels[i]]), &clamped);
    if (clamped && clamp_count) ++*clamp_count;
  }
  return out;
}

double conditional_v_entropy(const Model& g_prime, const LabeledDataset& heldout,
                             std::size_t* clamp_count) {
  return mean(neg_log2_likelihood(g_prime, heldout, clamp_count));
}

PviReport pvi_report(const Model& g_null, const Model& g_prime, const LabeledDataset& eval) {
  PviReport r;
  r.neg_log2_gprime = neg_log2_likelihood(g_prime, eval, &r.clamp_count);
  // The null model sees the same zero input for every sample.
  Shape input{1};
  const auto s = eval.sample_shape();
  input.insert(input.end(), s.begin(), s.end());
  const auto null_logp = kernels::log_softmax_rows(g_null.logits(Tensor(input, 0.0f)));
  r.neg_log2_g.resize(eval.size());
  r.pvi.resize(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) {
    bool clamped = false;
    r.neg_log2_g[i] = neg_log2(std::exp(null_logp.at(eval.labels[i])), &clamped);
    if (clamped) ++r.clamp_count;
    r.pvi[i] = r.neg_log2_g[i] - r.neg_log2_gprime[i];
  }
  r.h_y = mean(r.neg_log2_g);
  r.h_y_given_x = mean(r.neg_log2_gprime);
  r.v_information = r.h_y - r.h_y_given_x;
  return r;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: series differ in length");
  if (x.size() < 2) return kNaN;
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

BinnedCorrelation pd_pvi_binned_correlation(std::span<const PdRecord> records,
                                            std::span<const double> values,
                                            std::size_t bin_width, std::size_t probes) {
  if (bin_width == 0) throw ConfigError("binned correlation: bin width must be positive");
  const std::size_t nbins = (probes + bin_width - 1) / bin_width;
  std::vector<double> sum(nbins, 0.0);
  std::vector<std::size_t> count(nbins, 0);
  BinnedCorrelation out;
  for (const auto& r : records) {
    if (r.sample_id >= values.size()) {
      throw ShapeError("binned correlation: sample " + std::to_string(r.sample_id) +
                       " has no value");
    }
    if (!r.pd) {
      ++out.undefined_skipped;
      continue;
    }
    const std::size_t b = (*r.pd - 1) / bin_width;
    if (b >= nbins) throw ConfigError("binned correlation: pd beyond the probe count");
    sum[b] += values[r.sample_id];
    ++count[b];
  }
  std::vector<double> index, means;
  for (std::size_t b = 0; b < nbins; ++b) {
    const std::size_t lo = b * bin_width + 1, hi = std::min(probes, (b + 1) * bin_width);
    if (!count[b]) {
      out.empty_bins.emplace_back(lo, hi);
      continue;
    }
    const double m = sum[b] / static_cast<double>(count[b]);
    out.bins.push_back({lo, hi, count[b], m});
    index.push_back(static_cast<double>(b));
    means.push_back(m);
  }
  out.spearman = spearman(index, means);
  return out;
}

std::vector<double> probe_v_information(std::span<const PdRecord> records, std::size_t k,
                                        std::size_t classes) {
  if (records.empty()) return {};
  const std::size_t probes = records.front().label_votes.size();
  std::vector<double> freq(classes, 0.0);
  for (const auto& r : records) freq.at(r.label) += 1.0;
  double h_y = 0.0;
  for (double f : freq) {
    if (f > 0) {
      const double p = f / static_cast<double>(records.size());
      h_y -= p * std::log2(p);
    }
  }
  std::vector<double> out(probes);
  for (std::size_t p = 0; p < probes; ++p) {
    double s = 0.0;
    for (const auto& r : records) {
      const double q = (static_cast<double>(r.label_votes.at(p)) + 1.0) /
                       static_cast<double>(k + classes);
      s -= std::log2(q);
    }
    out[p] = h_y - s / static_cast<double>(records.size());
  }
  return out;
}

double assumption4_bound(std::size_t N, double psi, std::span<const double> class_marginals) {
  double worst = 0.0;
  for (double p : class_marginals) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("prop1: class marginals must lie in (0, 1]");
    worst = std::max(worst, -std::log(p));
  }
  return static_cast<double>(N) - psi * worst;
}

Prop1Report prop1_gap_check(const DatasetInfo& s, const DatasetInfo& i, const Prop1Params& params) {
  if (params.N < 3) throw ConfigError("prop1: needs N >= 3 probes, got " + std::to_string(params.N));
  if (!(params.psi >= 0.0 && params.psi < 0.5)) throw ConfigError("prop1: psi must lie in [0, 0.5)");
  if (params.L > params.K) throw ConfigError("prop1: L must not exceed K");
  Prop1Report r;
  r.N = params.N;
  r.L = params.L;
  r.K = params.K;
  r.psi = params.psi;
  r.mean_pd_s = mean_defined_pd(s.pd);
  r.mean_pd_i = mean_defined_pd(i.pd);
  r.frac_s_shallow = share(s.pd, params.L, true);
  r.frac_i_deep = share(i.pd, params.K, false);
  r.separation_holds = r.frac_s_shallow >= 1.0 - params.psi && r.frac_i_deep >= 1.0 - params.psi;
  r.assumption4_rhs = assumption4_bound(params.N, params.psi, params.class_marginals);
  r.assumption4_holds = static_cast<double>(params.L) < r.assumption4_rhs;
  r.neg_h_s = -s.h_y_given_x;
  r.neg_h_i = -i.h_y_given_x;
  r.v_info_s = s.v_information;
  r.v_info_i = i.v_information;
  r.pd_gap = r.mean_pd_s < r.mean_pd_i;
  r.info_ordering = r.v_info_s > r.v_info_i;
  std::vector<double> inc;
  for (const auto* d : {&s, &i}) {
    for (std::size_t p = 1; p < d->probe_v_information.size(); ++p) {
      inc.push_back(d->probe_v_information[p] - d->probe_v_information[p - 1]);
    }
  }
  if (!inc.empty()) {
    r.tau_hat = *std::min_element(inc.begin(), inc.end());
    r.epsilon_hat = *std::max_element(inc.begin(), inc.end());
  }
  r.verdict = r.pd_gap && r.info_ordering ? "holds" : "gap insufficient";
  return r;
}

SeparationFit minimal_separation(std::span<const std::optional<std::size_t>> pd_s,
                                 std::span<const std::optional<std::size_t>> pd_i, std::size_t N) {
  SeparationFit best;
  for (std::size_t depth = 1; depth < std::max<std::size_t>(N, 2); ++depth) {
    const double psi = std::max(1.0 - share(pd_s, depth, true), 1.0 - share(pd_i, depth, false));
    if (psi < best.psi) {
      best.psi = psi;
      best.depth = depth;
    }
  }
  return best;
}

}  // namespace dsprobe
