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
#include "dsprobe/model.hpp"
#include "dsprobe/pd.hpp"

namespace dsprobe {

// All entropies and information quantities are in bits unless a name says
// otherwise.

/// Smallest probability fed to a logarithm (2^-30).
inline constexpr double kMinProbability = 0x1p-30;

/// Clamps p to kMinProbability and returns -log2 p; sets *clamped when it did.
double neg_log2(double p, bool* clamped = nullptr);

/// -log2 g[null](y) + log2 g'[x](y).
double pvi(double p_null, double p_given_x);
/// log2 g'[x](y), the input-dependent term alone.
double pvi_second_term(double p_given_x);

struct NullModelOptions {
  std::size_t steps = 400;
  double lr = 0.05;
};

/// Model of the given family fit to (all-zero input, y) pairs. Every input
/// is identical, so the full-batch objective is the cross-entropy against
/// the empirical label marginal, which is what gets minimized.
Model train_null_model(std::span<const std::uint32_t> labels, const ModelSpec& family,
                       std::uint64_t seed, const NullModelOptions& options = {});

/// Per-sample -log2 of the probability the model assigns to the true label.
std::vector<double> neg_log2_likelihood(const Model& model, const LabeledDataset& ds,
                                        std::size_t* clamp_count = nullptr);

/// Mean -log2 g'[x](y) over a held-out set.
double conditional_v_entropy(const Model& g_prime, const LabeledDataset& heldout,
                             std::size_t* clamp_count = nullptr);

struct PviReport {
  std::vector<double> pvi;              // per sample
  std::vector<double> neg_log2_gprime;  // per sample
  std::vector<double> neg_log2_g;       // per sample, null model
  double h_y = 0.0;                     // H_V(Y)
  double h_y_given_x = 0.0;             // H_V(Y|X)
  double v_information = 0.0;           // H_V(Y) - H_V(Y|X)
  std::size_t clamp_count = 0;
};

/// Evaluates both models on `eval`. The summary statistics are means over
/// the same samples, so mean(pvi) equals v_information up to rounding.
PviReport pvi_report(const Model& g_null, const Model& g_prime, const LabeledDataset& eval);

/// Spearman rank correlation with average ranks for ties; NaN for fewer than
/// two points or a constant series.
double spearman(std::span<const double> x, std::span<const double> y);

struct PdBin {
  std::size_t lo = 0;  // inclusive probe range
  std::size_t hi = 0;
  std::size_t count = 0;
  double mean_value = 0.0;
};

struct BinnedCorrelation {
  std::vector<PdBin> bins;  // non-empty bins only
  std::vector<std::pair<std::size_t, std::size_t>> empty_bins;
  std::size_t undefined_skipped = 0;
  double spearman = 0.0;  // bin index vs bin mean
};

/// Groups defined-PD samples into PD intervals of `bin_width` probes and
/// correlates the bin order with the mean of `values[sample_id]` per bin.
BinnedCorrelation pd_pvi_binned_correlation(std::span<const PdRecord> records,
                                            std::span<const double> values,
                                            std::size_t bin_width, std::size_t probes);

/// k-NN estimate of the usable information at every probe: H(Y) minus the
/// mean -log2 of the Laplace-smoothed true-label vote share.
std::vector<double> probe_v_information(std::span<const PdRecord> records, std::size_t k,
                                        std::size_t classes);

struct DatasetInfo {
  std::vector<std::optional<std::size_t>> pd;
  double h_y_given_x = 0.0;
  double v_information = 0.0;
  std::vector<double> probe_v_information;
};

struct Prop1Params {
  double psi = 0.25;
  std::size_t L = 1;
  std::size_t K = 1;
  std::size_t N = 3;
  std::vector<double> class_marginals;
};

/// Right-hand side N - psi * max_y(-ln p(y)) of the depth-gap assumption.
double assumption4_bound(std::size_t N, double psi, std::span<const double> class_marginals);

struct Prop1Report {
  std::size_t N = 0, L = 0, K = 0;
  double psi = 0.0;
  double mean_pd_s = 0.0, mean_pd_i = 0.0;
  double frac_s_shallow = 0.0;  // share of defined D_s samples with pd <= L
  double frac_i_deep = 0.0;     // share of defined D_i samples with pd > K
  bool separation_holds = false;
  double assumption4_rhs = 0.0;
  bool assumption4_holds = false;
  double neg_h_s = 0.0, neg_h_i = 0.0;  // -H_V(Y|X)
  double v_info_s = 0.0, v_info_i = 0.0;
  bool pd_gap = false;
  bool info_ordering = false;
  double tau_hat = 0.0, epsilon_hat = 0.0;  // min / max probe-to-probe increments
  std::string verdict;                      // "holds" or "gap insufficient"
};

Prop1Report prop1_gap_check(const DatasetInfo& spurious, const DatasetInfo& intervened,
                            const Prop1Params& params);

struct SeparationFit {
  double psi = 1.0;
  std::size_t depth = 1;  // L = K
};

/// Smallest psi for which some L = K separates the two PD samples.
SeparationFit minimal_separation(std::span<const std::optional<std::size_t>> pd_s,
                                 std::span<const std::optional<std::size_t>> pd_i,
                                 std::size_t N);

}  // namespace dsprobe
