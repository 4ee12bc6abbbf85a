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

#include "dsprobe/knn.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/tensor.hpp"

namespace dsprobe {

/// Differentiable kernel k-NN over one probe's reference bank (binary
/// labels only).
struct SoftKnnHead {
  std::size_t probe = 1;  // 1-based
  Tensor64 bank;          // M x d, probe embeddings
  std::vector<std::uint32_t> labels;
  std::size_t k = 29;
  std::size_t max_spatial = 8;
};

/// Head over probe `probe` of a probe set; requires a binary task and
/// k <= bank size.
SoftKnnHead make_soft_knn_head(const ProbeSet& set, std::size_t probe, std::size_t k = 29);

inline constexpr double kMinKernelScale = 1e-12;

struct SoftKnnScore {
  double score = 0.0;  // kernel mass of positive neighbors over total mass
  double scale = 0.0;  // median L1 distance among the k neighbors
  bool scale_floored = false;
  std::vector<std::size_t> neighbors;
};

/// Scores a query embedding. When `grad` is given it receives d score / d
/// query, holding the neighbor set fixed (the score is piecewise smooth).
SoftKnnScore soft_knn_score(const SoftKnnHead& head, std::span<const double> query,
                            std::vector<double>* grad = nullptr);

/// log of the kernel mass of class `cls` among the k neighbors (the
/// score's numerator for cls 1, unnormalized); -inf when no neighbor has
/// that class. `grad` receives its gradient, zero in the -inf case.
double soft_knn_log_mass(const SoftKnnHead& head, std::span<const double> query, std::uint32_t cls,
                         std::vector<double>* grad = nullptr);

enum class SaliencyMethod { kGradCamSoftKnn, kInputGrad };
std::string to_string(SaliencyMethod method);
SaliencyMethod saliency_method_from_string(const std::string& name);

/// What was differentiated: the score of the target class, or its log
/// kernel mass when every neighbor carries the target class.
enum class SaliencyObjective { kScore, kLogMass };
std::string to_string(SaliencyObjective objective);

struct SaliencyMap {
  Tensor values;  // H x W of the input, in [0, 1]
  std::size_t probe = 0;
  SaliencyMethod method = SaliencyMethod::kGradCamSoftKnn;
  std::uint32_t target = 1;  // class whose soft-kNN mass was explained
  double score = 0.0;
  SaliencyObjective objective = SaliencyObjective::kScore;
};

/// Rescales nonnegative values so the maximum is 1; all-zero stays zero.
void max_normalize(std::span<float> values);

/// Bilinear resize of an h x w grid (half-pixel centers, edge clamped).
std::vector<float> bilinear_resize(std::span<const float> src, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w);

/// Grad-CAM on `head.probe` with the soft-kNN score of `target` (the
/// score's own decision when unset) as the objective, or the input
/// gradient magnitude summed over channels. `image` is 1 x C x H x W.
/// Pure neighborhoods fall back to the log kernel mass (see
/// SaliencyObjective).
SaliencyMap soft_knn_saliency(const Model& model, const SoftKnnHead& head, const Tensor& image,
                              SaliencyMethod method = SaliencyMethod::kGradCamSoftKnn,
                              std::optional<std::uint32_t> target = std::nullopt);

}  // namespace dsprobe
