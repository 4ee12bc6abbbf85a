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

#include "dsprobe/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsprobe/ops.hpp"

namespace dsprobe {

SoftKnnHead make_soft_knn_head(const ProbeSet& set, std::size_t probe, std::size_t k) {
  if (set.classes() != 2) throw ConfigError("soft-kNN head: binary labels only");
  if (k == 0 || k > set.bank_size()) {
    throw ConfigError("soft-kNN head: k=" + std::to_string(k) + " needs 1 <= k <= bank size");
  }
  SoftKnnHead head;
  head.probe = probe;
  head.bank = set.bank(probe).cast<double>();
  head.labels = set.labels();
  head.k = k;
  head.max_spatial = set.max_spatial();
  return head;
}

namespace {

struct Neighborhood {
  std::vector<std::pair<double, std::size_t>> nearest;  // (L1 distance, bank row), ascending
  std::size_t median_row = 0;
  double scale = 0.0;
  bool floored = false;
};

Neighborhood neighborhood(const SoftKnnHead& head, std::span<const double> query) {
  const std::size_t m = head.bank.dim(0), d = head.bank.dim(1);
  if (query.size() != d) {
    throw ShapeError("soft-kNN: query has " + std::to_string(query.size()) +
                     " features, bank rows " + std::to_string(d));
  }
  if (head.k == 0 || head.k > m) throw ConfigError("soft-kNN: k exceeds the bank");
  const auto bank = head.bank.data();
  std::vector<std::pair<double, std::size_t>> dist(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += std::abs(query[t] - bank[j * d + t]);
    dist[j] = {s, j};
  }
  const auto k = static_cast<std::ptrdiff_t>(head.k);
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  dist.resize(head.k);
  Neighborhood n;
  // Median of the sorted neighbor distances; the lower middle for even k.
  const std::size_t mid = (head.k - 1) / 2;
  n.median_row = dist[mid].second;
  n.scale = dist[mid].first;
  if (n.scale < kMinKernelScale) {
    n.scale = kMinKernelScale;
    n.floored = true;
  }
  n.nearest = std::move(dist);
  return n;
}

// Adds sum_i coef_i * d log w_i / d query, where
// d log w_i = -d(d_i) / s + d_i * d(s) / s^2 and d(d_i) = sign(query - b_i).
void add_log_weight_grad(const SoftKnnHead& head, const Neighborhood& n,
                         std::span<const double> query, std::span<const double> coef,
                         std::vector<double>& grad) {
  const std::size_t d = query.size();
  const auto bank = head.bank.data();
  auto sign = [&](std::size_t row, std::size_t t) {
    const double diff = query[t] - bank[row * d + t];
    return diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
  };
  const double s = n.scale;
  double scale_coef = 0.0;
  for (std::size_t i = 0; i < n.nearest.size(); ++i) {
    if (coef[i] == 0.0) continue;
    const std::size_t row = n.nearest[i].second;
    for (std::size_t t = 0; t < d; ++t) grad[t] -= coef[i] * sign(row, t) / s;
    scale_coef += coef[i] * n.nearest[i].first / (s * s);
  }
  if (!n.floored && scale_coef != 0.0) {
    for (std::size_t t = 0; t < d; ++t) grad[t] += scale_coef * sign(n.median_row, t);
  }
}

// Kernel weights shifted by the nearest distance, which rescales all equally.
std::vector<double> shifted_weights(const Neighborhood& n) {
  std::vector<double> w(n.nearest.size());
  const double dmin = n.nearest.front().first;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-(n.nearest[i].first - dmin) / n.scale);
  return w;
}

}  // namespace

SoftKnnScore soft_knn_score(const SoftKnnHead& head, std::span<const double> query,
                            std::vector<double>* grad) {
  const Neighborhood n = neighborhood(head, query);
  const auto w = shifted_weights(n);
  SoftKnnScore out;
  out.scale = n.scale;
  out.scale_floored = n.floored;
  double pos = 0.0, total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.neighbors.push_back(n.nearest[i].second);
    total += w[i];
    if (head.labels[n.nearest[i].second] == 1) pos += w[i];
  }
  out.score = pos / total;
  if (grad) {
    // d score = sum_i (1[pos_i] - score) * w_i / total * d log w_i.
    std::vector<double> coef(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      coef[i] = ((head.labels[n.nearest[i].second] == 1 ? 1.0 : 0.0) - out.score) * w[i] / total;
    }
    grad->assign(query.size(), 0.0);
    add_log_weight_grad(head, n, query, coef, *grad);
  }
  return out;
}

double soft_knn_log_mass(const SoftKnnHead& head, std::span<const double> query, std::uint32_t cls,
                         std::vector<double>* grad) {
  const Neighborhood n = neighborhood(head, query);
  const auto w = shifted_weights(n);
  double mass = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (head.labels[n.nearest[i].second] == cls) mass += w[i];
  }
  if (grad) grad->assign(query.size(), 0.0);
  if (mass == 0.0) return -std::numeric_limits<double>::infinity();
  if (grad) {
    // d log mass = sum over class members of (w_i / mass) * d log w_i.
    std::vector<double> coef(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (head.labels[n.nearest[i].second] == cls) coef[i] = w[i] / mass;
    }
    add_log_weight_grad(head, n, query, coef, *grad);
  }
  return std::log(mass) - n.nearest.front().first / n.scale;
}

std::string to_string(SaliencyMethod method) {
  return method == SaliencyMethod::kGradCamSoftKnn ? "gradcam-softknn" : "input-grad";
}

std::string to_string(SaliencyObjective objective) {
  return objective == SaliencyObjective::kScore ? "score" : "log-mass";
}

SaliencyMethod saliency_method_from_string(const std::string& name) {
  if (name == "gradcam-softknn") return SaliencyMethod::kGradCamSoftKnn;
  if (name == "input-grad") return SaliencyMethod::kInputGrad;
  throw ConfigError("unknown saliency method '" + name + "'");
}

void max_normalize(std::span<float> values) {
  float top = 0.0f;
  for (float v : values) top = std::max(top, v);
  if (top <= 0.0f) {
    std::fill(values.begin(), values.end(), 0.0f);
    return;
  }
  for (float& v : values) v = std::clamp(v / top, 0.0f, 1.0f);
}

std::vector<float> bilinear_resize(std::span<const float> src, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w) {
  if (src.size() != h * w) throw ShapeError("bilinear_resize: source size mismatch");
  std::vector<float> out(out_h * out_w);
  auto coord = [](std::size_t i, std::size_t in, std::size_t out_n, std::size_t& lo,
                  std::size_t& hi, double& frac) {
    double x = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(x));
    hi = std::min(lo + 1, in - 1);
    frac = x - static_cast<double>(lo);
  };
  for (std::size_t i = 0; i < out_h; ++i) {
    std::size_t y0, y1;
    double fy;
    coord(i, h, out_h, y0, y1, fy);
    for (std::size_t j = 0; j < out_w; ++j) {
      std::size_t x0, x1;
      double fx;
      coord(j, w, out_w, x0, x1, fx);
      const double top = (1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
      const double bottom = (1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
      out[i * out_w + j] = static_cast<float>((1 - fy) * top + fy * bottom);
    }
  }
  return out;
}

SaliencyMap soft_knn_saliency(const Model& model, const SoftKnnHead& head, const Tensor& image,
                              SaliencyMethod method, std::optional<std::uint32_t> target) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw ShapeError("saliency: expected a single 1 x C x H x W image, got " + shape_str(image.shape()));
  }
  if (head.probe < 1 || head.probe > model.probe_count()) {
    throw ConfigError("saliency: probe " + std::to_string(head.probe) + " outside the model");
  }
  const std::size_t layer = model.probe_layers()[head.probe - 1];
  Tape<float> tape;
  const Var<float> x = tape.input(image, method == SaliencyMethod::kInputGrad);
  const Var<float> act = model.forward(tape, x, layer).output;
  const Shape as = act.shape();  // copy: the tape grows below
  if (method == SaliencyMethod::kGradCamSoftKnn && as.size() != 4) {
    throw ConfigError("saliency: probe " + std::to_string(head.probe) + " output " + shape_str(as) +
                      " has no spatial grid; use the input-grad method");
  }
  Var<float> q = act;
  if (as.size() == 4) {
    const std::size_t oh = std::min(as[2], head.max_spatial), ow = std::min(as[3], head.max_spatial);
    if (oh != as[2] || ow != as[3]) q = adaptive_avg_pool2d(q, oh, ow);
  }
  q = flatten(q);

  const auto qv = q.value().cast<double>();
  std::vector<double> g;
  const SoftKnnScore sc = soft_knn_score(head, qv.data(), &g);
  const std::uint32_t cls = target.value_or(sc.score >= 0.5 ? 1u : 0u);
  if (cls > 1) throw ConfigError("saliency: target class must be 0 or 1");
  // A neighborhood made only of the target class pins the score at 1 and
  // zeroes its gradient; the class's log kernel mass, the unnormalized
  // counterpart of the score, still ranks where the evidence sits.
  const bool pure = sc.score == (cls == 1 ? 1.0 : 0.0);
  double value = 0.0;
  if (pure) {
    value = soft_knn_log_mass(head, qv.data(), cls, &g);
  } else {
    const double sign = cls == 1 ? 1.0 : -1.0;
    for (double& v : g) v *= sign;
    value = cls == 1 ? sc.score : 1.0 - sc.score;
  }

  const Var<float> objective = tape.record(
      "soft_knn", Tensor::scalar(static_cast<float>(value)), {q},
      [g](const BackwardCtx<float>& ctx) {
        if (!ctx.grad_inputs[0]) return;
        auto gi = ctx.grad_inputs[0]->data();
        const double up = ctx.grad_out[0];
        for (std::size_t t = 0; t < gi.size(); ++t) gi[t] += static_cast<float>(up * g[t]);
      });
  tape.backward_from(objective, Tensor::scalar(1.0f));

  SaliencyMap map;
  map.probe = head.probe;
  map.method = method;
  map.target = cls;
  map.score = sc.score;
  map.objective = pure ? SaliencyObjective::kLogMass : SaliencyObjective::kScore;
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  std::vector<float> grid(h * w, 0.0f);

  if (method == SaliencyMethod::kInputGrad) {
    const Tensor* gx = tape.grad(x);
    if (gx) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < h * w; ++i) grid[i] += std::abs((*gx)[ch * h * w + i]);
      }
    }
  } else {
    const Tensor* ga = tape.grad(act);
    const Tensor& a = act.value();
    const std::size_t ac = as[1], ah = as[2], aw = as[3], plane = ah * aw;
    std::vector<float> cam(plane, 0.0f);
    if (ga) {
      for (std::size_t ch = 0; ch < ac; ++ch) {
        double wsum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) wsum += (*ga)[ch * plane + i];
        const double weight = wsum / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) {
          cam[i] += static_cast<float>(weight * a[ch * plane + i]);
        }
      }
    }
    for (float& v : cam) v = std::max(v, 0.0f);
    grid = bilinear_resize(cam, ah, aw, h, w);
  }
  max_normalize(grid);
  map.values = Tensor({h, w}, std::move(grid));
  return map;
}

}  // namespace dsprobe
