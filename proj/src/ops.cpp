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

#include "dsprobe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace dsprobe {
namespace {

[[noreturn]] void fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::string pair_str(const Shape& a, const Shape& b) {
  return shape_str(a) + " vs " + shape_str(b);
}

void require_rank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

// Row-major GEMM variants; C accumulates. Loop orders are fixed so results
// are reproducible bit for bit.

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      if (a == T{0}) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc{0};
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T{0}) continue;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

struct ConvGeometry {
  std::size_t C, H, W, K, stride, pad, Ho, Wo;
  std::size_t rows() const { return C * K * K; }
  std::size_t cols() const { return Ho * Wo; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t L = g.cols();
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ki = 0; ki < g.K; ++ki) {
      for (std::size_t kj = 0; kj < g.K; ++kj) {
        T* row = cols + ((c * g.K + ki) * g.K + kj) * L;
        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ow = 0; ow < g.Wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(g.H) &&
                                iw < static_cast<std::ptrdiff_t>(g.W);
            row[oh * g.Wo + ow] =
                inside ? x[(c * g.H + static_cast<std::size_t>(ih)) * g.W + static_cast<std::size_t>(iw)]
                       : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x) {
  const std::size_t L = g.cols();
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ki = 0; ki < g.K; ++ki) {
      for (std::size_t kj = 0; kj < g.K; ++kj) {
        const T* row = cols + ((c * g.K + ki) * g.K + kj) * L;
        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.H)) continue;
          for (std::size_t ow = 0; ow < g.Wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.W)) continue;
            x[(c * g.H + static_cast<std::size_t>(ih)) * g.W + static_cast<std::size_t>(iw)] +=
                row[oh * g.Wo + ow];
          }
        }
      }
    }
  }
}

struct PoolGeometry {
  std::size_t N, C, H, W, K, stride, Ho, Wo;
};

PoolGeometry pool_geometry(std::string_view op, const Shape& s, std::size_t kernel,
                           std::size_t stride) {
  require_rank(op, s, 4);
  if (kernel == 0) fail(op, "kernel must be positive");
  if (stride == 0) stride = kernel;
  if (s[2] < kernel || s[3] < kernel) {
    fail(op, "kernel " + std::to_string(kernel) + " larger than input " + shape_str(s));
  }
  return {s[0], s[1], s[2], s[3], kernel, stride, (s[2] - kernel) / stride + 1,
          (s[3] - kernel) / stride + 1};
}

std::size_t window_begin(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t window_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) fail("matmul", pair_str(sa, sb));
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  BasicTensor<T> out({M, N}, T{0});
  gemm_nn(M, N, K, a.value().data().data(), b.value().data().data(), out.data().data());
  return a.tape->record("matmul", std::move(out), {a, b}, [M, N, K](const BackwardCtx<T>& ctx) {
    const T* A = ctx.inputs[0]->data().data();
    const T* B = ctx.inputs[1]->data().data();
    const T* G = ctx.grad_out.data().data();
    if (auto* ga = ctx.grad_inputs[0]) gemm_nt(M, K, N, G, B, ga->data().data());
    if (auto* gb = ctx.grad_inputs[1]) gemm_tn(K, N, M, A, G, gb->data().data());
  });
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias) {
  const Shape sx = x.shape();
  const Shape sw = weight.shape();
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1]) fail("dense", pair_str(sx, sw));
  if (bias.shape() != Shape{sw[0]}) fail("dense", "bias " + pair_str(bias.shape(), Shape{sw[0]}));
  const std::size_t N = sx[0], in = sx[1], outd = sw[0];
  BasicTensor<T> out({N, outd}, T{0});
  T* y = out.data().data();
  const T* b = bias.value().data().data();
  for (std::size_t n = 0; n < N; ++n) std::copy_n(b, outd, y + n * outd);
  gemm_nt(N, outd, in, x.value().data().data(), weight.value().data().data(), y);
  return x.tape->record(
      "dense", std::move(out), {x, weight, bias}, [N, in, outd](const BackwardCtx<T>& ctx) {
        const T* G = ctx.grad_out.data().data();
        if (auto* gx = ctx.grad_inputs[0]) {
          gemm_nn(N, in, outd, G, ctx.inputs[1]->data().data(), gx->data().data());
        }
        if (auto* gw = ctx.grad_inputs[1]) {
          gemm_tn(outd, in, N, G, ctx.inputs[0]->data().data(), gw->data().data());
        }
        if (auto* gb = ctx.grad_inputs[2]) {
          T* db = gb->data().data();
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < outd; ++o) db[o] += G[n * outd + o];
        }
      });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, Conv2dOptions options) {
  const Shape sx = x.shape();
  const Shape sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1] || sw[2] != sw[3]) {
    fail("conv2d", "input " + pair_str(sx, sw));
  }
  if (bias.shape() != Shape{sw[0]}) fail("conv2d", "bias " + pair_str(bias.shape(), Shape{sw[0]}));
  if (options.stride == 0) fail("conv2d", "stride must be positive");
  const std::size_t K = sw[2];
  if (sx[2] + 2 * options.pad < K || sx[3] + 2 * options.pad < K) {
    fail("conv2d", "kernel larger than padded input " + pair_str(sx, sw));
  }
  ConvGeometry g{sx[1], sx[2], sx[3], K, options.stride, options.pad,
                 (sx[2] + 2 * options.pad - K) / options.stride + 1,
                 (sx[3] + 2 * options.pad - K) / options.stride + 1};
  const std::size_t N = sx[0], O = sw[0];
  const std::size_t L = g.cols(), R = g.rows(), in_stride = g.C * g.H * g.W;
  BasicTensor<T> out({N, O, g.Ho, g.Wo}, T{0});
  std::vector<T> cols(R * L);
  const T* X = x.value().data().data();
  const T* Wt = weight.value().data().data();
  const T* b = bias.value().data().data();
  for (std::size_t n = 0; n < N; ++n) {
    im2col(g, X + n * in_stride, cols.data());
    T* y = out.data().data() + n * O * L;
    for (std::size_t o = 0; o < O; ++o) std::fill_n(y + o * L, L, b[o]);
    gemm_nn(O, L, R, Wt, cols.data(), y);
  }
  return x.tape->record(
      "conv2d", std::move(out), {x, weight, bias}, [g, N, O, L, R, in_stride](const BackwardCtx<T>& ctx) {
        const T* X = ctx.inputs[0]->data().data();
        const T* Wt = ctx.inputs[1]->data().data();
        const T* G = ctx.grad_out.data().data();
        std::vector<T> cols(R * L);
        std::vector<T> dcols;
        if (ctx.grad_inputs[0]) dcols.resize(R * L);
        for (std::size_t n = 0; n < N; ++n) {
          const T* gy = G + n * O * L;
          if (auto* gw = ctx.grad_inputs[1]) {
            im2col(g, X + n * in_stride, cols.data());
            gemm_nt(O, R, L, gy, cols.data(), gw->data().data());
          }
          if (auto* gb = ctx.grad_inputs[2]) {
            T* db = gb->data().data();
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t l = 0; l < L; ++l) db[o] += gy[o * L + l];
          }
          if (auto* gx = ctx.grad_inputs[0]) {
            std::fill(dcols.begin(), dcols.end(), T{0});
            gemm_tn(R, L, O, Wt, gy, dcols.data());
            col2im(g, dcols.data(), gx->data().data() + n * in_stride);
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return x.tape->record("relu", std::move(out), {x}, [](const BackwardCtx<T>& ctx) {
    const auto in = ctx.inputs[0]->data();
    const auto g = ctx.grad_out.data();
    auto gx = ctx.grad_inputs[0]->data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > T{0}) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> max_pool2d(Var<T> x, std::size_t kernel, std::size_t stride) {
  const PoolGeometry g = pool_geometry("max_pool2d", x.shape(), kernel, stride);
  BasicTensor<T> out({g.N, g.C, g.Ho, g.Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* X = x.value().data().data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < g.N * g.C; ++nc) {
    const T* plane = X + nc * g.H * g.W;
    for (std::size_t oh = 0; oh < g.Ho; ++oh) {
      for (std::size_t ow = 0; ow < g.Wo; ++ow, ++o) {
        std::size_t best = (oh * g.stride) * g.W + ow * g.stride;
        for (std::size_t i = 0; i < g.K; ++i) {
          for (std::size_t j = 0; j < g.K; ++j) {
            const std::size_t idx = (oh * g.stride + i) * g.W + ow * g.stride + j;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        out[o] = plane[best];
        (*argmax)[o] = nc * g.H * g.W + best;
      }
    }
  }
  return x.tape->record("max_pool2d", std::move(out), {x}, [argmax](const BackwardCtx<T>& ctx) {
    auto gx = ctx.grad_inputs[0]->data();
    const auto g = ctx.grad_out.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var<T> avg_pool2d(Var<T> x, std::size_t kernel, std::size_t stride) {
  const PoolGeometry g = pool_geometry("avg_pool2d", x.shape(), kernel, stride);
  BasicTensor<T> out({g.N, g.C, g.Ho, g.Wo});
  const T inv = T{1} / static_cast<T>(g.K * g.K);
  const T* X = x.value().data().data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < g.N * g.C; ++nc) {
    const T* plane = X + nc * g.H * g.W;
    for (std::size_t oh = 0; oh < g.Ho; ++oh) {
      for (std::size_t ow = 0; ow < g.Wo; ++ow, ++o) {
        T acc{0};
        for (std::size_t i = 0; i < g.K; ++i)
          for (std::size_t j = 0; j < g.K; ++j)
            acc += plane[(oh * g.stride + i) * g.W + ow * g.stride + j];
        out[o] = acc * inv;
      }
    }
  }
  return x.tape->record("avg_pool2d", std::move(out), {x}, [g, inv](const BackwardCtx<T>& ctx) {
    T* GX = ctx.grad_inputs[0]->data().data();
    const T* G = ctx.grad_out.data().data();
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < g.N * g.C; ++nc) {
      T* plane = GX + nc * g.H * g.W;
      for (std::size_t oh = 0; oh < g.Ho; ++oh)
        for (std::size_t ow = 0; ow < g.Wo; ++ow, ++o)
          for (std::size_t i = 0; i < g.K; ++i)
            for (std::size_t j = 0; j < g.K; ++j)
              plane[(oh * g.stride + i) * g.W + ow * g.stride + j] += G[o] * inv;
    }
  });
}

namespace kernels {

template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  require_rank("adaptive_avg_pool2d", s, 4);
  if (out_h == 0 || out_w == 0 || out_h > s[2] || out_w > s[3]) {
    fail("adaptive_avg_pool2d", "cannot pool " + shape_str(s) + " to " + std::to_string(out_h) +
                                    "x" + std::to_string(out_w));
  }
  const std::size_t H = s[2], W = s[3];
  BasicTensor<T> out({s[0], s[1], out_h, out_w});
  const T* X = x.data().data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc) {
    const T* plane = X + nc * H * W;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t h0 = window_begin(i, H, out_h), h1 = window_end(i, H, out_h);
      for (std::size_t j = 0; j < out_w; ++j, ++o) {
        const std::size_t w0 = window_begin(j, W, out_w), w1 = window_end(j, W, out_w);
        T acc{0};
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) acc += plane[h * W + w];
        out[o] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
      }
    }
  }
  return out;
}

template <typename T>
std::vector<double> log_softmax_rows(const BasicTensor<T>& logits) {
  require_rank("log_softmax", logits.shape(), 2);
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::vector<double> out(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits[n * C + c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(logits[n * C + c]) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < C; ++c) out[n * C + c] = static_cast<double>(logits[n * C + c]) - lse;
  }
  return out;
}

}  // namespace kernels

template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w) {
  BasicTensor<T> out = kernels::adaptive_avg_pool2d(x.value(), out_h, out_w);
  const Shape s = x.shape();
  return x.tape->record("adaptive_avg_pool2d", std::move(out), {x},
                        [s, out_h, out_w](const BackwardCtx<T>& ctx) {
    const std::size_t H = s[2], W = s[3];
    T* GX = ctx.grad_inputs[0]->data().data();
    const T* G = ctx.grad_out.data().data();
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc) {
      T* plane = GX + nc * H * W;
      for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t h0 = window_begin(i, H, out_h), h1 = window_end(i, H, out_h);
        for (std::size_t j = 0; j < out_w; ++j, ++o) {
          const std::size_t w0 = window_begin(j, W, out_w), w1 = window_end(j, W, out_w);
          const T share = G[o] / static_cast<T>((h1 - h0) * (w1 - w0));
          for (std::size_t h = h0; h < h1; ++h)
            for (std::size_t w = w0; w < w1; ++w) plane[h * W + w] += share;
        }
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.value().size()) fail("reshape", pair_str(x.shape(), shape));
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x}, [](const BackwardCtx<T>& ctx) {
    auto gx = ctx.grad_inputs[0]->data();
    const auto g = ctx.grad_out.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> flatten(Var<T> x) {
  const Shape s = x.shape();
  if (s.empty()) fail("flatten", "scalar input");
  return reshape(x, Shape{s[0], s[0] ? x.value().size() / s[0] : 0});
}

template <typename T>
Var<T> softmax(Var<T> x) {
  require_rank("softmax", x.shape(), 2);
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  const std::vector<double> logp = kernels::log_softmax_rows(x.value());
  BasicTensor<T> out({N, C});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(std::exp(logp[i]));
  return x.tape->record("softmax", std::move(out), {x}, [N, C](const BackwardCtx<T>& ctx) {
    const T* Y = ctx.out.data().data();
    const T* G = ctx.grad_out.data().data();
    T* GX = ctx.grad_inputs[0]->data().data();
    for (std::size_t n = 0; n < N; ++n) {
      T dot{0};
      for (std::size_t c = 0; c < C; ++c) dot += G[n * C + c] * Y[n * C + c];
      for (std::size_t c = 0; c < C; ++c) GX[n * C + c] += Y[n * C + c] * (G[n * C + c] - dot);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) fail("add", pair_str(a.shape(), b.shape()));
  BasicTensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [](const BackwardCtx<T>& ctx) {
    const auto g = ctx.grad_out.data();
    for (auto* gi : ctx.grad_inputs) {
      if (!gi) continue;
      auto d = gi->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) fail("sub", pair_str(a.shape(), b.shape()));
  BasicTensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [](const BackwardCtx<T>& ctx) {
    const auto g = ctx.grad_out.data();
    if (auto* ga = ctx.grad_inputs[0]) {
      auto d = ga->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (auto* gb = ctx.grad_inputs[1]) {
      auto d = gb->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) fail("mul", pair_str(a.shape(), b.shape()));
  BasicTensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [](const BackwardCtx<T>& ctx) {
    const auto g = ctx.grad_out.data();
    const auto av = ctx.inputs[0]->data();
    const auto bv = ctx.inputs[1]->data();
    if (auto* ga = ctx.grad_inputs[0]) {
      auto d = ga->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (auto* gb = ctx.grad_inputs[1]) {
      auto d = gb->data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  BasicTensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  return x.tape->record("scale", std::move(out), {x}, [factor](const BackwardCtx<T>& ctx) {
    const auto g = ctx.grad_out.data();
    auto d = ctx.grad_inputs[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> sum_reduce(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape->record("sum_reduce", BasicTensor<T>::scalar(acc), {x},
                        [](const BackwardCtx<T>& ctx) {
    const T g = ctx.grad_out[0];
    for (T& d : ctx.grad_inputs[0]->data()) d += g;
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels) {
  const Shape s = logits.shape();
  require_rank("cross_entropy", s, 2);
  const std::size_t N = s[0], C = s[1];
  if (C < 2) fail("cross_entropy", "need at least 2 classes, got " + shape_str(s));
  if (labels.size() != N) {
    fail("cross_entropy", "logits " + shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
  }
  for (std::uint32_t y : labels) {
    if (y >= C) {
      throw Error("cross_entropy: label " + std::to_string(y) + " out of range for " +
                  std::to_string(C) + " classes");
    }
  }
  const std::vector<double> logp = kernels::log_softmax_rows(logits.value());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) loss -= logp[n * C + labels[n]];
  loss /= static_cast<double>(N);
  std::vector<std::uint32_t> ys(labels.begin(), labels.end());
  return logits.tape->record(
      "cross_entropy", BasicTensor<T>::scalar(static_cast<T>(loss)), {logits},
      [N, C, ys = std::move(ys)](const BackwardCtx<T>& ctx) {
        const std::vector<double> lp = kernels::log_softmax_rows(*ctx.inputs[0]);
        const double g = static_cast<double>(ctx.grad_out[0]) / static_cast<double>(N);
        T* GX = ctx.grad_inputs[0]->data().data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const double p = std::exp(lp[n * C + c]) - (c == ys[n] ? 1.0 : 0.0);
            GX[n * C + c] += static_cast<T>(p * g);
          }
        }
      });
}

template <typename T>
Var<T> soft_cross_entropy(Var<T> logits, const BasicTensor<T>& target) {
  const Shape s = logits.shape();
  require_rank("soft_cross_entropy", s, 2);
  const std::size_t N = s[0], C = s[1];
  const bool shared = target.shape() == Shape{C};
  if (!shared && target.shape() != s) fail("soft_cross_entropy", pair_str(s, target.shape()));
  const std::vector<double> logp = kernels::log_softmax_rows(logits.value());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      loss -= static_cast<double>(target[shared ? c : n * C + c]) * logp[n * C + c];
  loss /= static_cast<double>(N);
  return logits.tape->record(
      "soft_cross_entropy", BasicTensor<T>::scalar(static_cast<T>(loss)), {logits},
      [N, C, shared, target](const BackwardCtx<T>& ctx) {
        const std::vector<double> lp = kernels::log_softmax_rows(*ctx.inputs[0]);
        const double g = static_cast<double>(ctx.grad_out[0]) / static_cast<double>(N);
        T* GX = ctx.grad_inputs[0]->data().data();
        for (std::size_t n = 0; n < N; ++n) {
          double mass = 0.0;
          for (std::size_t c = 0; c < C; ++c) mass += static_cast<double>(target[shared ? c : n * C + c]);
          for (std::size_t c = 0; c < C; ++c) {
            const double t = static_cast<double>(target[shared ? c : n * C + c]);
            GX[n * C + c] += static_cast<T>((mass * std::exp(lp[n * C + c]) - t) * g);
          }
        }
      });
}

template <typename T>
Var<T> patchify(Var<T> x, std::size_t patch) {
  const Shape s = x.shape();
  require_rank("patchify", s, 4);
  if (patch == 0 || s[2] % patch != 0 || s[3] % patch != 0) {
    fail("patchify", "patch size " + std::to_string(patch) + " does not tile " + shape_str(s));
  }
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::size_t gw = W / patch, P = (H / patch) * gw, D = C * patch * patch;
  // index[k] = source offset of output element k; the map is a bijection.
  auto index = std::make_shared<std::vector<std::size_t>>(N * P * D);
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t r0 = (p / gw) * patch, c0 = (p % gw) * patch;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < patch; ++i)
          for (std::size_t j = 0; j < patch; ++j)
            (*index)[k++] = ((n * C + c) * H + r0 + i) * W + c0 + j;
    }
  BasicTensor<T> out({N * P, D});
  const auto X = x.value().data();
  for (std::size_t i = 0; i < index->size(); ++i) out[i] = X[(*index)[i]];
  return x.tape->record("patchify", std::move(out), {x}, [index](const BackwardCtx<T>& ctx) {
    auto gx = ctx.grad_inputs[0]->data();
    const auto g = ctx.grad_out.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*index)[i]] += g[i];
  });
}

template <typename T>
Var<T> group_sum(Var<T> x, std::size_t group) {
  const Shape s = x.shape();
  require_rank("group_sum", s, 2);
  if (group == 0 || s[0] % group != 0) {
    fail("group_sum", "group " + std::to_string(group) + " does not divide " + shape_str(s));
  }
  const std::size_t N = s[0] / group, h = s[1];
  BasicTensor<T> out({N, h}, T{0});
  const T* X = x.value().data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t g = 0; g < group; ++g)
      for (std::size_t j = 0; j < h; ++j) out[n * h + j] += X[(n * group + g) * h + j];
  return x.tape->record("group_sum", std::move(out), {x}, [N, group, h](const BackwardCtx<T>& ctx) {
    T* GX = ctx.grad_inputs[0]->data().data();
    const T* G = ctx.grad_out.data().data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t g = 0; g < group; ++g)
        for (std::size_t j = 0; j < h; ++j) GX[(n * group + g) * h + j] += G[n * h + j];
  });
}

#define DSPROBE_INSTANTIATE_OPS(T)                                                        \
  template Var<T> matmul(Var<T>, Var<T>);                                                 \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                          \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, Conv2dOptions);                          \
  template Var<T> relu(Var<T>);                                                           \
  template Var<T> max_pool2d(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> avg_pool2d(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> adaptive_avg_pool2d(Var<T>, std::size_t, std::size_t);                 \
  template Var<T> flatten(Var<T>);                                                        \
  template Var<T> reshape(Var<T>, Shape);                                                 \
  template Var<T> softmax(Var<T>);                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                    \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> sum_reduce(Var<T>);                                                     \
  template Var<T> cross_entropy(Var<T>, std::span<const std::uint32_t>);                  \
  template Var<T> soft_cross_entropy(Var<T>, const BasicTensor<T>&);                      \
  template Var<T> patchify(Var<T>, std::size_t);                                          \
  template Var<T> group_sum(Var<T>, std::size_t);                                         \
  template BasicTensor<T> kernels::adaptive_avg_pool2d(const BasicTensor<T>&, std::size_t, \
                                                       std::size_t);                      \
  template std::vector<double> kernels::log_softmax_rows(const BasicTensor<T>&);

DSPROBE_INSTANTIATE_OPS(float)
DSPROBE_INSTANTIATE_OPS(double)

#undef DSPROBE_INSTANTIATE_OPS

}  // namespace dsprobe
