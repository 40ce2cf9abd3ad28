#pragma once

// Test-only reference implementations, kept deliberately independent of the
// library's kernels: direct nested-loop convolution, elementwise batch norm,
// per-head loop attention, and exhaustive NMS validation.

#include <cmath>
#include <vector>

#include "y12/postprocess.hpp"
#include "y12/tensor.hpp"

namespace oracle {

// Direct 6-nested-loop convolution (plus batch and group loops).
template <typename T>
y12::Tensor<T> conv2d_loops(const y12::Tensor<T>& x, const y12::Tensor<T>& w, int stride,
                            int padding, int groups,
                            const y12::Tensor<T>* bias = nullptr) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t g = static_cast<std::size_t>(groups);
  const std::size_t cg = cin / g, og = cout / g;
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;
  y12::Tensor<T> y({n, cout, ho, wo});
  auto& out = y.values_mut();
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t co = 0; co < cout; ++co) {
      const std::size_t gi = co / og;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc = bias ? (*bias)[co] : T(0);
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
                const long ix = static_cast<long>(ox) * stride - padding + static_cast<long>(kx);
                if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(wd))
                  continue;
                const std::size_t xi =
                    ((ni * cin + gi * cg + ci) * h + static_cast<std::size_t>(iy)) * wd +
                    static_cast<std::size_t>(ix);
                const std::size_t wi = ((co * cg + ci) * k + ky) * k + kx;
                acc += xv[xi] * wv[wi];
              }
          out[((ni * cout + co) * ho + oy) * wo + ox] = acc;
        }
    }
  return y;
}

// Elementwise inference-mode batch norm.
template <typename T>
y12::Tensor<T> batch_norm_eval(const y12::Tensor<T>& x, const y12::Tensor<T>& gamma,
                               const y12::Tensor<T>& beta, const y12::Tensor<T>& mean,
                               const y12::Tensor<T>& var, T eps) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  y12::Tensor<T> y(x.shape());
  auto& out = y.values_mut();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t at = (ni * c + ci) * plane + i;
        out[at] = (x[at] - mean[ci]) / std::sqrt(var[ci] + eps) * gamma[ci] + beta[ci];
      }
  return y;
}

// Reference softmax attention per head on tokens [h][n][d], two explicit
// passes, normalized weights.
template <typename T>
std::vector<T> attention_loops(const std::vector<T>& q, const std::vector<T>& k,
                               const std::vector<T>& v, std::size_t n, std::size_t h,
                               std::size_t d) {
  std::vector<T> out(h * n * d, T(0));
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t base = head * n * d;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<T> row(n);
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (std::size_t t = 0; t < d; ++t) acc += q[base + i * d + t] * k[base + j * d + t];
        row[j] = acc * scale;
        mx = std::max(mx, row[j]);
      }
      T denom = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        denom += row[j];
      }
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t t = 0; t < d; ++t)
          out[base + i * d + t] += (row[j] / denom) * v[base + j * d + t];
    }
  }
  return out;
}

// Validates a greedy NMS result against the definition: the kept list must
// be exactly what rank-order suppression produces, checked box by box.
inline bool nms_matches_definition(const std::vector<y12::Detection>& input,
                                   const std::vector<y12::Detection>& kept,
                                   double iou_threshold) {
  // Reference: independent re-derivation with explicit rank ordering.
  std::vector<std::size_t> order(input.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (input[a].score != input[b].score) return input[a].score > input[b].score;
    return input[a].class_id < input[b].class_id;
  });
  std::vector<y12::Detection> expect;
  for (std::size_t idx : order) {
    bool dead = false;
    for (const auto& keptbox : expect)
      if (keptbox.class_id == input[idx].class_id &&
          y12::box_iou(keptbox, input[idx]) > iou_threshold)
        dead = true;
    if (!dead) expect.push_back(input[idx]);
  }
  if (expect.size() != kept.size()) return false;
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& a = expect[i];
    const auto& b = kept[i];
    if (a.class_id != b.class_id || a.score != b.score || a.x1 != b.x1 || a.y1 != b.y1 ||
        a.x2 != b.x2 || a.y2 != b.y2)
      return false;
  }
  return true;
}

}  // namespace oracle
