#pragma once

// Differentiable tensor ops. Every op validates shapes, runs a deterministic
// sequential kernel, checks the output for non-finite values, and records a
// backward closure when a tape is active and an input requires grad.
//
// MAC accounting: only the matmul cores report to macs:: (conv runs through
// im2col + matmul), so instrumented counts line up with the analytic
// formulas used by the profiler. Elementwise work, batch norm and softmax
// are not MACs under this convention.

#include <algorithm>
#include <cmath>
#include <cstring>

#include "y12/tensor.hpp"

namespace y12 {

namespace detail {

template <typename T>
inline void ensure_finite(const std::vector<T>& v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
}

template <typename T>
inline bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// c[m,n] = a[m,k] * b[k,n]; row-major; optionally accumulating into c.
template <typename T>
inline void matmul_raw(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                       std::size_t n, bool accumulate = false) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  macs::add(static_cast<std::uint64_t>(m) * k * n);
}

// c[m,n] = a[m,k] * b[n,k]^T  (both operands row-contiguous dots).
template <typename T>
inline void matmul_nt_raw(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                          std::size_t n, bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
  macs::add(static_cast<std::uint64_t>(m) * k * n);
}

// c[m,n] = a[k,m]^T * b[k,n].
template <typename T>
inline void matmul_tn_raw(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                          std::size_t n, bool accumulate = false) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  macs::add(static_cast<std::uint64_t>(m) * k * n);
}

inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer,
                       std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor<T> y(a.shape(), std::move(out));
  detail::ensure_finite(y.values(), "add");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    tp->record(y, {ia, ib}, [ia, ib](Tape<T>& t, const std::vector<T>& g) {
      t.accumulate(ia, g.data(), g.size());
      t.accumulate(ib, g.data(), g.size());
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor<T> y(a.shape(), std::move(out));
  detail::ensure_finite(y.values(), "sub");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    tp->record(y, {ia, ib}, [ia, ib](Tape<T>& t, const std::vector<T>& g) {
      t.accumulate(ia, g.data(), g.size());
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor<T> y(a.shape(), std::move(out));
  detail::ensure_finite(y.values(), "mul");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    auto ad = a.storage(), bd = b.storage();
    tp->record(y, {ia, ib}, [ia, ib, ad, bd](Tape<T>& t, const std::vector<T>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("div: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  Tensor<T> y(a.shape(), std::move(out));
  detail::ensure_finite(y.values(), "div");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    auto ad = a.storage(), bd = b.storage();
    tp->record(y, {ia, ib}, [ia, ib, ad, bd](Tape<T>& t, const std::vector<T>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*bd)[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib);
        for (std::size_t i = 0; i < g.size(); ++i)
          gb[i] -= g[i] * (*ad)[i] / ((*bd)[i] * (*bd)[i]);
      }
    });
  }
  return y;
}

// Elementwise min; ties route the gradient to `a`.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("minimum: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(av[i], bv[i]);
  Tensor<T> y(a.shape(), std::move(out));
  detail::ensure_finite(y.values(), "minimum");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    auto ad = a.storage(), bd = b.storage();
    tp->record(y, {ia, ib}, [ia, ib, ad, bd](Tape<T>& t, const std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool take_a = (*ad)[i] <= (*bd)[i];
        const int target = take_a ? ia : ib;
        if (target >= 0) t.grad_buf(target)[i] += g[i];
      }
    });
  }
  return y;
}

// Elementwise max; ties route the gradient to `a`.
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("maximum: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(av[i], bv[i]);
  Tensor<T> y(a.shape(), std::move(out));
  detail::ensure_finite(y.values(), "maximum");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    auto ad = a.storage(), bd = b.storage();
    tp->record(y, {ia, ib}, [ia, ib, ad, bd](Tape<T>& t, const std::vector<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool take_a = (*ad)[i] >= (*bd)[i];
        const int target = take_a ? ia : ib;
        if (target >= 0) t.grad_buf(target)[i] += g[i];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Scalar and unary ops

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c;
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "add_scalar");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    tp->record(y, {ix}, [ix](Tape<T>& t, const std::vector<T>& g) {
      t.accumulate(ix, g.data(), g.size());
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "mul_scalar");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    tp->record(y, {ix}, [ix, c](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
    });
  }
  return y;
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xv[i], floor);
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "clamp_min");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    auto xd = x.storage();
    tp->record(y, {ix}, [ix, xd, floor](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*xd)[i] > floor) gx[i] += g[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return clamp_min(x, T(0));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(xv[i]);
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "sigmoid");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    auto yd = y.storage();
    tp->record(y, {ix}, [ix, yd](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = (*yd)[i];
        gx[i] += g[i] * s * (T(1) - s);
      }
    });
  }
  return y;
}

// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] * detail::sigmoid_scalar(xv[i]);
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "silu");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    auto xd = x.storage();
    tp->record(y, {ix}, [ix, xd](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = detail::sigmoid_scalar((*xd)[i]);
        gx[i] += g[i] * s * (T(1) + (*xd)[i] * (T(1) - s));
      }
    });
  }
  return y;
}

// Stable elementwise binary cross-entropy on logits; targets carry no grad.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: shape mismatch " + shape_str(logits.shape()) +
                     " vs " + shape_str(targets.shape()));
  std::vector<T> out(logits.numel());
  const auto& xv = logits.values();
  const auto& tv = targets.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = xv[i];
    out[i] = std::max(x, T(0)) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> y(logits.shape(), std::move(out));
  detail::ensure_finite(y.values(), "bce_with_logits");
  if (detail::recording<T>({&logits})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(logits);
    auto xd = logits.storage();
    auto td = targets.storage();
    tp->record(y, {ix}, [ix, xd, td](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * (detail::sigmoid_scalar((*xd)[i]) - (*td)[i]);
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions (fixed sequential order: bitwise reproducible)

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  Tensor<T> y = Tensor<T>::scalar(acc);
  detail::ensure_finite(y.values(), "sum");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    const std::size_t n = x.numel();
    tp->record(y, {ix}, [ix, n](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  T acc = T(0);
  for (T v : x.values()) acc += v;
  const T inv = T(1) / static_cast<T>(x.numel());
  Tensor<T> y = Tensor<T>::scalar(acc * inv);
  detail::ensure_finite(y.values(), "mean");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    const std::size_t n = x.numel();
    tp->record(y, {ix}, [ix, n, inv](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[0] * inv;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Structural ops

// Zero-copy view over the same storage (row-major contiguous).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " (" +
                     std::to_string(x.numel()) + " elements) as " + shape_str(shape));
  Tensor<T> y = Tensor<T>::sharing(std::move(shape), x.storage());
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    tp->record(y, {ix}, [ix](Tape<T>& t, const std::vector<T>& g) {
      t.accumulate(ix, g.data(), g.size());
    });
  }
  return y;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axes size must equal rank");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw ShapeError("permute: invalid axes");
    seen[axes[i]] = true;
    out_shape[i] = x.dim(axes[i]);
  }
  std::vector<std::size_t> in_strides(r, 1), out_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  for (std::size_t i = r; i-- > 1;) out_strides[i - 1] = out_strides[i] * out_shape[i];
  // Per output element: stride of the source axis it walks.
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) src_strides[i] = in_strides[axes[i]];

  const auto& xv = x.values();
  std::vector<T> out(x.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = xv[src];
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += src_strides[ax];
        break;
      }
      idx[ax] = 0;
      src -= src_strides[ax] * (out_shape[ax] - 1);
    }
  }
  Tensor<T> y(std::move(out_shape), std::move(out));
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    std::vector<std::size_t> inverse(r);
    for (std::size_t i = 0; i < r; ++i) inverse[axes[i]] = i;
    Shape yshape = y.shape();
    tp->record(y, {ix}, [ix, inverse, yshape](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      Tensor<T> gt(yshape, g);
      Tensor<T> gp = permute(gt, inverse);
      t.accumulate(ix, gp.data(), gp.numel());
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank must be >= 2");
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[x.rank() - 2], axes[x.rank() - 1]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const auto& x : xs) {
    if (x.rank() != s0.size())
      throw ShapeError("concat: rank mismatch between inputs");
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (d == axis) continue;
      if (x.dim(d) != s0[d])
        throw ShapeError("concat: inputs disagree on axis " + std::to_string(d) + " (" +
                         std::to_string(x.dim(d)) + " vs " + std::to_string(s0[d]) + ")");
    }
    axis_total += x.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;
  std::size_t outer, inner;
  detail::split_axis(out_shape, axis, outer, inner);

  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;  // running offset along the concat axis
  for (const auto& x : xs) {
    const std::size_t chunk = x.dim(axis) * inner;
    const T* src = x.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * axis_total * inner + offset * inner, src + o * chunk,
                  chunk * sizeof(T));
    offset += x.dim(axis);
  }
  Tensor<T> y(std::move(out_shape), std::move(out));

  bool rec = false;
  if (Tape<T>::active())
    for (const auto& x : xs)
      if (x.requires_grad()) rec = true;
  if (rec) {
    Tape<T>* tp = Tape<T>::active();
    std::vector<int> ids;
    std::vector<std::size_t> extents;
    for (const auto& x : xs) {
      ids.push_back(tp->ensure_node(x));
      extents.push_back(x.dim(axis));
    }
    tp->record(y, ids,
               [ids, extents, outer, inner, axis_total](Tape<T>& t, const std::vector<T>& g) {
                 std::size_t offset = 0;
                 for (std::size_t k = 0; k < ids.size(); ++k) {
                   const std::size_t chunk = extents[k] * inner;
                   if (ids[k] >= 0) {
                     auto& gx = t.grad_buf(ids[k]);
                     for (std::size_t o = 0; o < outer; ++o) {
                       const T* src = g.data() + o * axis_total * inner + offset * inner;
                       T* dst = gx.data() + o * chunk;
                       for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                     }
                   }
                   offset += extents[k];
                 }
               });
  }
  return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range");
  if (start + len > x.dim(axis) || len == 0)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") exceeds extent " +
                     std::to_string(x.dim(axis)) + " on axis " + std::to_string(axis));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t outer, inner;
  detail::split_axis(x.shape(), axis, outer, inner);
  const std::size_t full = x.dim(axis);

  std::vector<T> out(numel(out_shape));
  const T* src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, src + (o * full + start) * inner,
                len * inner * sizeof(T));
  Tensor<T> y(std::move(out_shape), std::move(out));
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    tp->record(y, {ix},
               [ix, outer, inner, full, start, len](Tape<T>& t, const std::vector<T>& g) {
                 if (ix < 0) return;
                 auto& gx = t.grad_buf(ix);
                 for (std::size_t o = 0; o < outer; ++o) {
                   const T* srcg = g.data() + o * len * inner;
                   T* dst = gx.data() + (o * full + start) * inner;
                   for (std::size_t i = 0; i < len * inner; ++i) dst[i] += srcg[i];
                 }
               });
  }
  return y;
}

// Each source pixel replicated into an f x f block.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("upsample_nearest: expected N,C,H,W");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = static_cast<std::size_t>(factor);
  Shape out_shape{n, c, h * f, w * f};
  std::vector<T> out(numel(out_shape));
  const T* src = x.data();
  const std::size_t ow = w * f;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* plane = src + nc * h * w;
    T* oplane = out.data() + nc * h * f * ow;
    for (std::size_t y0 = 0; y0 < h; ++y0)
      for (std::size_t fy = 0; fy < f; ++fy) {
        T* row = oplane + (y0 * f + fy) * ow;
        for (std::size_t x0 = 0; x0 < w; ++x0) {
          const T v = plane[y0 * w + x0];
          for (std::size_t fx = 0; fx < f; ++fx) row[x0 * f + fx] = v;
        }
      }
  }
  Tensor<T> y(std::move(out_shape), std::move(out));
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    tp->record(y, {ix}, [ix, n, c, h, w, f](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      const std::size_t ow = w * f;
      for (std::size_t nc = 0; nc < n * c; ++nc) {
        const T* gplane = g.data() + nc * h * f * ow;
        T* dplane = gx.data() + nc * h * w;
        for (std::size_t y0 = 0; y0 < h; ++y0)
          for (std::size_t fy = 0; fy < f; ++fy) {
            const T* row = gplane + (y0 * f + fy) * ow;
            for (std::size_t x0 = 0; x0 < w; ++x0) {
              T acc = T(0);
              for (std::size_t fx = 0; fx < f; ++fx) acc += row[x0 * f + fx];
              dplane[y0 * w + x0] += acc;
            }
          }
      }
    });
  }
  return y;
}

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  std::size_t outer, inner;
  detail::split_axis(x.shape(), axis, outer, inner);
  const std::size_t extent = x.dim(axis);
  std::vector<T> out(x.numel());
  const T* src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * extent * inner + i;
      T mx = src[base];
      for (std::size_t e = 1; e < extent; ++e)
        mx = std::max(mx, src[base + e * inner]);
      T denom = T(0);
      for (std::size_t e = 0; e < extent; ++e) {
        const T p = std::exp(src[base + e * inner] - mx);
        out[base + e * inner] = p;
        denom += p;
      }
      const T inv = T(1) / denom;
      for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] *= inv;
    }
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "softmax");
  if (detail::recording<T>({&x})) {
    Tape<T>* tp = Tape<T>::active();
    const int ix = tp->ensure_node(x);
    auto yd = y.storage();
    tp->record(y, {ix}, [ix, yd, outer, inner, extent](Tape<T>& t, const std::vector<T>& g) {
      if (ix < 0) return;
      auto& gx = t.grad_buf(ix);
      const auto& yv = *yd;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * extent * inner + i;
          T dot = T(0);
          for (std::size_t e = 0; e < extent; ++e)
            dot += g[base + e * inner] * yv[base + e * inner];
          for (std::size_t e = 0; e < extent; ++e) {
            const std::size_t k = base + e * inner;
            gx[k] += yv[k] * (g[k] - dot);
          }
        }
    });
  }
  return y;
}

// Batched matmul: [..,m,k] x [..,k,n] -> [..,m,n]; leading dims must match.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: rank must be >= 2");
  if (a.rank() != b.rank()) throw ShapeError("matmul: rank mismatch");
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (a.dim(i) != b.dim(i)) throw ShapeError("matmul: batch dims mismatch");
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::size_t kb = b.dim(r - 2), n = b.dim(r - 1);
  if (k != kb)
    throw ShapeError("matmul: inner dimensions " + std::to_string(k) + " vs " +
                     std::to_string(kb) + " do not agree");
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= a.dim(i);

  Shape out_shape = a.shape();
  out_shape[r - 1] = n;
  std::vector<T> out(batch * m * n);
  const T* ad = a.data();
  const T* bd = b.data();
  for (std::size_t bidx = 0; bidx < batch; ++bidx)
    detail::matmul_raw(ad + bidx * m * k, bd + bidx * k * n, out.data() + bidx * m * n, m,
                       k, n);
  Tensor<T> y(std::move(out_shape), std::move(out));
  detail::ensure_finite(y.values(), "matmul");
  if (detail::recording<T>({&a, &b})) {
    Tape<T>* tp = Tape<T>::active();
    const int ia = tp->ensure_node(a), ib = tp->ensure_node(b);
    auto ad2 = a.storage(), bd2 = b.storage();
    tp->record(y, {ia, ib},
               [ia, ib, ad2, bd2, batch, m, k, n](Tape<T>& t, const std::vector<T>& g) {
                 if (ia >= 0) {
                   auto& ga = t.grad_buf(ia);
                   for (std::size_t bi = 0; bi < batch; ++bi)
                     detail::matmul_nt_raw(g.data() + bi * m * n, bd2->data() + bi * k * n,
                                           ga.data() + bi * m * k, m, n, k, true);
                 }
                 if (ib >= 0) {
                   auto& gb = t.grad_buf(ib);
                   for (std::size_t bi = 0; bi < batch; ++bi)
                     detail::matmul_tn_raw(ad2->data() + bi * m * k, g.data() + bi * m * n,
                                           gb.data() + bi * k * n, k, m, n, true);
                 }
               });
  }
  return y;
}

namespace detail {

// im2col: [Cg*k*k, Ho*Wo] column matrix for one (batch, group) slab, zeros in
// the padding ring so the matmul's trip count matches the analytic formula.
template <typename T>
inline void im2col(const T* x, std::size_t cg, std::size_t h, std::size_t w, std::size_t k,
                   int stride, int padding, std::size_t ho, std::size_t wo, T* col) {
  const std::size_t plane = h * w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < cg; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        T* dst = col + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - padding + static_cast<long>(kx);
            dst[oy * wo + ox] =
                (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 && ix < static_cast<long>(w))
                    ? x[c * plane + static_cast<std::size_t>(iy) * w +
                        static_cast<std::size_t>(ix)]
                    : T(0);
          }
        }
      }
}

template <typename T>
inline void col2im_add(const T* col, std::size_t cg, std::size_t h, std::size_t w,
                       std::size_t k, int stride, int padding, std::size_t ho,
                       std::size_t wo, T* x) {
  const std::size_t plane = h * w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < cg; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        const T* src = col + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - padding + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            x[c * plane + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] +=
                src[oy * wo + ox];
          }
        }
      }
}

}  // namespace detail

// 2-D convolution over N,C,H,W with square kernels and grouping.
// Output H' = floor((H + 2p - k)/s) + 1 and likewise for W'.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding,
                 int groups = 1, const Tensor<T>* bias = nullptr) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be N,C,H,W, got " + shape_str(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be Cout,Cin/g,k,k, got " + shape_str(w.shape()));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  if (groups < 1) throw ConfigError("conv2d: groups must be >= 1");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t ng = static_cast<std::size_t>(groups);
  if (w.dim(2) != w.dim(3)) throw ConfigError("conv2d: kernel must be square");
  if (cin % ng != 0)
    throw ConfigError("conv2d: input channels " + std::to_string(cin) +
                      " not divisible by groups " + std::to_string(ng));
  if (cout % ng != 0)
    throw ConfigError("conv2d: output channels " + std::to_string(cout) +
                      " not divisible by groups " + std::to_string(ng));
  if (w.dim(1) != cin / ng)
    throw ShapeError("conv2d: weight in-channel dim " + std::to_string(w.dim(1)) +
                     " != Cin/groups = " + std::to_string(cin / ng));
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw ShapeError("conv2d: bias must have shape [Cout]");
  const long ho_l = (static_cast<long>(h) + 2 * padding - static_cast<long>(k)) / stride + 1;
  const long wo_l = (static_cast<long>(wd) + 2 * padding - static_cast<long>(k)) / stride + 1;
  if (ho_l < 1 || wo_l < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                     shape_str(x.shape()));
  const std::size_t ho = static_cast<std::size_t>(ho_l), wo = static_cast<std::size_t>(wo_l);
  const std::size_t cg = cin / ng, og = cout / ng, krows = cg * k * k;

  Shape out_shape{n, cout, ho, wo};
  std::vector<T> out(numel(out_shape));
  std::vector<T> col(krows * ho * wo);
  const T* xd = x.data();
  const T* wdp = w.data();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t gi = 0; gi < ng; ++gi) {
      detail::im2col(xd + (ni * cin + gi * cg) * h * wd, cg, h, wd, k, stride, padding, ho,
                     wo, col.data());
      detail::matmul_raw(wdp + gi * og * krows, col.data(),
                         out.data() + (ni * cout + gi * og) * ho * wo, og, krows, ho * wo);
    }
  if (bias) {
    const T* bd = bias->data();
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t c = 0; c < cout; ++c) {
        T* plane = out.data() + (ni * cout + c) * ho * wo;
        for (std::size_t i = 0; i < ho * wo; ++i) plane[i] += bd[c];
      }
  }
  Tensor<T> y(std::move(out_shape), std::move(out));
  detail::ensure_finite(y.values(), "conv2d");

  const bool rec = bias ? detail::recording<T>({&x, &w, bias})
                        : detail::recording<T>({&x, &w});
  if (rec) {
    Tape<T>* tp = Tape<T>::active();
    const int ixn = tp->ensure_node(x);
    const int iwn = tp->ensure_node(w);
    const int ibn = bias ? tp->ensure_node(*bias) : -1;
    auto xd2 = x.storage();
    auto wd2 = w.storage();
    const int s2 = stride, p2 = padding;
    tp->record(y, {ixn, iwn, ibn},
               [=](Tape<T>& t, const std::vector<T>& gout_all) {
                 std::vector<T> bcol(krows * ho * wo);
                 if (iwn >= 0 || ixn >= 0) {
                   for (std::size_t ni = 0; ni < n; ++ni)
                     for (std::size_t gi = 0; gi < ng; ++gi) {
                       const T* gout = gout_all.data() + (ni * cout + gi * og) * ho * wo;
                       if (iwn >= 0) {
                         detail::im2col(xd2->data() + (ni * cin + gi * cg) * h * wd, cg, h,
                                        wd, k, s2, p2, ho, wo, bcol.data());
                         auto& gw = t.grad_buf(iwn);
                         detail::matmul_nt_raw(gout, bcol.data(), gw.data() + gi * og * krows,
                                               og, ho * wo, krows, true);
                       }
                       if (ixn >= 0) {
                         // col-space gradient, then scatter back through the kernel window.
                         detail::matmul_tn_raw(wd2->data() + gi * og * krows, gout,
                                               bcol.data(), krows, og, ho * wo);
                         auto& gx = t.grad_buf(ixn);
                         detail::col2im_add(bcol.data(), cg, h, wd, k, s2, p2, ho, wo,
                                            gx.data() + (ni * cin + gi * cg) * h * wd);
                       }
                     }
                 }
                 if (ibn >= 0) {
                   auto& gb = t.grad_buf(ibn);
                   for (std::size_t ni = 0; ni < n; ++ni)
                     for (std::size_t c = 0; c < cout; ++c) {
                       const T* plane = gout_all.data() + (ni * cout + c) * ho * wo;
                       T acc = T(0);
                       for (std::size_t i = 0; i < ho * wo; ++i) acc += plane[i];
                       gb[c] += acc;
                     }
                 }
               });
  }
  return y;
}

// Functional batch norm over N,C,H,W. Training mode normalizes with biased
// batch statistics; inference mode uses the supplied running stats. Running
// stat bookkeeping lives in the layer wrapper, not here.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps,
                     bool training) {
  if (x.rank() != 4) throw ShapeError("batch_norm: input must be N,C,H,W");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (eps <= T(0)) throw ConfigError("batch_norm: eps must be > 0");
  for (const auto* p : {&gamma, &beta, &running_mean, &running_var})
    if (p->rank() != 1 || p->dim(0) != c)
      throw ShapeError("batch_norm: per-channel parameter length " +
                       std::to_string(p->numel()) + " != C = " + std::to_string(c));
  if (!training)
    for (T v : running_var.values())
      if (v < T(0)) throw DataError("batch_norm: negative running variance");

  const std::size_t m = n * plane;  // elements per channel
  std::vector<T> mean_c(c), invstd_c(c);
  const T* xd = x.data();
  if (training) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      T acc = T(0);
      for (std::size_t ni = 0; ni < n; ++ni) {
        const T* p = xd + (ni * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const T mu = acc / static_cast<T>(m);
      T var = T(0);
      for (std::size_t ni = 0; ni < n; ++ni) {
        const T* p = xd + (ni * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mean_c[ci] = mu;
      invstd_c[ci] = T(1) / std::sqrt(var + eps);
    }
  } else {
    for (std::size_t ci = 0; ci < c; ++ci) {
      mean_c[ci] = running_mean[ci];
      invstd_c[ci] = T(1) / std::sqrt(running_var[ci] + eps);
    }
  }

  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  const T* gd = gamma.data();
  const T* bd = beta.data();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* p = xd + (ni * c + ci) * plane;
      T* q = out.data() + (ni * c + ci) * plane;
      T* xh = xhat->data() + (ni * c + ci) * plane;
      const T mu = mean_c[ci], is = invstd_c[ci], ga = gd[ci], be = bd[ci];
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mu) * is;
        q[i] = xh[i] * ga + be;
      }
    }
  Tensor<T> y(x.shape(), std::move(out));
  detail::ensure_finite(y.values(), "batch_norm");

  if (detail::recording<T>({&x, &gamma, &beta})) {
    Tape<T>* tp = Tape<T>::active();
    const int ixn = tp->ensure_node(x);
    const int ign = tp->ensure_node(gamma);
    const int ibn = tp->ensure_node(beta);
    auto gamma_d = gamma.storage();
    auto invstd = std::make_shared<std::vector<T>>(std::move(invstd_c));
    tp->record(
        y, {ixn, ign, ibn},
        [=](Tape<T>& t, const std::vector<T>& g) {
          // Per-channel sums of g and g*xhat feed both weight grads and the
          // training-mode input grad.
          std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t ci = 0; ci < c; ++ci) {
              const T* gp = g.data() + (ni * c + ci) * plane;
              const T* xh = xhat->data() + (ni * c + ci) * plane;
              T a = T(0), b = T(0);
              for (std::size_t i = 0; i < plane; ++i) {
                a += gp[i];
                b += gp[i] * xh[i];
              }
              sum_g[ci] += a;
              sum_gx[ci] += b;
            }
          if (ign >= 0) {
            auto& gg = t.grad_buf(ign);
            for (std::size_t ci = 0; ci < c; ++ci) gg[ci] += sum_gx[ci];
          }
          if (ibn >= 0) {
            auto& gb = t.grad_buf(ibn);
            for (std::size_t ci = 0; ci < c; ++ci) gb[ci] += sum_g[ci];
          }
          if (ixn >= 0) {
            auto& gx = t.grad_buf(ixn);
            const T inv_m = T(1) / static_cast<T>(m);
            for (std::size_t ni = 0; ni < n; ++ni)
              for (std::size_t ci = 0; ci < c; ++ci) {
                const T* gp = g.data() + (ni * c + ci) * plane;
                const T* xh = xhat->data() + (ni * c + ci) * plane;
                T* dst = gx.data() + (ni * c + ci) * plane;
                const T scale = (*gamma_d)[ci] * (*invstd)[ci];
                if (training) {
                  for (std::size_t i = 0; i < plane; ++i)
                    dst[i] += scale * (gp[i] - inv_m * sum_g[ci] - xh[i] * inv_m * sum_gx[ci]);
                } else {
                  for (std::size_t i = 0; i < plane; ++i) dst[i] += scale * gp[i];
                }
              }
          }
        });
  }
  return y;
}

}  // namespace y12

