#pragma once

// Self-attention family: the analytic cost model, raw single-purpose kernels
// (traditional, area-partitioned, tiled online-softmax), and the
// tape-differentiable attention blocks used inside the network.
//
// Token layout for kernels: q, k, v, out are [heads][tokens][dim] contiguous.
// Area partitioning splits the token axis into `segments` equal contiguous
// runs, which matches a row-major (H,W) flatten split along H.

#include <limits>
#include <thread>

#include "y12/layers.hpp"

namespace y12 {

// MACs of the attention core (scores + weighted sum) over L independent
// segments: 2*n^2*h*d/L. L=1 is the traditional cost, L=4 halves 2*n^2*h*d
// twice over.
inline std::uint64_t attention_cost(std::size_t n, std::size_t h, std::size_t d,
                                    std::size_t segments) {
  if (segments < 1) throw ConfigError("attention_cost: segments must be >= 1");
  if (n % segments != 0)
    throw ConfigError("attention_cost: n=" + std::to_string(n) +
                      " not divisible by segments=" + std::to_string(segments));
  return 2ULL * n * n * h * d / segments;
}

enum class PartitionAxis { horizontal, vertical };

inline const char* axis_name(PartitionAxis a) {
  return a == PartitionAxis::horizontal ? "horizontal" : "vertical";
}

struct AttentionConfig {
  std::size_t channels = 0;
  std::size_t heads = 1;
  double mlp_ratio = 1.2;
  std::size_t area_segments = 4;
  PartitionAxis partition_axis = PartitionAxis::horizontal;
  bool position_perceiver = true;

  std::size_t head_dim() const { return channels / heads; }

  // round-half-up keeps the hidden width deterministic across platforms.
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(std::floor(static_cast<double>(channels) * mlp_ratio + 0.5));
  }

  void validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0)
      throw ConfigError("attention: channels " + std::to_string(channels) +
                        " must be a positive multiple of heads " + std::to_string(heads));
    if (area_segments < 1) throw ConfigError("attention: segments must be >= 1");
    if (mlp_hidden() < 1) throw ConfigError("attention: mlp hidden width must be >= 1");
  }
};

// Equal, non-overlapping slabs tiling the feature map along one axis.
struct AreaPartition {
  std::size_t segments;
  PartitionAxis axis;
  std::size_t seg_h, seg_w;
  std::size_t tokens_per_segment;

  static AreaPartition make(std::size_t h, std::size_t w, std::size_t segments,
                            PartitionAxis axis) {
    if (segments < 1) throw ConfigError("area partition: segments must be >= 1");
    const std::size_t extent = axis == PartitionAxis::horizontal ? h : w;
    if (extent % segments != 0)
      throw ShapeError("area partition: " + std::string(axis_name(axis)) + " extent " +
                       std::to_string(extent) + " not divisible by " +
                       std::to_string(segments) + " segments (map " + std::to_string(h) +
                       "x" + std::to_string(w) + ")");
    AreaPartition p;
    p.segments = segments;
    p.axis = axis;
    p.seg_h = axis == PartitionAxis::horizontal ? h / segments : h;
    p.seg_w = axis == PartitionAxis::horizontal ? w : w / segments;
    p.tokens_per_segment = p.seg_h * p.seg_w;
    return p;
  }
};

// Largest segment count <= requested that divides the partition axis; the
// graph builder uses this so one set of weights runs at any legal input size.
inline std::size_t adapt_segments(std::size_t extent, std::size_t requested) {
  for (std::size_t l = std::min(requested, extent); l > 1; --l)
    if (extent % l == 0) return l;
  return 1;
}

// ---------------------------------------------------------------------------
// Raw kernels

namespace kernels {

namespace detail {

template <typename Fn>
inline void parallel_rows(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t r0 = w * chunk;
    const std::size_t r1 = std::min(n, r0 + chunk);
    if (r0 >= r1) break;
    pool.emplace_back([r0, r1, &fn] { fn(r0, r1); });
  }
  for (auto& t : pool) t.join();
}

// Traditional single-head attention on one contiguous token block:
// materializes the full score matrix, then normalizes, then reduces.
// Returns the executed MAC trip count.
template <typename T>
std::uint64_t block_attention(const T* q, const T* k, const T* v, T* out, std::size_t n,
                              std::size_t d, std::size_t threads) {
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  auxmem::TrackedBuffer<T> scores(n * n);
  auxmem::TrackedBuffer<T> norm(n);
  T* sp = scores.data();
  parallel_rows(n, threads, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const T* qi = q + i * d;
      T* row = sp + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* kj = k + j * d;
        T acc = T(0);
        for (std::size_t t = 0; t < d; ++t) acc += qi[t] * kj[t];
        row[j] = acc * scale;
      }
    }
  });
  parallel_rows(n, threads, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* row = sp + i * n;
      T mx = row[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      T l = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        l += row[j];
      }
      norm[i] = l;
    }
  });
  parallel_rows(n, threads, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const T* row = sp + i * n;
      T* oi = out + i * d;
      std::fill(oi, oi + d, T(0));
      for (std::size_t j = 0; j < n; ++j) {
        const T p = row[j];
        const T* vj = v + j * d;
        for (std::size_t t = 0; t < d; ++t) oi[t] += p * vj[t];
      }
      for (std::size_t t = 0; t < d; ++t) oi[t] /= norm[i];
    }
  });
  return 2ULL * n * n * d;
}

}  // namespace detail

// Full self-attention per head over all n tokens.
template <typename T>
void naive_attention(const T* q, const T* k, const T* v, T* out, std::size_t n,
                     std::size_t h, std::size_t d, std::size_t threads = 1) {
  std::uint64_t trips = 0;
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t base = head * n * d;
    trips += detail::block_attention(q + base, k + base, v + base, out + base, n, d, threads);
  }
  macs::add(trips);
}

// Area attention: tokens split into `segments` equal contiguous runs, each
// attended independently. segments=1 degenerates to naive_attention.
template <typename T>
void area_attention(const T* q, const T* k, const T* v, T* out, std::size_t n,
                    std::size_t h, std::size_t d, std::size_t segments,
                    std::size_t threads = 1) {
  if (segments < 1) throw ConfigError("area_attention: segments must be >= 1");
  if (n % segments != 0)
    throw ConfigError("area_attention: n=" + std::to_string(n) +
                      " not divisible by segments=" + std::to_string(segments));
  const std::size_t ns = n / segments;
  std::uint64_t trips = 0;
  for (std::size_t head = 0; head < h; ++head)
    for (std::size_t s = 0; s < segments; ++s) {
      const std::size_t base = (head * n + s * ns) * d;
      trips += detail::block_attention(q + base, k + base, v + base, out + base, ns, d, threads);
    }
  macs::add(trips);
}

// Exact attention by streaming key/value blocks with a running max and
// normalizer; the score matrix is never materialized and the only scratch is
// one block of scores per query row. Single head, q/k/v row-major [n,d].
template <typename T>
void tiled_attention(const T* q, const T* k, const T* v, T* out, std::size_t n,
                     std::size_t d, std::size_t block, std::size_t threads = 1) {
  if (block < 1) throw ConfigError("tiled_attention: block must be >= 1");
  const std::size_t b = std::min(block, n);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const T neg_inf = -std::numeric_limits<T>::infinity();
  std::uint64_t trips = 2ULL * n * n * d;
  detail::parallel_rows(n, threads, [&](std::size_t r0, std::size_t r1) {
    auxmem::TrackedBuffer<T> s(b);
    for (std::size_t i = r0; i < r1; ++i) {
      const T* qi = q + i * d;
      T* oi = out + i * d;
      std::fill(oi, oi + d, T(0));
      T m = neg_inf;
      T l = T(0);
      for (std::size_t j0 = 0; j0 < n; j0 += b) {
        const std::size_t je = std::min(j0 + b, n);
        T block_max = neg_inf;
        for (std::size_t j = j0; j < je; ++j) {
          const T* kj = k + j * d;
          T acc = T(0);
          for (std::size_t t = 0; t < d; ++t) acc += qi[t] * kj[t];
          s[j - j0] = acc * scale;
          block_max = std::max(block_max, s[j - j0]);
        }
        const T m_new = std::max(m, block_max);
        const T corr = std::exp(m - m_new);  // 0 on the first block
        l *= corr;
        for (std::size_t t = 0; t < d; ++t) oi[t] *= corr;
        for (std::size_t j = j0; j < je; ++j) {
          const T p = std::exp(s[j - j0] - m_new);
          l += p;
          const T* vj = v + j * d;
          for (std::size_t t = 0; t < d; ++t) oi[t] += p * vj[t];
        }
        m = m_new;
      }
      for (std::size_t t = 0; t < d; ++t) oi[t] /= l;
    }
  });
  macs::add(trips);
}

template <typename T>
void tiled_attention_heads(const T* q, const T* k, const T* v, T* out, std::size_t n,
                           std::size_t h, std::size_t d, std::size_t block,
                           std::size_t threads = 1) {
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t base = head * n * d;
    tiled_attention(q + base, k + base, v + base, out + base, n, d, block, threads);
  }
}

}  // namespace kernels

// Differentiable wrapper around the tiled kernel; backward uses the
// closed-form attention gradients (the streaming structure is a
// forward-path property, so the backward may materialize scores).
template <typename T>
Tensor<T> tiled_attention_op(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             std::size_t block) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("tiled_attention: q,k,v must share an [n,d] shape");
  const std::size_t n = q.dim(0), d = q.dim(1);
  std::vector<T> out_vals(n * d);
  kernels::tiled_attention(q.data(), k.data(), v.data(), out_vals.data(), n, d, block);
  Tensor<T> out(q.shape(), std::move(out_vals));
  detail::ensure_finite(out.values(), "tiled_attention");
  if (detail::recording<T>({&q, &k, &v})) {
    Tape<T>* tp = Tape<T>::active();
    const int iq = tp->ensure_node(q), ik = tp->ensure_node(k), iv = tp->ensure_node(v);
    auto qd = q.storage(), kd = k.storage(), vd = v.storage();
    tp->record(out, {iq, ik, iv}, [=](Tape<T>& t, const std::vector<T>& g) {
      const T scale = T(1) / std::sqrt(static_cast<T>(d));
      // Rebuild the attention matrix.
      std::vector<T> a(n * n);
      detail::matmul_nt_raw(qd->data(), kd->data(), a.data(), n, d, n);
      for (std::size_t i = 0; i < n; ++i) {
        T* row = a.data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          row[j] *= scale;
          mx = std::max(mx, row[j]);
        }
        T l = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - mx);
          l += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= l;
      }
      if (iv >= 0) {
        std::vector<T> dv(n * d);
        detail::matmul_tn_raw(a.data(), g.data(), dv.data(), n, n, d);
        t.accumulate(iv, dv.data(), dv.size());
      }
      if (iq >= 0 || ik >= 0) {
        std::vector<T> da(n * n);
        detail::matmul_nt_raw(g.data(), vd->data(), da.data(), n, d, n);
        // dS = A o (dA - rowsum(dA o A))
        for (std::size_t i = 0; i < n; ++i) {
          const T* arow = a.data() + i * n;
          T* drow = da.data() + i * n;
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) dot += drow[j] * arow[j];
          for (std::size_t j = 0; j < n; ++j) drow[j] = arow[j] * (drow[j] - dot);
        }
        if (iq >= 0) {
          std::vector<T> dq(n * d);
          detail::matmul_raw(da.data(), kd->data(), dq.data(), n, n, d);
          for (auto& x : dq) x *= scale;
          t.accumulate(iq, dq.data(), dq.size());
        }
        if (ik >= 0) {
          std::vector<T> dk(n * d);
          detail::matmul_tn_raw(da.data(), qd->data(), dk.data(), n, n, d);
          for (auto& x : dk) x *= scale;
          t.accumulate(ik, dk.data(), dk.size());
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable attention blocks

// Two pointwise conv+BN layers with SiLU between, hidden = round(C * ratio);
// the residual is added by the caller.
template <typename T>
class AttentionMlp {
 public:
  AttentionMlp() = default;
  AttentionMlp(const AttentionConfig& cfg, SplitMix64& rng)
      : hidden_(cfg.mlp_hidden()),
        fc1_(cfg.channels, hidden_, 1, 1, 1, rng),
        fc2_(hidden_, cfg.channels, 1, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x) { return fc2_.forward(silu(fc1_.forward(x))); }

  std::size_t hidden() const { return hidden_; }
  std::uint64_t macs(std::size_t h, std::size_t w) const {
    return fc1_.macs(h, w) + fc2_.macs(h, w);
  }
  void collect(ParamList<T>& out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }
  void set_training(bool t) {
    fc1_.set_training(t);
    fc2_.set_training(t);
  }

 private:
  std::size_t hidden_ = 0;
  ConvBN<T> fc1_, fc2_;
};

// Area attention block: 1x1 conv+BN projections for Q,K,V, per-segment
// softmax attention, optional 7x7 depthwise-separable position perceiver on V
// added before the 1x1 conv+BN output projection. No positional encoding.
template <typename T>
class AreaAttention {
 public:
  AreaAttention() = default;
  AreaAttention(const AttentionConfig& cfg, SplitMix64& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t c = cfg_.channels;
    q_proj_ = ConvBN<T>(c, c, 1, 1, 1, rng);
    k_proj_ = ConvBN<T>(c, c, 1, 1, 1, rng);
    v_proj_ = ConvBN<T>(c, c, 1, 1, 1, rng);
    out_proj_ = ConvBN<T>(c, c, 1, 1, 1, rng);
    perceiver_ = DepthwiseSeparableConv<T>(c, 7, rng);
  }

  const AttentionConfig& config() const { return cfg_; }

  // Spatial form: x is [N,C,H,W], partitioned into cfg.area_segments slabs.
  Tensor<T> forward(const Tensor<T>& x) {
    return attend(x, cfg_.area_segments, cfg_.position_perceiver);
  }

  // Degenerate full attention over a flat token list [N,n,C]; single segment,
  // no perceiver (there is no spatial layout to perceive).
  Tensor<T> forward_tokens(const Tensor<T>& tokens) {
    if (tokens.rank() != 3 || tokens.dim(2) != cfg_.channels)
      throw ShapeError("full_attention: expected [N,n,C] with C=" +
                       std::to_string(cfg_.channels) + ", got " + shape_str(tokens.shape()));
    const std::size_t n = tokens.dim(0), tok = tokens.dim(1);
    Tensor<T> map = reshape(permute(tokens, {0, 2, 1}), {n, cfg_.channels, tok, 1});
    Tensor<T> y = attend(map, 1, false);
    return permute(reshape(y, {n, cfg_.channels, tok}), {0, 2, 1});
  }

  // Core; `segments` must divide the partition axis.
  Tensor<T> attend(const Tensor<T>& x, std::size_t segments, bool use_perceiver) {
    if (x.rank() != 4 || x.dim(1) != cfg_.channels)
      throw ShapeError("area_attention: expected [N,C,H,W] with C=" +
                       std::to_string(cfg_.channels) + ", got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto part = AreaPartition::make(h, w, segments, cfg_.partition_axis);
    const std::size_t d = cfg_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    Tensor<T> q = q_proj_.forward(x);
    Tensor<T> k = k_proj_.forward(x);
    Tensor<T> v = v_proj_.forward(x);

    const std::size_t seg_axis = cfg_.partition_axis == PartitionAxis::horizontal ? 2 : 3;
    const std::size_t seg_extent =
        cfg_.partition_axis == PartitionAxis::horizontal ? part.seg_h : part.seg_w;

    std::vector<Tensor<T>> seg_outs;
    seg_outs.reserve(segments);
    for (std::size_t s = 0; s < segments; ++s) {
      Tensor<T> qs = q, ks = k, vs = v;
      if (segments > 1) {
        qs = slice(q, seg_axis, s * seg_extent, seg_extent);
        ks = slice(k, seg_axis, s * seg_extent, seg_extent);
        vs = slice(v, seg_axis, s * seg_extent, seg_extent);
      }
      const std::size_t ns = part.tokens_per_segment;
      qs = reshape(qs, {n, c, ns});
      ks = reshape(ks, {n, c, ns});
      vs = reshape(vs, {n, c, ns});
      std::vector<Tensor<T>> head_outs;
      head_outs.reserve(cfg_.heads);
      for (std::size_t head = 0; head < cfg_.heads; ++head) {
        Tensor<T> qh = slice(qs, 1, head * d, d);  // [N,d,ns]
        Tensor<T> kh = slice(ks, 1, head * d, d);
        Tensor<T> vh = slice(vs, 1, head * d, d);
        Tensor<T> scores = mul_scalar(matmul(permute(qh, {0, 2, 1}), kh), scale);
        Tensor<T> weights = softmax(scores, 2);
        Tensor<T> ctx = matmul(weights, permute(vh, {0, 2, 1}));  // [N,ns,d]
        head_outs.push_back(permute(ctx, {0, 2, 1}));
      }
      Tensor<T> seg = head_outs.size() == 1 ? head_outs[0] : concat(head_outs, 1);
      seg_outs.push_back(reshape(seg, {n, c, part.seg_h, part.seg_w}));
    }
    Tensor<T> attn = seg_outs.size() == 1 ? seg_outs[0] : concat(seg_outs, seg_axis);
    if (use_perceiver) attn = add(attn, perceiver_.forward(v));
    return out_proj_.forward(attn);
  }

  DepthwiseSeparableConv<T>& perceiver() { return perceiver_; }
  ConvBN<T>& q_proj() { return q_proj_; }
  ConvBN<T>& k_proj() { return k_proj_; }
  ConvBN<T>& v_proj() { return v_proj_; }
  ConvBN<T>& out_proj() { return out_proj_; }

  std::uint64_t macs(std::size_t h, std::size_t w, std::size_t segments,
                     bool use_perceiver) const {
    const std::size_t c = cfg_.channels;
    const std::size_t n = h * w;
    std::uint64_t total = 4ULL * c * c * n;  // q,k,v,out projections
    total += attention_cost(n, cfg_.heads, cfg_.head_dim(), segments);
    if (use_perceiver) total += perceiver_.macs(h, w);
    return total;
  }
  std::uint64_t macs(std::size_t h, std::size_t w) const {
    return macs(h, w, cfg_.area_segments, cfg_.position_perceiver);
  }

  void collect(ParamList<T>& out) {
    q_proj_.collect(out);
    k_proj_.collect(out);
    v_proj_.collect(out);
    out_proj_.collect(out);
    perceiver_.collect(out);
  }
  void set_training(bool t) {
    q_proj_.set_training(t);
    k_proj_.set_training(t);
    v_proj_.set_training(t);
    out_proj_.set_training(t);
  }

 private:
  AttentionConfig cfg_;
  ConvBN<T> q_proj_, k_proj_, v_proj_, out_proj_;
  DepthwiseSeparableConv<T> perceiver_;
};

// The 7x7 depthwise-separable position perceiver as a standalone op on a
// value tensor; support radius is Chebyshev distance 3.
template <typename T>
Tensor<T> position_perceiver(DepthwiseSeparableConv<T>& conv, const Tensor<T>& v) {
  return conv.forward(v);
}

}  // namespace y12
