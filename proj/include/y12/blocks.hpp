#pragma once

// Composite building blocks of the detector graph, plus the plain ELAN and
// CSP reference blocks kept around for structural and gradient-flow
// comparisons against the residual aggregation design.

#include "y12/attention.hpp"

namespace y12 {

// Two 3x3 conv-bn-silu with hidden = c_out/2 and an identity shortcut when
// enabled and the channel counts agree.
template <typename T>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(std::size_t c_in, std::size_t c_out, bool shortcut, SplitMix64& rng,
             double expansion = 0.5)
      : c_in_(c_in), c_out_(c_out), shortcut_(shortcut && c_in == c_out) {
    const std::size_t hidden =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(c_out * expansion + 0.5)));
    cv1_ = ConvBNSiLU<T>(c_in, hidden, 3, 1, rng);
    cv2_ = ConvBNSiLU<T>(hidden, c_out, 3, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = cv2_.forward(cv1_.forward(x));
    return shortcut_ ? add(x, y) : y;
  }

  std::size_t out_channels() const { return c_out_; }
  std::uint64_t macs(std::size_t h, std::size_t w) const {
    return cv1_.macs(h, w) + cv2_.macs(h, w);
  }
  void collect(ParamList<T>& out) {
    cv1_.collect(out);
    cv2_.collect(out);
  }
  void set_training(bool t) {
    cv1_.set_training(t);
    cv2_.set_training(t);
  }

 private:
  std::size_t c_in_ = 0, c_out_ = 0;
  bool shortcut_ = false;
  ConvBNSiLU<T> cv1_, cv2_;
};

// C3-style unit with two parallel 1x1 transitions, a bottleneck chain on one
// branch, and a 1x1 fusion.
template <typename T>
class C3k {
 public:
  C3k() = default;
  C3k(std::size_t c_in, std::size_t c_out, SplitMix64& rng, std::size_t n_bottlenecks = 2)
      : c_out_(c_out) {
    const std::size_t hidden = std::max<std::size_t>(1, c_out / 2);
    cv1_ = ConvBNSiLU<T>(c_in, hidden, 1, 1, rng);
    cv2_ = ConvBNSiLU<T>(c_in, hidden, 1, 1, rng);
    for (std::size_t i = 0; i < n_bottlenecks; ++i)
      chain_.emplace_back(hidden, hidden, true, rng);
    cv3_ = ConvBNSiLU<T>(2 * hidden, c_out, 1, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> a = cv1_.forward(x);
    for (auto& b : chain_) a = b.forward(a);
    Tensor<T> bpath = cv2_.forward(x);
    return cv3_.forward(concat<T>({a, bpath}, 1));
  }

  std::size_t out_channels() const { return c_out_; }
  std::uint64_t macs(std::size_t h, std::size_t w) const {
    std::uint64_t total = cv1_.macs(h, w) + cv2_.macs(h, w) + cv3_.macs(h, w);
    for (const auto& b : chain_) total += b.macs(h, w);
    return total;
  }
  void collect(ParamList<T>& out) {
    cv1_.collect(out);
    cv2_.collect(out);
    for (auto& b : chain_) b.collect(out);
    cv3_.collect(out);
  }
  void set_training(bool t) {
    cv1_.set_training(t);
    cv2_.set_training(t);
    for (auto& b : chain_) b.set_training(t);
    cv3_.set_training(t);
  }

 private:
  std::size_t c_out_ = 0;
  ConvBNSiLU<T> cv1_, cv2_, cv3_;
  std::vector<Bottleneck<T>> chain_;
};

// CSP-style aggregation: 1x1 transition to two hidden streams, a chain of two
// bottleneck (or C3k) units on one stream, every intermediate concatenated
// with the untouched stream, 1x1 fusion back to c_out.
template <typename T>
class C3k2 {
 public:
  C3k2() = default;
  C3k2(std::size_t c_in, std::size_t c_out, bool use_c3k, double expansion, SplitMix64& rng,
       std::size_t n_units = 2)
      : c_out_(c_out), use_c3k_(use_c3k) {
    if (expansion <= 0.0 || expansion > 1.0)
      throw ConfigError("c3k2: expansion must be in (0,1], got " + std::to_string(expansion));
    hidden_ = static_cast<std::size_t>(std::floor(c_out * expansion + 0.5));
    if (hidden_ == 0)
      throw ConfigError("c3k2: hidden channels rounded to zero (c_out=" +
                        std::to_string(c_out) + ", expansion=" + std::to_string(expansion) + ")");
    cv1_ = ConvBNSiLU<T>(c_in, 2 * hidden_, 1, 1, rng);
    for (std::size_t i = 0; i < n_units; ++i) {
      if (use_c3k_)
        c3ks_.emplace_back(hidden_, hidden_, rng);
      else
        bottlenecks_.emplace_back(hidden_, hidden_, true, rng);
    }
    const std::size_t n_streams = 2 + n_units;
    cv2_ = ConvBNSiLU<T>(n_streams * hidden_, c_out, 1, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> t = cv1_.forward(x);
    std::vector<Tensor<T>> streams;
    streams.push_back(slice(t, 1, 0, hidden_));
    streams.push_back(slice(t, 1, hidden_, hidden_));
    Tensor<T> cur = streams.back();
    const std::size_t units = use_c3k_ ? c3ks_.size() : bottlenecks_.size();
    for (std::size_t i = 0; i < units; ++i) {
      cur = use_c3k_ ? c3ks_[i].forward(cur) : bottlenecks_[i].forward(cur);
      streams.push_back(cur);
    }
    return cv2_.forward(concat(streams, 1));
  }

  std::size_t out_channels() const { return c_out_; }
  std::size_t hidden_channels() const { return hidden_; }

  std::uint64_t macs(std::size_t h, std::size_t w) const {
    std::uint64_t total = cv1_.macs(h, w) + cv2_.macs(h, w);
    for (const auto& b : bottlenecks_) total += b.macs(h, w);
    for (const auto& c : c3ks_) total += c.macs(h, w);
    return total;
  }
  void collect(ParamList<T>& out) {
    cv1_.collect(out);
    for (auto& b : bottlenecks_) b.collect(out);
    for (auto& c : c3ks_) c.collect(out);
    cv2_.collect(out);
  }
  void set_training(bool t) {
    cv1_.set_training(t);
    for (auto& b : bottlenecks_) b.set_training(t);
    for (auto& c : c3ks_) c.set_training(t);
    cv2_.set_training(t);
  }

 private:
  std::size_t c_out_ = 0, hidden_ = 0;
  bool use_c3k_ = false;
  ConvBNSiLU<T> cv1_, cv2_;
  std::vector<Bottleneck<T>> bottlenecks_;
  std::vector<C3k<T>> c3ks_;
};

// One attention unit of A2C2F: x + attention(x), then z + mlp(z).
template <typename T>
class ABlock {
 public:
  ABlock() = default;
  ABlock(const AttentionConfig& cfg, SplitMix64& rng)
      : attn_(cfg, rng), mlp_(cfg, rng) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t extent = attn_.config().partition_axis == PartitionAxis::horizontal
                                   ? x.dim(2)
                                   : x.dim(3);
    const std::size_t segs = adapt_segments(extent, attn_.config().area_segments);
    Tensor<T> z = add(x, attn_.attend(x, segs, attn_.config().position_perceiver));
    return add(z, mlp_.forward(z));
  }

  std::uint64_t macs(std::size_t h, std::size_t w) const {
    const std::size_t extent =
        attn_.config().partition_axis == PartitionAxis::horizontal ? h : w;
    const std::size_t segs = adapt_segments(extent, attn_.config().area_segments);
    return attn_.macs(h, w, segs, attn_.config().position_perceiver) + mlp_.macs(h, w);
  }
  AreaAttention<T>& attention() { return attn_; }
  AttentionMlp<T>& mlp() { return mlp_; }
  void collect(ParamList<T>& out) {
    attn_.collect(out);
    mlp_.collect(out);
  }
  void set_training(bool t) {
    attn_.set_training(t);
    mlp_.set_training(t);
  }

 private:
  AreaAttention<T> attn_;
  AttentionMlp<T> mlp_;
};

// A2C2F: CSP-style wrapper around `repeats` inner units (attention+mlp pairs
// when use_area, plain bottlenecks otherwise). When use_area and the channel
// counts agree, the input joins the fused output through a scaled residual
// shortcut, the residual aggregation scheme with alpha defaulting to 0.01.
template <typename T>
class A2C2F {
 public:
  A2C2F() = default;
  A2C2F(std::size_t c_in, std::size_t c_out, bool use_area, std::size_t repeats,
        SplitMix64& rng, double residual_scale = 0.01, std::size_t head_dim = 32)
      : c_out_(c_out), use_area_(use_area), residual_scale_(residual_scale) {
    if (repeats < 1) throw ConfigError("a2c2f: repeats must be >= 1");
    hidden_ = std::max<std::size_t>(1, c_out / 2);
    cv1_ = ConvBNSiLU<T>(c_in, 2 * hidden_, 1, 1, rng);
    if (use_area_) {
      AttentionConfig cfg;
      cfg.channels = hidden_;
      cfg.heads = (hidden_ >= head_dim && hidden_ % head_dim == 0) ? hidden_ / head_dim : 1;
      for (std::size_t i = 0; i < repeats; ++i) ablocks_.emplace_back(cfg, rng);
    } else {
      for (std::size_t i = 0; i < repeats; ++i)
        bottlenecks_.emplace_back(hidden_, hidden_, true, rng);
    }
    cv2_ = ConvBNSiLU<T>((2 + repeats) * hidden_, c_out, 1, 1, rng);
    residual_ = use_area_ && c_in == c_out;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> t = cv1_.forward(x);
    std::vector<Tensor<T>> streams;
    streams.push_back(slice(t, 1, 0, hidden_));
    streams.push_back(slice(t, 1, hidden_, hidden_));
    Tensor<T> cur = streams.back();
    const std::size_t units = use_area_ ? ablocks_.size() : bottlenecks_.size();
    for (std::size_t i = 0; i < units; ++i) {
      cur = use_area_ ? ablocks_[i].forward(cur) : bottlenecks_[i].forward(cur);
      streams.push_back(cur);
    }
    Tensor<T> fused = cv2_.forward(concat(streams, 1));
    if (residual_) return add(x, mul_scalar(fused, static_cast<T>(residual_scale_)));
    return fused;
  }

  std::size_t out_channels() const { return c_out_; }
  std::size_t hidden_channels() const { return hidden_; }
  bool uses_area() const { return use_area_; }
  std::size_t repeats() const { return use_area_ ? ablocks_.size() : bottlenecks_.size(); }
  std::vector<ABlock<T>>& attention_units() { return ablocks_; }

  std::uint64_t macs(std::size_t h, std::size_t w) const {
    std::uint64_t total = cv1_.macs(h, w) + cv2_.macs(h, w);
    for (const auto& a : ablocks_) total += a.macs(h, w);
    for (const auto& b : bottlenecks_) total += b.macs(h, w);
    return total;
  }
  void collect(ParamList<T>& out) {
    cv1_.collect(out);
    for (auto& a : ablocks_) a.collect(out);
    for (auto& b : bottlenecks_) b.collect(out);
    cv2_.collect(out);
  }
  void set_training(bool t) {
    cv1_.set_training(t);
    for (auto& a : ablocks_) a.set_training(t);
    for (auto& b : bottlenecks_) b.set_training(t);
    cv2_.set_training(t);
  }

 private:
  std::size_t c_out_ = 0, hidden_ = 0;
  bool use_area_ = false;
  bool residual_ = false;
  double residual_scale_ = 0.01;
  ConvBNSiLU<T> cv1_, cv2_;
  std::vector<ABlock<T>> ablocks_;
  std::vector<Bottleneck<T>> bottlenecks_;
};

struct RELANConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t num_bottlenecks = 2;
  double residual_scale = 0.01;  // alpha; 0 disables the aggregated branch exactly

  void validate() const {
    if (in_channels == 0 || out_channels == 0)
      throw ConfigError("r-elan: channel counts must be positive");
    if (num_bottlenecks < 1) throw ConfigError("r-elan: need at least one bottleneck");
    if (residual_scale < 0.0) throw ConfigError("r-elan: alpha must be >= 0");
  }
};

// y = shortcut(x) + alpha * F(x). F adjusts channels up front with a single
// 1x1 transition, runs a bottleneck chain on the unified map, concatenates
// every intermediate and fuses 1x1. The shortcut is the identity, or a bare
// 1x1 projection (no norm, no activation) when channel counts differ.
template <typename T>
class RELAN {
 public:
  RELAN() = default;
  RELAN(const RELANConfig& cfg, SplitMix64& rng) : cfg_(cfg) {
    cfg_.validate();
    hidden_ = std::max<std::size_t>(1, cfg.out_channels / 2);
    adjust_ = ConvBNSiLU<T>(cfg.in_channels, hidden_, 1, 1, rng);
    for (std::size_t i = 0; i < cfg.num_bottlenecks; ++i)
      chain_.emplace_back(hidden_, hidden_, true, rng);
    fuse_ = ConvBNSiLU<T>((1 + cfg.num_bottlenecks) * hidden_, cfg.out_channels, 1, 1, rng);
    if (cfg.in_channels != cfg.out_channels)
      proj_ = Conv2dLayer<T>(cfg.in_channels, cfg.out_channels, 1, 1, 0, 1, false, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> shortcut =
        cfg_.in_channels == cfg_.out_channels ? x : proj_.forward(x);
    Tensor<T> a = adjust_.forward(x);
    std::vector<Tensor<T>> streams{a};
    Tensor<T> cur = a;
    for (auto& b : chain_) {
      cur = b.forward(cur);
      streams.push_back(cur);
    }
    Tensor<T> fused = fuse_.forward(concat(streams, 1));
    return add(shortcut, mul_scalar(fused, static_cast<T>(cfg_.residual_scale)));
  }

  const RELANConfig& config() const { return cfg_; }
  std::size_t out_channels() const { return cfg_.out_channels; }

  std::uint64_t macs(std::size_t h, std::size_t w) const {
    std::uint64_t total = adjust_.macs(h, w) + fuse_.macs(h, w);
    for (const auto& b : chain_) total += b.macs(h, w);
    if (cfg_.in_channels != cfg_.out_channels) total += proj_.macs(h, w);
    return total;
  }
  void collect(ParamList<T>& out) {
    adjust_.collect(out);
    for (auto& b : chain_) b.collect(out);
    fuse_.collect(out);
    if (cfg_.in_channels != cfg_.out_channels) proj_.collect(out);
  }
  void set_training(bool t) {
    adjust_.set_training(t);
    for (auto& b : chain_) b.set_training(t);
    fuse_.set_training(t);
  }

  // Zeroes every conv weight on the aggregated branch, leaving the shortcut
  // as the only signal path (gradient-flow contrast fixture).
  void zero_inner_weights() {
    ParamList<T> params;
    adjust_.collect(params);
    for (auto& b : chain_) b.collect(params);
    fuse_.collect(params);
    for (auto& p : params)
      if (!p.is_buffer && p.tensor->rank() == 4)
        std::fill(p.tensor->values_mut().begin(), p.tensor->values_mut().end(), T(0));
  }

 private:
  RELANConfig cfg_;
  std::size_t hidden_ = 0;
  ConvBNSiLU<T> adjust_, fuse_;
  std::vector<Bottleneck<T>> chain_;
  Conv2dLayer<T> proj_;
};

// Reference ELAN: 1x1 transition split into two halves, two serial 3x3 conv
// paths on the second half, concat of all four streams, 1x1 fusion. No
// input-to-output residual; gradients reach x only through the transitions.
template <typename T>
class ELANRef {
 public:
  ELANRef() = default;
  ELANRef(std::size_t c_in, std::size_t c_out, SplitMix64& rng) : c_out_(c_out) {
    hidden_ = std::max<std::size_t>(1, c_out / 2);
    cv1_ = ConvBNSiLU<T>(c_in, 2 * hidden_, 1, 1, rng);
    path1_ = ConvBNSiLU<T>(hidden_, hidden_, 3, 1, rng);
    path2_ = ConvBNSiLU<T>(hidden_, hidden_, 3, 1, rng);
    cv2_ = ConvBNSiLU<T>(4 * hidden_, c_out, 1, 1, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> t = cv1_.forward(x);
    Tensor<T> a = slice(t, 1, 0, hidden_);
    Tensor<T> b = slice(t, 1, hidden_, hidden_);
    Tensor<T> c = path1_.forward(b);
    Tensor<T> d = path2_.forward(c);
    return cv2_.forward(concat<T>({a, b, c, d}, 1));
  }

  std::size_t out_channels() const { return c_out_; }
  std::uint64_t macs(std::size_t h, std::size_t w) const {
    return cv1_.macs(h, w) + path1_.macs(h, w) + path2_.macs(h, w) + cv2_.macs(h, w);
  }
  void collect(ParamList<T>& out) {
    cv1_.collect(out);
    path1_.collect(out);
    path2_.collect(out);
    cv2_.collect(out);
  }
  void set_training(bool t) {
    cv1_.set_training(t);
    path1_.set_training(t);
    path2_.set_training(t);
    cv2_.set_training(t);
  }

  // Zeroes the parallel conv paths, keeping the cv1/cv2 transitions live.
  void zero_inner_weights() {
    for (auto* p : {&path1_, &path2_}) {
      ParamList<T> params;
      p->collect(params);
      for (auto& pr : params)
        if (!pr.is_buffer && pr.tensor->rank() == 4)
          std::fill(pr.tensor->values_mut().begin(), pr.tensor->values_mut().end(), T(0));
    }
  }

 private:
  std::size_t c_out_ = 0, hidden_ = 0;
  ConvBNSiLU<T> cv1_, path1_, path2_, cv2_;
};

// Reference CSP block: the channel halves split apart, one half runs through
// a bottleneck chain, the merge is a plain concat so the untouched half
// passes through bit-identical. out_channels == in_channels.
template <typename T>
class CSPRef {
 public:
  CSPRef() = default;
  CSPRef(std::size_t channels, SplitMix64& rng, std::size_t n_bottlenecks = 2)
      : channels_(channels) {
    if (channels % 2 != 0)
      throw ConfigError("csp: channel count " + std::to_string(channels) + " must be even");
    const std::size_t half = channels / 2;
    for (std::size_t i = 0; i < n_bottlenecks; ++i)
      chain_.emplace_back(half, half, true, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t half = channels_ / 2;
    Tensor<T> kept = slice(x, 1, 0, half);
    Tensor<T> processed = slice(x, 1, half, half);
    for (auto& b : chain_) processed = b.forward(processed);
    return concat<T>({kept, processed}, 1);
  }

  std::size_t out_channels() const { return channels_; }
  std::uint64_t macs(std::size_t h, std::size_t w) const {
    std::uint64_t total = 0;
    for (const auto& b : chain_) total += b.macs(h, w);
    return total;
  }
  void collect(ParamList<T>& out) {
    for (auto& b : chain_) b.collect(out);
  }
  void set_training(bool t) {
    for (auto& b : chain_) b.set_training(t);
  }

 private:
  std::size_t channels_ = 0;
  std::vector<Bottleneck<T>> chain_;
};

}  // namespace y12
