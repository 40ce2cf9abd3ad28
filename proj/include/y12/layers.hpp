#pragma once

// Weight-holding layer primitives: conv, batch norm, and their fused stacks.
// Weights are initialized from a caller-supplied SplitMix64 so construction
// is reproducible; parameter enumeration order is declaration order, which
// fixes the serialization layout.

#include "y12/ops.hpp"

namespace y12 {

template <typename T>
struct ParamRef {
  Tensor<T>* tensor;
  bool is_buffer;  // running statistics: serialized, never optimized
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

constexpr double kWeightInitSigma = 0.02;

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t c_in, std::size_t c_out, std::size_t k, int stride, int padding,
              int groups, bool with_bias, SplitMix64& rng)
      : stride_(stride), padding_(padding), groups_(groups) {
    if (k < 1) throw ConfigError("conv layer: kernel must be >= 1");
    if (groups < 1 || c_in % static_cast<std::size_t>(groups) != 0)
      throw ConfigError("conv layer: channels " + std::to_string(c_in) +
                        " not divisible by groups " + std::to_string(groups));
    weight_ = trunc_normal<T>({c_out, c_in / static_cast<std::size_t>(groups), k, k}, rng,
                              static_cast<T>(kWeightInitSigma));
    weight_.set_requires_grad(true);
    if (with_bias) {
      bias_ = Tensor<T>::zeros({c_out});
      bias_.set_requires_grad(true);
      has_bias_ = true;
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight_, stride_, padding_, groups_, has_bias_ ? &bias_ : nullptr);
  }

  std::size_t out_channels() const { return weight_.dim(0); }
  std::size_t kernel() const { return weight_.dim(2); }
  int stride() const { return stride_; }
  int padding() const { return padding_; }
  int groups() const { return groups_; }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

  void out_hw(std::size_t h, std::size_t w, std::size_t& ho, std::size_t& wo) const {
    ho = (h + 2 * static_cast<std::size_t>(padding_) - kernel()) /
             static_cast<std::size_t>(stride_) +
         1;
    wo = (w + 2 * static_cast<std::size_t>(padding_) - kernel()) /
             static_cast<std::size_t>(stride_) +
         1;
  }

  std::uint64_t macs(std::size_t h, std::size_t w) const {
    std::size_t ho, wo;
    out_hw(h, w, ho, wo);
    const std::size_t cin_g = weight_.dim(1);
    return static_cast<std::uint64_t>(cin_g) * weight_.dim(0) * kernel() * kernel() * ho * wo;
  }

  void collect(ParamList<T>& out) {
    out.push_back({&weight_, false});
    if (has_bias_) out.push_back({&bias_, false});
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  bool has_bias_ = false;
  int stride_ = 1;
  int padding_ = 0;
  int groups_ = 1;
};

// Batch norm with running statistics (momentum 0.1, eps 1e-3: YOLO-family
// convention). Training mode refreshes the running stats as an explicit
// buffer update before the functional op runs.
template <typename T>
class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  explicit BatchNorm2dLayer(std::size_t channels, T eps = static_cast<T>(1e-3),
                            T momentum = static_cast<T>(0.1))
      : eps_(eps), momentum_(momentum) {
    gamma_ = Tensor<T>::full({channels}, T(1));
    gamma_.set_requires_grad(true);
    beta_ = Tensor<T>::zeros({channels});
    beta_.set_requires_grad(true);
    running_mean_ = Tensor<T>::zeros({channels});
    running_var_ = Tensor<T>::full({channels}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (training_) update_running_stats(x);
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, eps_, training_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (training_)
      throw UsageError("batch norm: training-mode forward on const layer");
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, eps_, false);
  }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  T eps() const { return eps_; }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  void collect(ParamList<T>& out) {
    out.push_back({&gamma_, false});
    out.push_back({&beta_, false});
    out.push_back({&running_mean_, true});
    out.push_back({&running_var_, true});
  }

 private:
  void update_running_stats(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    const std::size_t m = n * plane;
    auto& rm = running_mean_.values_mut();
    auto& rv = running_var_.values_mut();
    const T* xd = x.data();
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
      rm[ci] = (T(1) - momentum_) * rm[ci] + momentum_ * mu;
      rv[ci] = (T(1) - momentum_) * rv[ci] + momentum_ * var;
    }
  }

  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  T eps_ = static_cast<T>(1e-3);
  T momentum_ = static_cast<T>(0.1);
  bool training_ = false;
};

// conv -> batch norm, no activation (attention projections use this).
template <typename T>
class ConvBN {
 public:
  ConvBN() = default;
  ConvBN(std::size_t c_in, std::size_t c_out, std::size_t k, int stride, int groups,
         SplitMix64& rng)
      : conv_(c_in, c_out, k, stride, static_cast<int>((k - 1) / 2), groups, false, rng),
        bn_(c_out) {}

  Tensor<T> forward(const Tensor<T>& x) { return bn_.forward(conv_.forward(x)); }

  Conv2dLayer<T>& conv() { return conv_; }
  BatchNorm2dLayer<T>& bn() { return bn_; }
  std::size_t out_channels() const { return conv_.out_channels(); }

  std::uint64_t macs(std::size_t h, std::size_t w) const { return conv_.macs(h, w); }

  void collect(ParamList<T>& out) {
    conv_.collect(out);
    bn_.collect(out);
  }
  void set_training(bool t) { bn_.set_training(t); }

 private:
  Conv2dLayer<T> conv_;
  BatchNorm2dLayer<T> bn_;
};

// conv -> batch norm -> SiLU, padding (k-1)/2.
template <typename T>
class ConvBNSiLU {
 public:
  ConvBNSiLU() = default;
  ConvBNSiLU(std::size_t c_in, std::size_t c_out, std::size_t k, int stride,
             SplitMix64& rng, int groups = 1)
      : body_(c_in, c_out, k, stride, groups, rng) {}

  Tensor<T> forward(const Tensor<T>& x) { return silu(body_.forward(x)); }

  std::size_t out_channels() const { return body_.out_channels(); }
  Conv2dLayer<T>& conv() { return body_.conv(); }
  BatchNorm2dLayer<T>& bn() { return body_.bn(); }

  void out_hw(std::size_t h, std::size_t w, std::size_t& ho, std::size_t& wo) const {
    body_.conv().out_hw(h, w, ho, wo);
  }
  std::uint64_t macs(std::size_t h, std::size_t w) const { return body_.macs(h, w); }

  void collect(ParamList<T>& out) { body_.collect(out); }
  void set_training(bool t) { body_.set_training(t); }

 private:
  ConvBN<T> body_;
};

// Depthwise k x k (groups = channels) followed by pointwise 1x1; spatial size
// preserved, k must be odd.
template <typename T>
class DepthwiseSeparableConv {
 public:
  DepthwiseSeparableConv() = default;
  DepthwiseSeparableConv(std::size_t channels, std::size_t k, SplitMix64& rng)
      : depthwise_(channels, channels, check_odd(k), 1, static_cast<int>((k - 1) / 2),
                   static_cast<int>(channels), false, rng),
        pointwise_(channels, channels, 1, 1, 0, 1, false, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return pointwise_.forward(depthwise_.forward(x));
  }

  Conv2dLayer<T>& depthwise() { return depthwise_; }
  Conv2dLayer<T>& pointwise() { return pointwise_; }

  std::uint64_t macs(std::size_t h, std::size_t w) const {
    return depthwise_.macs(h, w) + pointwise_.macs(h, w);
  }

  std::uint64_t param_count() const {
    return depthwise_.weight().numel() + pointwise_.weight().numel();
  }

  void collect(ParamList<T>& out) {
    depthwise_.collect(out);
    pointwise_.collect(out);
  }

 private:
  static std::size_t check_odd(std::size_t k) {
    if (k % 2 == 0)
      throw ConfigError("depthwise separable conv: kernel " + std::to_string(k) +
                        " must be odd");
    return k;
  }

  Conv2dLayer<T> depthwise_;
  Conv2dLayer<T> pointwise_;
};

template <typename T>
std::uint64_t param_count(ParamList<T>& params) {
  std::uint64_t n = 0;
  for (const auto& p : params) n += p.tensor->numel();
  return n;
}

}  // namespace y12
