#pragma once

// The detector graph: backbone (P1..P5), head (two upsample fusions, two
// downsample fusions), anchor-free decoupled Detect over strides 8/16/32.
// Scale variants tune depth/width/max-channel multipliers only; the layer
// sequence is fixed.

#include <optional>
#include <variant>

#include "y12/blocks.hpp"

namespace y12 {

enum class Scale { n, s, m, l, x };

inline char scale_char(Scale s) {
  switch (s) {
    case Scale::n: return 'n';
    case Scale::s: return 's';
    case Scale::m: return 'm';
    case Scale::l: return 'l';
    case Scale::x: return 'x';
  }
  return '?';
}

inline Scale scale_from_char(char c) {
  switch (c) {
    case 'n': return Scale::n;
    case 's': return Scale::s;
    case 'm': return Scale::m;
    case 'l': return Scale::l;
    case 'x': return Scale::x;
    default: throw ConfigError(std::string("unknown scale '") + c + "', expected n|s|m|l|x");
  }
}

struct ModelConfig {
  Scale scale = Scale::n;
  double depth_mult = 0.50;
  double width_mult = 0.25;
  std::size_t max_channels = 1024;
  std::size_t nc = 80;
  std::size_t input_size = 640;

  static ModelConfig for_scale(Scale s, std::size_t nc = 80, std::size_t input_size = 640) {
    ModelConfig cfg;
    cfg.scale = s;
    cfg.nc = nc;
    cfg.input_size = input_size;
    switch (s) {
      case Scale::n: cfg.depth_mult = 0.50; cfg.width_mult = 0.25; cfg.max_channels = 1024; break;
      case Scale::s: cfg.depth_mult = 0.50; cfg.width_mult = 0.50; cfg.max_channels = 1024; break;
      case Scale::m: cfg.depth_mult = 0.50; cfg.width_mult = 1.00; cfg.max_channels = 512; break;
      case Scale::l: cfg.depth_mult = 1.00; cfg.width_mult = 1.00; cfg.max_channels = 512; break;
      case Scale::x: cfg.depth_mult = 1.00; cfg.width_mult = 1.50; cfg.max_channels = 512; break;
    }
    return cfg;
  }

  std::size_t scaled_channels(std::size_t c) const {
    const auto scaled = static_cast<std::size_t>(std::llround(c * width_mult));
    return std::max<std::size_t>(1, std::min(scaled, max_channels));
  }

  std::size_t scaled_repeats(std::size_t r) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r * depth_mult)));
  }
};

// Anchor-free decoupled head. Per pyramid level: a box stack regressing four
// cell-unit distances to the box edges and a class stack emitting nc logits;
// the two are concatenated into a [N, 4+nc, h, w] map. Hidden widths are
// shared across levels (box: max(16, c_p3/4); cls: max(16, min(c_p3, 100))),
// a convention, as the architecture leaves the head internals open.
template <typename T>
class DetectHead {
 public:
  DetectHead() = default;
  DetectHead(const std::vector<std::size_t>& channels, std::size_t nc, SplitMix64& rng)
      : nc_(nc) {
    const std::size_t c0 = channels.at(0);
    const std::size_t hb = std::max<std::size_t>(16, c0 / 4);
    const std::size_t hc = std::max<std::size_t>(16, std::min<std::size_t>(c0, 100));
    for (std::size_t c : channels) {
      PerLevel lvl;
      lvl.box1 = ConvBNSiLU<T>(c, hb, 3, 1, rng);
      lvl.box2 = ConvBNSiLU<T>(hb, hb, 3, 1, rng);
      lvl.box_out = Conv2dLayer<T>(hb, 4, 1, 1, 0, 1, true, rng);
      lvl.cls1 = ConvBNSiLU<T>(c, hc, 3, 1, rng);
      lvl.cls2 = ConvBNSiLU<T>(hc, hc, 3, 1, rng);
      lvl.cls_out = Conv2dLayer<T>(hc, nc, 1, 1, 0, 1, true, rng);
      // Distances start near one cell; class scores start low.
      std::fill(lvl.box_out.bias().values_mut().begin(),
                lvl.box_out.bias().values_mut().end(), T(1));
      std::fill(lvl.cls_out.bias().values_mut().begin(),
                lvl.cls_out.bias().values_mut().end(), T(-2));
      levels_.push_back(std::move(lvl));
    }
  }

  std::vector<Tensor<T>> forward(const std::vector<Tensor<T>>& features) {
    if (features.size() != levels_.size())
      throw ShapeError("detect: expected " + std::to_string(levels_.size()) + " feature maps");
    std::vector<Tensor<T>> out;
    out.reserve(levels_.size());
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      auto& lvl = levels_[i];
      Tensor<T> box = lvl.box_out.forward(lvl.box2.forward(lvl.box1.forward(features[i])));
      Tensor<T> cls = lvl.cls_out.forward(lvl.cls2.forward(lvl.cls1.forward(features[i])));
      out.push_back(concat<T>({box, cls}, 1));
    }
    return out;
  }

  std::size_t nc() const { return nc_; }
  std::size_t num_levels() const { return levels_.size(); }

  std::uint64_t macs(const std::vector<std::pair<std::size_t, std::size_t>>& grids) const {
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const auto [h, w] = grids.at(i);
      const auto& lvl = levels_[i];
      total += lvl.box1.macs(h, w) + lvl.box2.macs(h, w) + lvl.box_out.macs(h, w);
      total += lvl.cls1.macs(h, w) + lvl.cls2.macs(h, w) + lvl.cls_out.macs(h, w);
    }
    return total;
  }

  void collect(ParamList<T>& out) {
    for (auto& lvl : levels_) {
      lvl.box1.collect(out);
      lvl.box2.collect(out);
      lvl.box_out.collect(out);
      lvl.cls1.collect(out);
      lvl.cls2.collect(out);
      lvl.cls_out.collect(out);
    }
  }
  void set_training(bool t) {
    for (auto& lvl : levels_) {
      lvl.box1.set_training(t);
      lvl.box2.set_training(t);
      lvl.cls1.set_training(t);
      lvl.cls2.set_training(t);
    }
  }

 private:
  struct PerLevel {
    ConvBNSiLU<T> box1, box2;
    Conv2dLayer<T> box_out;
    ConvBNSiLU<T> cls1, cls2;
    Conv2dLayer<T> cls_out;
  };
  std::size_t nc_ = 0;
  std::vector<PerLevel> levels_;
};

// One node of the compiled graph (reporting metadata).
struct LayerInfo {
  int id = 0;
  std::string kind;
  std::vector<int> inputs;       // -1 denotes the image
  Shape out_shape;               // at the queried input size; first map for Detect
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

template <typename T>
struct RawHeads {
  std::vector<Tensor<T>> maps;  // [N, 4+nc, S/stride, S/stride] per level
  std::vector<int> strides;     // {8, 16, 32}
};

template <typename T>
class Model {
 public:
  struct UpsampleNode {
    int factor = 2;
  };
  struct ConcatNode {};
  using LayerImpl =
      std::variant<ConvBNSiLU<T>, C3k2<T>, A2C2F<T>, UpsampleNode, ConcatNode, DetectHead<T>>;

  struct Node {
    int id;
    std::string kind;
    std::vector<int> inputs;
    LayerImpl impl;
  };

  const ModelConfig& config() const { return cfg_; }
  std::vector<Node>& nodes() { return nodes_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Runs the graph. Input must be [N,3,H,W] with H and W divisible by 32.
  RawHeads<T> forward(const Tensor<T>& image) {
    if (image.rank() != 4 || image.dim(1) != 3)
      throw ShapeError("forward: expected [N,3,H,W] image, got " + shape_str(image.shape()));
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0)
      throw DataError("forward: input " + std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(3)) +
                      " not divisible by 32; letterbox the image first");
    std::vector<Tensor<T>> outs(nodes_.size());
    RawHeads<T> heads;
    heads.strides = {8, 16, 32};
    for (auto& node : nodes_) {
      auto in = [&](std::size_t i) -> const Tensor<T>& {
        const int src = node.inputs.at(i);
        return src < 0 ? image : outs[static_cast<std::size_t>(src)];
      };
      try {
        if (auto* conv = std::get_if<ConvBNSiLU<T>>(&node.impl)) {
          outs[node.id] = conv->forward(in(0));
        } else if (auto* c3k2 = std::get_if<C3k2<T>>(&node.impl)) {
          outs[node.id] = c3k2->forward(in(0));
        } else if (auto* a2c2f = std::get_if<A2C2F<T>>(&node.impl)) {
          outs[node.id] = a2c2f->forward(in(0));
        } else if (auto* up = std::get_if<UpsampleNode>(&node.impl)) {
          outs[node.id] = upsample_nearest(in(0), up->factor);
        } else if (std::get_if<ConcatNode>(&node.impl)) {
          std::vector<Tensor<T>> xs;
          for (std::size_t i = 0; i < node.inputs.size(); ++i) xs.push_back(in(i));
          outs[node.id] = concat(xs, 1);
        } else if (auto* det = std::get_if<DetectHead<T>>(&node.impl)) {
          std::vector<Tensor<T>> feats;
          for (std::size_t i = 0; i < node.inputs.size(); ++i) feats.push_back(in(i));
          heads.maps = det->forward(feats);
          outs[node.id] = heads.maps.front();
        }
      } catch (const Error& e) {
        throw Error("layer " + std::to_string(node.id) + " (" + node.kind +
                    "): " + e.what());
      }
    }
    if (heads.maps.empty()) throw UsageError("forward: graph has no Detect node");
    return heads;
  }

  // Shape/param/MAC walk for an arbitrary input size; no tensor math runs.
  std::vector<LayerInfo> describe(std::size_t input_size) const {
    if (input_size % 32 != 0)
      throw DataError("describe: input size must be divisible by 32");
    std::vector<LayerInfo> infos;
    std::vector<Shape> shapes(nodes_.size());
    for (const auto& node : nodes_) {
      LayerInfo info;
      info.id = node.id;
      info.kind = node.kind;
      info.inputs = node.inputs;
      auto in_shape = [&](std::size_t i) -> const Shape& {
        static Shape img;
        const int src = node.inputs.at(i);
        if (src < 0) {
          img = Shape{1, 3, input_size, input_size};
          return img;
        }
        return shapes[static_cast<std::size_t>(src)];
      };
      ParamList<T> params;
      if (auto* conv = std::get_if<ConvBNSiLU<T>>(&node.impl)) {
        const Shape& s = in_shape(0);
        std::size_t ho, wo;
        conv->out_hw(s[2], s[3], ho, wo);
        info.out_shape = {s[0], conv->out_channels(), ho, wo};
        info.macs = conv->macs(s[2], s[3]);
        const_cast<ConvBNSiLU<T>*>(conv)->collect(params);
      } else if (auto* c3k2 = std::get_if<C3k2<T>>(&node.impl)) {
        const Shape& s = in_shape(0);
        info.out_shape = {s[0], c3k2->out_channels(), s[2], s[3]};
        info.macs = c3k2->macs(s[2], s[3]);
        const_cast<C3k2<T>*>(c3k2)->collect(params);
      } else if (auto* a2c2f = std::get_if<A2C2F<T>>(&node.impl)) {
        const Shape& s = in_shape(0);
        info.out_shape = {s[0], a2c2f->out_channels(), s[2], s[3]};
        info.macs = a2c2f->macs(s[2], s[3]);
        const_cast<A2C2F<T>*>(a2c2f)->collect(params);
      } else if (auto* up = std::get_if<UpsampleNode>(&node.impl)) {
        const Shape& s = in_shape(0);
        info.out_shape = {s[0], s[1], s[2] * static_cast<std::size_t>(up->factor),
                          s[3] * static_cast<std::size_t>(up->factor)};
      } else if (std::get_if<ConcatNode>(&node.impl)) {
        Shape s = in_shape(0);
        std::size_t channels = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const Shape& si = in_shape(i);
          if (si[2] != s[2] || si[3] != s[3])
            throw ShapeError("concat node " + std::to_string(node.id) +
                             ": spatial mismatch between inputs");
          channels += si[1];
        }
        info.out_shape = {s[0], channels, s[2], s[3]};
      } else if (auto* det = std::get_if<DetectHead<T>>(&node.impl)) {
        std::vector<std::pair<std::size_t, std::size_t>> grids;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const Shape& si = in_shape(i);
          grids.emplace_back(si[2], si[3]);
        }
        const Shape& s0 = in_shape(0);
        info.out_shape = {s0[0], 4 + det->nc(), s0[2], s0[3]};
        info.macs = det->macs(grids);
        const_cast<DetectHead<T>*>(det)->collect(params);
      }
      info.params = param_count(params);
      shapes[static_cast<std::size_t>(node.id)] = info.out_shape;
      infos.push_back(std::move(info));
    }
    return infos;
  }

  // Head grid shapes (h, w) per stride at a given input size.
  std::vector<Shape> head_shapes(std::size_t input_size) const {
    auto infos = describe(input_size);
    const auto& det = nodes_.back();
    std::vector<Shape> out;
    for (int src : det.inputs) {
      Shape s = infos[static_cast<std::size_t>(src)].out_shape;
      out.push_back({s[0], 4 + cfg_.nc, s[2], s[3]});
    }
    return out;
  }

  // All tensors in serialization order; weights first flag false, buffers true.
  std::vector<std::pair<int, ParamRef<T>>> tensors() {
    std::vector<std::pair<int, ParamRef<T>>> out;
    for (auto& node : nodes_) {
      ParamList<T> params;
      std::visit(
          [&](auto& impl) {
            using U = std::decay_t<decltype(impl)>;
            if constexpr (!std::is_same_v<U, UpsampleNode> && !std::is_same_v<U, ConcatNode>)
              impl.collect(params);
          },
          node.impl);
      for (auto& p : params) out.emplace_back(node.id, p);
    }
    return out;
  }

  std::uint64_t param_total() {
    std::uint64_t total = 0;
    for (auto& [id, p] : tensors()) total += p.tensor->numel();
    return total;
  }

  void set_training(bool t) {
    for (auto& node : nodes_)
      std::visit(
          [&](auto& impl) {
            using U = std::decay_t<decltype(impl)>;
            if constexpr (!std::is_same_v<U, UpsampleNode> && !std::is_same_v<U, ConcatNode>)
              impl.set_training(t);
          },
          node.impl);
  }

  void zero_grads() {
    for (auto& [id, p] : tensors())
      if (!p.is_buffer) p.tensor->zero_grad();
  }

  ModelConfig cfg_;
  std::vector<Node> nodes_;
};

// Builds the Algorithm-1 layer sequence at the configured scale. Seeded:
// identical (cfg, seed) pairs produce identical weights.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed = 0) {
  SplitMix64 rng(seed ^ 0xD0E512ULL);
  Model<T> model;
  model.cfg_ = cfg;
  auto c = [&](std::size_t base) { return cfg.scaled_channels(base); };
  auto r = [&](std::size_t base) { return cfg.scaled_repeats(base); };
  int id = 0;
  auto add_node = [&](std::string kind, std::vector<int> inputs,
                      typename Model<T>::LayerImpl impl) {
    model.nodes_.push_back({id++, std::move(kind), std::move(inputs), std::move(impl)});
  };

  // Backbone
  add_node("Conv", {-1}, ConvBNSiLU<T>(3, c(64), 3, 2, rng));                     // 0  P1/2
  add_node("Conv", {0}, ConvBNSiLU<T>(c(64), c(128), 3, 2, rng));                 // 1  P2/4
  add_node("C3k2", {1}, C3k2<T>(c(128), c(256), false, 0.25, rng));               // 2
  add_node("Conv", {2}, ConvBNSiLU<T>(c(256), c(256), 3, 2, rng));                // 3  P3/8
  add_node("C3k2", {3}, C3k2<T>(c(256), c(512), false, 0.25, rng));               // 4
  add_node("Conv", {4}, ConvBNSiLU<T>(c(512), c(512), 3, 2, rng));                // 5  P4/16
  add_node("A2C2F", {5}, A2C2F<T>(c(512), c(512), true, r(4), rng));              // 6
  add_node("Conv", {6}, ConvBNSiLU<T>(c(512), c(1024), 3, 2, rng));               // 7  P5/32
  add_node("A2C2F", {7}, A2C2F<T>(c(1024), c(1024), true, r(1), rng));            // 8
  // Head: fuse up
  add_node("Upsample", {8}, typename Model<T>::UpsampleNode{2});                  // 9
  add_node("Concat", {9, 6}, typename Model<T>::ConcatNode{});                    // 10
  add_node("A2C2F", {10}, A2C2F<T>(c(1024) + c(512), c(512), false, r(1), rng));  // 11
  add_node("Upsample", {11}, typename Model<T>::UpsampleNode{2});                 // 12
  add_node("Concat", {12, 4}, typename Model<T>::ConcatNode{});                   // 13
  add_node("A2C2F", {13}, A2C2F<T>(c(512) + c(512), c(256), false, r(1), rng));   // 14
  // Head: fuse down
  add_node("Conv", {14}, ConvBNSiLU<T>(c(256), c(256), 3, 2, rng));               // 15
  add_node("Concat", {15, 6}, typename Model<T>::ConcatNode{});                   // 16
  add_node("A2C2F", {16}, A2C2F<T>(c(256) + c(512), c(512), false, r(1), rng));   // 17
  add_node("Conv", {17}, ConvBNSiLU<T>(c(512), c(512), 3, 2, rng));               // 18
  add_node("Concat", {18, 8}, typename Model<T>::ConcatNode{});                   // 19
  add_node("C3k2", {19}, C3k2<T>(c(512) + c(1024), c(1024), true, 0.5, rng));     // 20
  add_node("Detect", {14, 17, 20},
           DetectHead<T>({c(256), c(512), c(1024)}, cfg.nc, rng));                // 21
  return model;
}

}  // namespace y12
