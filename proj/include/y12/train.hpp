#pragma once

// Desk-scale trainer: center-in-cell assignment at the stride whose cell size
// best matches the object, binary cross-entropy on class logits, 1 - IoU on
// assigned cells, SGD with momentum. This exercises end-to-end gradients; it
// is not a training recipe.

#include "y12/dataset.hpp"
#include "y12/postprocess.hpp"

namespace y12 {

struct CellAssignment {
  std::size_t level;  // 0,1,2 for strides 8,16,32
  std::size_t gi, gj;
  ToyLabel label;
};

// Object size sqrt(w*h) in pixels; picks the stride whose 4-cell span is
// nearest, so roughly: <48 px -> 8, <96 px -> 16, else 32 (at any S).
inline std::size_t assign_level(const ToyLabel& label, std::size_t image_size,
                                const std::vector<int>& strides) {
  const double size = std::sqrt(label.w * label.h) * static_cast<double>(image_size);
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < strides.size(); ++i) {
    const double err = std::abs(size / 4.0 - static_cast<double>(strides[i]));
    if (err < best_err) {
      best_err = err;
      best = i;
    }
  }
  return best;
}

// Single positive per object: the cell containing the object center at the
// assigned level. Later objects overwrite earlier ones landing on the same
// cell (documented tie rule; rare in the generated data).
inline std::vector<CellAssignment> assign_cells(const std::vector<ToyLabel>& labels,
                                                std::size_t image_size,
                                                const std::vector<int>& strides) {
  std::vector<CellAssignment> out;
  for (const auto& label : labels) {
    CellAssignment a;
    a.level = assign_level(label, image_size, strides);
    const double stride = strides[a.level];
    const std::size_t grid = image_size / static_cast<std::size_t>(stride);
    a.gj = std::min<std::size_t>(grid - 1, static_cast<std::size_t>(label.cx * image_size / stride));
    a.gi = std::min<std::size_t>(grid - 1, static_cast<std::size_t>(label.cy * image_size / stride));
    a.label = label;
    out.push_back(a);
  }
  return out;
}

template <typename T>
struct LossParts {
  Tensor<T> total;
  double cls = 0, box = 0;
};

// Classification: per-entry BCE, averaged separately over negative entries
// and positive entries so the handful of positives is not drowned out.
// Box: mean(1 - IoU) over assigned cells, decoded exactly as inference does.
template <typename T>
LossParts<T> detection_loss(const RawHeads<T>& heads, const std::vector<ToyLabel>& labels,
                            std::size_t image_size) {
  const std::size_t nc = heads.maps.at(0).dim(1) - 4;
  auto assignments = assign_cells(labels, image_size, heads.strides);

  Tensor<T> cls_neg = Tensor<T>::scalar(T(0));
  Tensor<T> cls_pos = Tensor<T>::scalar(T(0));
  Tensor<T> box_loss = Tensor<T>::scalar(T(0));
  std::size_t n_pos = 0;

  for (std::size_t lvl = 0; lvl < heads.maps.size(); ++lvl) {
    const Tensor<T>& map = heads.maps[lvl];
    const std::size_t h = map.dim(2), w = map.dim(3);
    const double stride = heads.strides[lvl];

    // Target and positive/negative weight maps for this level.
    Tensor<T> targets({1, nc, h, w}, T(0));
    Tensor<T> wpos({1, nc, h, w}, T(0));
    Tensor<T> wneg({1, nc, h, w}, T(1));
    std::size_t level_pos = 0;
    for (const auto& a : assignments) {
      if (a.level != lvl) continue;
      const std::size_t at = static_cast<std::size_t>(a.label.class_id) * h * w + a.gi * w + a.gj;
      targets.values_mut()[at] = T(1);
      wpos.values_mut()[at] = T(1);
      wneg.values_mut()[at] = T(0);
      ++level_pos;
    }

    Tensor<T> logits = slice(map, 1, 4, nc);
    Tensor<T> bce = bce_with_logits(logits, targets);
    const T n_all = static_cast<T>(nc * h * w);
    const T negs = n_all - static_cast<T>(level_pos);
    if (negs > T(0))
      cls_neg = add(cls_neg, mul_scalar(sum(mul(bce, wneg)), T(1) / negs));
    if (level_pos > 0) cls_pos = add(cls_pos, sum(mul(bce, wpos)));

    // Box loss per assignment on this level.
    for (const auto& a : assignments) {
      if (a.level != lvl) continue;
      ++n_pos;
      Tensor<T> cell = slice(slice(slice(map, 2, a.gi, 1), 3, a.gj, 1), 1, 0, 4);
      Tensor<T> dist = clamp_min(reshape(cell, {4}), static_cast<T>(0.01));
      const double cx = (static_cast<double>(a.gj) + 0.5) * stride;
      const double cy = (static_cast<double>(a.gi) + 0.5) * stride;
      Tensor<T> dir({4}, {static_cast<T>(-stride), static_cast<T>(-stride),
                          static_cast<T>(stride), static_cast<T>(stride)});
      Tensor<T> center({4}, {static_cast<T>(cx), static_cast<T>(cy), static_cast<T>(cx),
                             static_cast<T>(cy)});
      Tensor<T> box = add(mul(dist, dir), center);  // x1,y1,x2,y2

      const double s = static_cast<double>(image_size);
      const double gx1 = (a.label.cx - a.label.w / 2) * s;
      const double gy1 = (a.label.cy - a.label.h / 2) * s;
      const double gx2 = (a.label.cx + a.label.w / 2) * s;
      const double gy2 = (a.label.cy + a.label.h / 2) * s;
      Tensor<T> gmin({4}, {static_cast<T>(gx1), static_cast<T>(gy1), static_cast<T>(gx2),
                           static_cast<T>(gy2)});

      Tensor<T> px1 = slice(box, 0, 0, 1), py1 = slice(box, 0, 1, 1);
      Tensor<T> px2 = slice(box, 0, 2, 1), py2 = slice(box, 0, 3, 1);
      Tensor<T> ix1 = maximum(px1, slice(gmin, 0, 0, 1));
      Tensor<T> iy1 = maximum(py1, slice(gmin, 0, 1, 1));
      Tensor<T> ix2 = minimum(px2, slice(gmin, 0, 2, 1));
      Tensor<T> iy2 = minimum(py2, slice(gmin, 0, 3, 1));
      Tensor<T> iw = clamp_min(sub(ix2, ix1), T(0));
      Tensor<T> ih = clamp_min(sub(iy2, iy1), T(0));
      Tensor<T> inter = mul(iw, ih);
      Tensor<T> area_p = mul(sub(px2, px1), sub(py2, py1));
      const T area_g = static_cast<T>((gx2 - gx1) * (gy2 - gy1));
      Tensor<T> uni = sub(add_scalar(area_p, area_g), inter);
      Tensor<T> iou = div(inter, uni);
      box_loss = add(box_loss, sub(Tensor<T>::scalar(T(1)), iou));
    }
  }
  if (n_pos > 0) {
    const T inv = T(1) / static_cast<T>(n_pos);
    box_loss = mul_scalar(box_loss, inv);
    cls_pos = mul_scalar(cls_pos, inv);
  }
  Tensor<T> cls_loss = add(cls_neg, cls_pos);
  LossParts<T> parts;
  parts.cls = static_cast<double>(cls_loss.item());
  parts.box = static_cast<double>(box_loss.item());
  parts.total = add(cls_loss, box_loss);
  return parts;
}

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(ParamList<T> params, double lr, double momentum = 0.9)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (const auto& p : params_)
      velocity_.emplace_back(p.is_buffer ? 0 : p.tensor->numel(), T(0));
  }

  void zero_grad() {
    for (auto& p : params_)
      if (!p.is_buffer) p.tensor->zero_grad();
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.is_buffer) continue;
      const auto* g = p.tensor->grad();
      if (!g) continue;
      auto& v = velocity_[i];
      auto& w = p.tensor->values_mut();
      const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_);
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = mu * v[j] - lr * (*g)[j];
        w[j] += v[j];
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamList<T> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_;
  double momentum_;
};

struct TrainOptions {
  std::size_t iters = 200;
  double lr = 0.02;
  double momentum = 0.9;
  std::size_t batch = 2;
};

// Runs the loop and returns the per-iteration loss trace. Aborts with the
// iteration index if the loss goes non-finite.
template <typename T>
std::vector<double> train_toy(Model<T>& model, const std::vector<ToySample>& samples,
                              const TrainOptions& opt) {
  if (samples.empty()) throw ConfigError("train_toy: empty dataset");
  if (opt.iters < 1) throw ConfigError("train_toy: iters must be >= 1");
  const std::size_t image_size = samples[0].image.width;

  ParamList<T> params;
  for (auto& [id, p] : model.tensors()) params.push_back(p);
  SgdMomentum<T> sgd(params, opt.lr, opt.momentum);

  model.set_training(true);
  std::vector<double> trace;
  trace.reserve(opt.iters);
  std::size_t cursor = 0;
  for (std::size_t it = 0; it < opt.iters; ++it) {
    sgd.zero_grad();
    Tape<T> tape;
    typename Tape<T>::Scope scope(tape);
    Tensor<T> loss = Tensor<T>::scalar(T(0));
    for (std::size_t b = 0; b < opt.batch; ++b) {
      const ToySample& sample = samples[cursor];
      cursor = (cursor + 1) % samples.size();
      Tensor<T> image = reshape(image_to_tensor<T>(sample.image),
                                {1, 3, image_size, image_size});
      RawHeads<T> heads = model.forward(image);
      loss = add(loss, detection_loss(heads, sample.labels, image_size).total);
    }
    loss = mul_scalar(loss, T(1) / static_cast<T>(opt.batch));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value))
      throw NumericError("train_toy: non-finite loss at iteration " + std::to_string(it));
    loss.backward();
    sgd.step();
    trace.push_back(value);
  }
  model.set_training(false);
  return trace;
}

}  // namespace y12
