#pragma once

// Decoding raw head maps into boxes and greedy class-wise NMS.

#include "y12/model.hpp"

namespace y12 {

struct Detection {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // input-pixel coordinates
  int class_id = 0;
  double score = 0;
};

inline double box_iou(const Detection& a, const Detection& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Decode rule: per cell, score = sigmoid(max class logit), class = argmax;
// channels 0..3 are (left, top, right, bottom) distances in cell units,
// clamped below at 0.01 cells so boxes stay non-degenerate, scaled by the
// stride around the cell center. Cells scoring below the threshold drop.
template <typename T>
std::vector<Detection> decode(const RawHeads<T>& heads, double conf_threshold,
                              double input_size) {
  if (conf_threshold < 0.0 || conf_threshold > 1.0)
    throw ConfigError("decode: confidence threshold must lie in [0,1]");
  std::vector<Detection> out;
  for (std::size_t lvl = 0; lvl < heads.maps.size(); ++lvl) {
    const Tensor<T>& map = heads.maps[lvl];
    const double stride = heads.strides.at(lvl);
    const std::size_t channels = map.dim(1), h = map.dim(2), w = map.dim(3);
    const std::size_t nc = channels - 4;
    const T* data = map.data();  // batch element 0
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t cell = i * w + j;
        T best = data[4 * plane + cell];
        std::size_t best_c = 0;
        for (std::size_t cch = 1; cch < nc; ++cch) {
          const T v = data[(4 + cch) * plane + cell];
          if (v > best) {
            best = v;
            best_c = cch;
          }
        }
        const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(best)));
        if (score < conf_threshold) continue;
        const double cx = (static_cast<double>(j) + 0.5) * stride;
        const double cy = (static_cast<double>(i) + 0.5) * stride;
        auto dist = [&](std::size_t ch) {
          return std::max(static_cast<double>(data[ch * plane + cell]), 0.01);
        };
        Detection det;
        det.x1 = std::clamp(cx - dist(0) * stride, 0.0, input_size);
        det.y1 = std::clamp(cy - dist(1) * stride, 0.0, input_size);
        det.x2 = std::clamp(cx + dist(2) * stride, 0.0, input_size);
        det.y2 = std::clamp(cy + dist(3) * stride, 0.0, input_size);
        det.class_id = static_cast<int>(best_c);
        det.score = score;
        out.push_back(det);
      }
  }
  return out;
}

// Greedy per-class suppression in descending score order; ties broken by
// lower class id, then earlier input index.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw ConfigError("nms: IoU threshold must lie in (0,1)");
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].class_id != dets[b].class_id) return dets[a].class_id < dets[b].class_id;
    return a < b;
  });
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (box_iou(dets[i], dets[j]) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace y12
