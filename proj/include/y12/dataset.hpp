#pragma once

// Synthetic shape dataset: rectangles (class 0), disks (1), triangles (2) on
// a flat background. Fully seeded; per-sample seed is master ^ index so
// samples can be generated independently in any order.

#include <filesystem>

#include "y12/image.hpp"

namespace y12 {

constexpr std::size_t kToyClassCount = 3;

struct ToyLabel {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;  // normalized to [0,1]
};

struct ToySample {
  RawImage image;
  std::vector<ToyLabel> labels;
};

namespace detail {

inline void fill_rect(RawImage& img, std::size_t x1, std::size_t y1, std::size_t x2,
                      std::size_t y2, const std::uint8_t rgb[3]) {
  for (std::size_t y = y1; y < y2; ++y)
    for (std::size_t x = x1; x < x2; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.rgb[(y * img.width + x) * 3 + c] = rgb[c];
}

inline void fill_disk(RawImage& img, double cx, double cy, double rx, double ry,
                      const std::uint8_t rgb[3]) {
  const std::size_t y1 = static_cast<std::size_t>(std::max(0.0, cy - ry));
  const std::size_t y2 = std::min(img.height, static_cast<std::size_t>(cy + ry) + 1);
  for (std::size_t y = y1; y < y2; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      const double dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0)
        for (std::size_t c = 0; c < 3; ++c) img.rgb[(y * img.width + x) * 3 + c] = rgb[c];
    }
}

inline void fill_triangle(RawImage& img, std::size_t x1, std::size_t y1, std::size_t x2,
                          std::size_t y2, const std::uint8_t rgb[3]) {
  // Isosceles, apex centered on the top edge; scanline width grows linearly.
  const double h = static_cast<double>(y2 - y1);
  const double cx = (static_cast<double>(x1) + static_cast<double>(x2)) / 2.0;
  const double half_base = (static_cast<double>(x2) - static_cast<double>(x1)) / 2.0;
  for (std::size_t y = y1; y < y2; ++y) {
    const double t = (y - y1 + 0.5) / h;
    const double half = half_base * t;
    const std::size_t xa = static_cast<std::size_t>(std::max(0.0, std::ceil(cx - half)));
    const std::size_t xb =
        std::min(img.width, static_cast<std::size_t>(std::max(0.0, std::floor(cx + half))));
    for (std::size_t x = xa; x < xb; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.rgb[(y * img.width + x) * 3 + c] = rgb[c];
  }
}

}  // namespace detail

inline ToySample gen_toy_sample(std::uint64_t seed, std::size_t image_size) {
  SplitMix64 rng(seed);
  ToySample sample;
  sample.image.width = image_size;
  sample.image.height = image_size;
  sample.image.rgb.assign(image_size * image_size * 3, 0);
  std::uint8_t bg[3];
  for (auto& c : bg) c = static_cast<std::uint8_t>(rng.below(100));  // dark background
  for (std::size_t i = 0; i < image_size * image_size; ++i)
    for (std::size_t c = 0; c < 3; ++c) sample.image.rgb[i * 3 + c] = bg[c];

  const std::size_t count = 1 + rng.below(5);
  for (std::size_t obj = 0; obj < count; ++obj) {
    ToyLabel label;
    label.class_id = static_cast<int>(rng.below(kToyClassCount));
    label.w = rng.uniform(0.12, 0.40);
    label.h = rng.uniform(0.12, 0.40);
    label.cx = rng.uniform(label.w / 2, 1.0 - label.w / 2);
    label.cy = rng.uniform(label.h / 2, 1.0 - label.h / 2);

    std::uint8_t rgb[3];
    for (auto& c : rgb) c = static_cast<std::uint8_t>(128 + rng.below(128));  // bright fill
    const double s = static_cast<double>(image_size);
    const std::size_t x1 = static_cast<std::size_t>((label.cx - label.w / 2) * s);
    const std::size_t y1 = static_cast<std::size_t>((label.cy - label.h / 2) * s);
    const std::size_t x2 = std::min(image_size, static_cast<std::size_t>((label.cx + label.w / 2) * s));
    const std::size_t y2 = std::min(image_size, static_cast<std::size_t>((label.cy + label.h / 2) * s));
    switch (label.class_id) {
      case 0: detail::fill_rect(sample.image, x1, y1, x2, y2, rgb); break;
      case 1:
        detail::fill_disk(sample.image, label.cx * s, label.cy * s, label.w * s / 2,
                          label.h * s / 2, rgb);
        break;
      default: detail::fill_triangle(sample.image, x1, y1, x2, y2, rgb); break;
    }
    sample.labels.push_back(label);
  }
  return sample;
}

inline std::vector<ToySample> gen_toy_dataset(std::size_t count, std::uint64_t seed,
                                              std::size_t image_size) {
  if (count < 1) throw ConfigError("gen_toy_dataset: count must be >= 1");
  std::vector<ToySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(gen_toy_sample(seed ^ static_cast<std::uint64_t>(i), image_size));
  return out;
}

// Label text format: one object per line, "class cx cy w h", normalized.
inline std::string labels_to_text(const std::vector<ToyLabel>& labels) {
  std::string out;
  char buf[128];
  for (const auto& l : labels) {
    std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f\n", l.class_id, l.cx, l.cy, l.w,
                  l.h);
    out += buf;
  }
  return out;
}

inline std::vector<ToyLabel> labels_from_text(const std::string& text) {
  std::vector<ToyLabel> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ToyLabel l;
    std::istringstream ls(line);
    if (!(ls >> l.class_id >> l.cx >> l.cy >> l.w >> l.h))
      throw ParseError("label file: malformed line " + std::to_string(lineno) + ": '" +
                       line + "'");
    out.push_back(l);
  }
  return out;
}

inline void write_toy_dataset(const std::vector<ToySample>& samples, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  char name[64];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu", i);
    save_ppm(samples[i].image, dir + "/" + name + ".ppm");
    std::ofstream os(dir + "/" + name + ".txt", std::ios::binary);
    if (!os) throw IoError("cannot write labels for sample " + std::to_string(i));
    os << labels_to_text(samples[i].labels);
  }
}

inline std::vector<ToySample> load_toy_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".ppm") stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw DataError("no .ppm samples found in '" + dir + "'");
  std::vector<ToySample> out;
  for (const auto& stem : stems) {
    ToySample s;
    s.image = load_ppm(dir + "/" + stem + ".ppm");
    std::ifstream is(dir + "/" + stem + ".txt", std::ios::binary);
    if (!is) throw IoError("missing label file for '" + stem + "'");
    std::ostringstream text;
    text << is.rdbuf();
    s.labels = labels_from_text(text.str());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace y12
