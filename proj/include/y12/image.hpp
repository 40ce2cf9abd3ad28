#pragma once

// PPM (P6, maxval 255) ingestion, the letterbox transform to a square network
// input, and its inverse for mapping boxes back to source coordinates.

#include <fstream>

#include "y12/tensor.hpp"

namespace y12 {

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

namespace detail {

// Reads a whitespace/comment-delimited PPM header token, tracking the offset
// for error messages.
inline std::string ppm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size())
    throw ParseError("ppm: truncated header at byte offset " + std::to_string(pos));
  std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

}  // namespace detail

inline RawImage load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 2) throw ParseError("ppm: file shorter than a magic number");
  const std::string magic = bytes.substr(0, 2);
  if (magic == "P3")
    throw ParseError("ppm: ASCII P3 not supported; convert to binary P6");
  if (magic != "P6")
    throw ParseError("ppm: bad magic '" + magic + "' at byte offset 0, expected P6");
  std::size_t pos = 2;
  const auto parse_uint = [&](const char* what) {
    const std::size_t at = pos;
    const std::string tok = detail::ppm_token(bytes, pos);
    try {
      return static_cast<std::size_t>(std::stoull(tok));
    } catch (const std::exception&) {
      throw ParseError(std::string("ppm: invalid ") + what + " '" + tok +
                       "' at byte offset " + std::to_string(at));
    }
  };
  RawImage img;
  img.width = parse_uint("width");
  img.height = parse_uint("height");
  const std::size_t maxval = parse_uint("maxval");
  if (img.width == 0 || img.height == 0)
    throw ParseError("ppm: zero-sized image " + std::to_string(img.width) + "x" +
                     std::to_string(img.height));
  if (maxval != 255)
    throw ParseError("ppm: maxval " + std::to_string(maxval) +
                     " unsupported; only 8-bit (255) images are handled");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ParseError("ppm: missing whitespace after maxval at byte offset " +
                     std::to_string(pos));
  ++pos;  // single whitespace separates header from payload
  const std::size_t need = img.width * img.height * 3;
  if (bytes.size() - pos < need)
    throw ParseError("ppm: payload truncated at byte offset " + std::to_string(bytes.size()) +
                     "; expected " + std::to_string(pos + need) + " bytes");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline void save_ppm(const RawImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw IoError("write failure on '" + path + "'");
}

template <typename T>
struct LetterboxedImage {
  Tensor<T> tensor;  // [1,3,S,S], values in [0,1]
  double scale = 1.0;
  std::size_t pad_left = 0, pad_top = 0;
  std::size_t content_w = 0, content_h = 0;
  std::size_t orig_w = 0, orig_h = 0;

  // Network coordinates back to source pixels (clamped to source bounds).
  void to_original(double& x, double& y) const {
    x = std::clamp((x - static_cast<double>(pad_left)) / scale, 0.0,
                   static_cast<double>(orig_w));
    y = std::clamp((y - static_cast<double>(pad_top)) / scale, 0.0,
                   static_cast<double>(orig_h));
  }
};

// Aspect-preserving nearest-neighbor resize onto an S x S canvas padded with
// 114-gray; odd padding remainders go to the right/bottom.
template <typename T>
LetterboxedImage<T> letterbox(const RawImage& img, std::size_t target = 640) {
  if (target % 32 != 0)
    throw ConfigError("letterbox: target " + std::to_string(target) +
                      " must be divisible by 32");
  if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3)
    throw DataError("letterbox: empty or inconsistent image buffer");
  LetterboxedImage<T> out;
  out.orig_w = img.width;
  out.orig_h = img.height;
  out.scale = std::min(static_cast<double>(target) / static_cast<double>(img.width),
                       static_cast<double>(target) / static_cast<double>(img.height));
  out.content_w = std::min<std::size_t>(
      target, static_cast<std::size_t>(std::llround(img.width * out.scale)));
  out.content_h = std::min<std::size_t>(
      target, static_cast<std::size_t>(std::llround(img.height * out.scale)));
  out.pad_left = (target - out.content_w) / 2;
  out.pad_top = (target - out.content_h) / 2;

  const T pad_value = static_cast<T>(114.0 / 255.0);
  std::vector<T> data(3 * target * target, pad_value);
  for (std::size_t y = 0; y < out.content_h; ++y) {
    const std::size_t sy = std::min<std::size_t>(
        img.height - 1,
        static_cast<std::size_t>((y + 0.5) * static_cast<double>(img.height) /
                                 static_cast<double>(out.content_h)));
    for (std::size_t x = 0; x < out.content_w; ++x) {
      const std::size_t sx = std::min<std::size_t>(
          img.width - 1,
          static_cast<std::size_t>((x + 0.5) * static_cast<double>(img.width) /
                                   static_cast<double>(out.content_w)));
      const std::uint8_t* px = img.rgb.data() + (sy * img.width + sx) * 3;
      for (std::size_t c = 0; c < 3; ++c)
        data[c * target * target + (y + out.pad_top) * target + (x + out.pad_left)] =
            static_cast<T>(px[c] / 255.0);
    }
  }
  out.tensor = Tensor<T>({1, 3, target, target}, std::move(data));
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const RawImage& img) {
  std::vector<T> data(3 * img.width * img.height);
  const std::size_t plane = img.width * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      data[c * plane + i] = static_cast<T>(img.rgb[i * 3 + c] / 255.0);
  return Tensor<T>({3, img.height, img.width}, std::move(data));
}

}  // namespace y12
