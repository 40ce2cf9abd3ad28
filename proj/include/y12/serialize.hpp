#pragma once

// Weight file: magic "YD12", u16 version, u16 scale code, u32 nc, u32 record
// count, then per tensor: u32 owning layer id, u8 dtype (0=fp32, 1=fp64),
// u8 rank, u32 extents, raw little-endian IEEE-754 payload. Records appear in
// graph order, tensors in declaration order within a layer, so a round trip
// is bit exact.

#include <cstdio>
#include <cstring>
#include <fstream>

#include "y12/model.hpp"

namespace y12 {

namespace detail {

constexpr char kWeightMagic[4] = {'Y', 'D', '1', '2'};
constexpr std::uint16_t kWeightVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

inline const char* dtype_name(std::uint8_t code) { return code == 0 ? "fp32" : "fp64"; }

template <typename V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is, const char* what) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw ParseError(std::string("weight file truncated while reading ") + what);
  return v;
}

inline std::uint16_t scale_code(Scale s) { return static_cast<std::uint16_t>(s); }

inline Scale scale_from_code(std::uint16_t code) {
  if (code > 4) throw ParseError("weight file: unknown scale code " + std::to_string(code));
  return static_cast<Scale>(code);
}

}  // namespace detail

template <typename T>
void save_weights(Model<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(detail::kWeightMagic, 4);
  detail::write_pod(os, detail::kWeightVersion);
  detail::write_pod(os, detail::scale_code(model.config().scale));
  detail::write_pod(os, static_cast<std::uint32_t>(model.config().nc));
  auto tensors = model.tensors();
  detail::write_pod(os, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [layer_id, param] : tensors) {
    detail::write_pod(os, static_cast<std::uint32_t>(layer_id));
    detail::write_pod(os, detail::dtype_code<T>());
    const auto& shape = param.tensor->shape();
    detail::write_pod(os, static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) detail::write_pod(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(param.tensor->data()),
             static_cast<std::streamsize>(param.tensor->numel() * sizeof(T)));
  }
  if (!os) throw IoError("write failure on '" + path + "'");
}

// Rebuilds the model described by the header and fills it with the stored
// payloads. Any structural mismatch names the offending layer.
template <typename T>
Model<T> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kWeightMagic, 4) != 0)
    throw ParseError("weight file '" + path + "': bad magic");
  const auto version = detail::read_pod<std::uint16_t>(is, "version");
  if (version != detail::kWeightVersion)
    throw ParseError("weight file version " + std::to_string(version) + " unsupported");
  const Scale scale = detail::scale_from_code(detail::read_pod<std::uint16_t>(is, "scale"));
  const auto nc = detail::read_pod<std::uint32_t>(is, "class count");
  const auto record_count = detail::read_pod<std::uint32_t>(is, "record count");

  Model<T> model = build_model<T>(ModelConfig::for_scale(scale, nc));
  auto tensors = model.tensors();
  if (tensors.size() != record_count)
    throw DataError("weight file holds " + std::to_string(record_count) +
                    " tensors but the " + std::string(1, scale_char(scale)) +
                    "-scale graph has " + std::to_string(tensors.size()));
  for (auto& [layer_id, param] : tensors) {
    const auto file_layer = detail::read_pod<std::uint32_t>(is, "layer id");
    if (file_layer != static_cast<std::uint32_t>(layer_id))
      throw DataError("weight file: expected layer " + std::to_string(layer_id) +
                      ", found " + std::to_string(file_layer));
    const auto dtype = detail::read_pod<std::uint8_t>(is, "dtype");
    if (dtype != detail::dtype_code<T>())
      throw DataError("weight file: layer " + std::to_string(layer_id) + " stores " +
                      detail::dtype_name(dtype) + " but the model expects " +
                      detail::dtype_name(detail::dtype_code<T>()));
    const auto rank = detail::read_pod<std::uint8_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape)
      d = detail::read_pod<std::uint32_t>(is, "extent");
    if (shape != param.tensor->shape()) {
      const auto& node = model.nodes().at(static_cast<std::size_t>(layer_id));
      throw DataError("weight file: shape " + shape_str(shape) + " does not match " +
                      shape_str(param.tensor->shape()) + " at layer " +
                      std::to_string(layer_id) + " (" + node.kind + ")");
    }
    auto& vals = param.tensor->values_mut();
    is.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(T)));
    if (!is)
      throw ParseError("weight file truncated in payload of layer " +
                       std::to_string(layer_id));
  }
  return model;
}

}  // namespace y12
