#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtpeft/nn/parameter.hpp"

namespace mtpeft {

using ag::Index;
using ag::Tensor;

// Layout: 8-byte magic, u32 format version, u64 header length, JSON header,
// then every parameter's values back to back in native byte order.
inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'P', 'E', 'F', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes from the start of the data section
  bool frozen = false;
};

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::string dtype;
  nlohmann::json meta;
  std::vector<CheckpointEntry> params;
  std::uint64_t data_start = 0;
};

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "float32" : "float64";
}

CheckpointHeader read_checkpoint_header(const std::string& path);

namespace detail {
void write_checkpoint_prefix(std::ofstream& out, const std::string& header);
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const nn::ParameterRegistry<Scalar>& reg, const nlohmann::json& meta) {
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : reg.params()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}, {"frozen", p.frozen()}});
    offset += static_cast<std::uint64_t>(p.tensor.numel()) * sizeof(Scalar);
  }
  nlohmann::json header{{"format_version", kCheckpointVersion}, {"dtype", dtype_name<Scalar>()}, {"meta", meta},
                        {"params", params}, {"data_bytes", offset}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  detail::write_checkpoint_prefix(out, header.dump());
  for (const auto& p : reg.params()) {
    out.write(reinterpret_cast<const char*>(p.tensor.value().data()),
              static_cast<std::streamsize>(p.tensor.numel() * static_cast<Index>(sizeof(Scalar))));
  }
  if (!out) throw Error("write failed for checkpoint '" + path + "'");
}

// Overwrites every registry parameter (values and frozen flags) from the
// archive. Names and shapes must match exactly; values convert between dtypes.
template <typename Scalar>
CheckpointHeader load_checkpoint(const std::string& path, nn::ParameterRegistry<Scalar>& reg) {
  auto header = read_checkpoint_header(path);
  if (header.params.size() != reg.size()) {
    throw ValueError("checkpoint '" + path + "' holds " + std::to_string(header.params.size()) + " parameters, model has " +
                     std::to_string(reg.size()));
  }
  const std::size_t width = header.dtype == "float32" ? 4 : 8;
  std::ifstream in(path, std::ios::binary);
  for (std::size_t i = 0; i < header.params.size(); ++i) {
    const auto& e = header.params[i];
    const auto& p = reg.params()[i];
    if (e.name != p.name) throw ValueError("checkpoint parameter " + std::to_string(i) + " is '" + e.name + "', model expects '" + p.name + "'");
    if (e.shape != p.tensor.shape()) throw ShapeError("load_checkpoint", e.shape, p.tensor.shape(), e.name);
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    std::vector<char> raw(n * width);
    in.seekg(static_cast<std::streamoff>(header.data_start + e.offset));
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!in) throw Error("checkpoint '" + path + "' is truncated at '" + e.name + "'");
    Tensor<Scalar> t = p.tensor;
    auto& v = t.mutable_value();
    for (std::size_t k = 0; k < n; ++k) {
      if (width == 4) {
        float f;
        std::memcpy(&f, raw.data() + 4 * k, 4);
        v[static_cast<Index>(k)] = static_cast<Scalar>(f);
      } else {
        double d;
        std::memcpy(&d, raw.data() + 8 * k, 8);
        v[static_cast<Index>(k)] = static_cast<Scalar>(d);
      }
    }
  }
  for (const auto& e : header.params) {
    reg.set_frozen([&](const std::string& n) { return n == e.name; }, e.frozen);
  }
  return header;
}

}  // namespace mtpeft
