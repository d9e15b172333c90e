#include "mtpeft/checkpoint.hpp"

namespace mtpeft {

namespace detail {

void write_checkpoint_prefix(std::ofstream& out, const std::string& header) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = header.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
}

}  // namespace detail

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw Error("'" + path + "' is not a checkpoint archive");
  if (version != kCheckpointVersion) {
    throw Error("checkpoint '" + path + "' has format version " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error("checkpoint '" + path + "' header is truncated");
  CheckpointHeader h;
  h.version = version;
  h.data_start = sizeof(magic) + sizeof(version) + sizeof(length) + length;
  try {
    auto j = nlohmann::json::parse(text);
    h.dtype = j.at("dtype").get<std::string>();
    if (h.dtype != "float32" && h.dtype != "float64") throw Error("checkpoint '" + path + "' has unknown dtype " + h.dtype);
    h.meta = j.at("meta");
    for (const auto& p : j.at("params")) {
      h.params.push_back({p.at("name").get<std::string>(), p.at("shape").get<Shape>(), p.at("offset").get<std::uint64_t>(),
                          p.at("frozen").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint '" + path + "' header is malformed: " + e.what());
  }
  return h;
}

}  // namespace mtpeft
