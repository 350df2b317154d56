#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "inavit/tensor.hpp"
#include "json.hpp"

namespace inavit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[9] = "INAVITCK";

struct Checkpoint {
  nlohmann::json config;  // opaque run configuration, hashed for eval checks
  std::map<std::string, Tensor<double>> params;  // float32 precision values
};

/// Layout: 8-byte magic, u64 manifest length, manifest JSON, then one
/// contiguous little-endian float32 payload. The manifest records names,
/// shapes, and element offsets in payload order (sorted by name).
inline void save_checkpoint(const std::string& path,
                            const nlohmann::json& config,
                            const std::map<std::string, Tensor<double>>& params) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = config;
  auto& list = manifest["params"] = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& [name, t] : params) {
    require(t.is2d(), "checkpoint: only 2-d parameters supported");
    list.push_back({{"name", name},
                    {"shape", t.shape},
                    {"offset", payload.size()}});
    for (double v : t.data) payload.push_back(static_cast<float>(v));
  }
  std::string m = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  uint64_t len = m.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  require(out.good(), "failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  require(in.gcount() == 8 && std::equal(magic, magic + 8, kCheckpointMagic),
          "not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  require(in.gcount() == sizeof(len), "truncated checkpoint header");
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  require(in.gcount() == static_cast<std::streamsize>(len),
          "truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad checkpoint manifest: ") + e.what());
  }
  require(manifest.value("format_version", 0) == 1,
          "unsupported checkpoint format version");

  std::vector<char> rest(std::istreambuf_iterator<char>(in), {});
  require(rest.size() % sizeof(float) == 0,
          "truncated payload: trailing partial value");
  size_t payload_count = rest.size() / sizeof(float);
  const float* payload = reinterpret_cast<const float*>(rest.data());

  Checkpoint ck;
  ck.config = manifest.value("config", nlohmann::json::object());
  size_t cursor = 0;
  std::string prev;
  for (const auto& entry : manifest.at("params")) {
    std::string name = entry.at("name").get<std::string>();
    auto shape = entry.at("shape").get<std::vector<int>>();
    size_t offset = entry.at("offset").get<size_t>();
    require(ck.params.count(name) == 0,
            "duplicate parameter in checkpoint: " + name);
    require(shape.size() == 2 && shape[0] > 0 && shape[1] > 0,
            "shape mismatch for " + name + ": bad shape entry");
    require(offset == cursor,
            "shape mismatch for " + (prev.empty() ? name : prev) +
                ": payload offsets disagree with shapes");
    size_t count = static_cast<size_t>(shape[0]) * static_cast<size_t>(shape[1]);
    require(offset + count <= payload_count,
            "truncated payload: " + name + " extends past end of file");
    Tensor<double> t(shape[0], shape[1]);
    for (size_t i = 0; i < count; ++i)
      t.data[i] = static_cast<double>(payload[offset + i]);
    ck.params.emplace(name, std::move(t));
    cursor = offset + count;
    prev = name;
  }
  require(cursor == payload_count,
          "checkpoint payload has trailing data past the last parameter");
  return ck;
}

}  // namespace inavit
