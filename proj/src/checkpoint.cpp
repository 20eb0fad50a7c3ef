// SPDX-License-Identifier: Apache-2.0
#include "kanac/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "kanac/digest.hpp"
#include "kanac/errors.hpp"

namespace kanac {

namespace {

std::size_t align_up(std::size_t n) { return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment; }

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(std::string_view in, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

struct Encoded {
  std::string payload;
  nlohmann::json manifest;
};

Encoded encode_payload(const Checkpoint& ckpt) {
  check_shapes(ckpt.config, ckpt.weights);
  Encoded e;
  e.manifest = nlohmann::json::array();
  for (const auto& r : tensor_refs(ckpt.config, ckpt.weights)) {
    e.payload.resize(align_up(e.payload.size()), '\0');
    const std::size_t offset = e.payload.size();
    for (float f : *r.data) put_le(e.payload, std::bit_cast<std::uint32_t>(f));
    e.manifest.push_back({{"name", r.name}, {"shape", r.shape}, {"offset", offset}, {"length", r.numel() * 4}});
  }
  return e;
}

}  // namespace

std::string checkpoint_digest(const Checkpoint& ckpt) { return sha256_hex(encode_payload(ckpt).payload); }

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Encoded e = encode_payload(ckpt);
  auto metadata = ckpt.metadata;
  metadata[std::string(kPayloadDigestKey)] = sha256_hex(e.payload);
  const nlohmann::json header{{"config", ckpt.config}, {"metadata", metadata}, {"tensors", e.manifest}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  out.resize(align_up(out.size()), '\0');
  out += e.payload;
  return out;
}

std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.close();
  if (!f) throw IoError(fmt::format("write to {} failed", path.string()));
  return deserialize_checkpoint(bytes).metadata.at(std::string(kPayloadDigestKey));
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  constexpr std::size_t kFixed = 8 + 4 + 8;
  if (bytes.size() < kFixed) throw FormatError("checkpoint: file shorter than the fixed prefix");
  if (bytes.substr(0, 8) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) throw FormatError(fmt::format("checkpoint: unsupported version {}", version));
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kFixed) throw FormatError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kFixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("checkpoint: malformed header: {}", e.what()));
  }
  if (!header.is_object() || !header.contains("config") || !header.contains("tensors")) {
    throw FormatError("checkpoint: header lacks config or tensors");
  }

  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  if (header.contains("metadata")) ckpt.metadata = header.at("metadata").get<std::map<std::string, std::string>>();

  const std::size_t payload_start = align_up(kFixed + header_len);
  const std::string_view payload =
      payload_start <= bytes.size() ? bytes.substr(payload_start) : std::string_view{};

  std::map<std::string, nlohmann::json> manifest;
  for (const auto& entry : header.at("tensors")) manifest[entry.at("name").get<std::string>()] = entry;

  ckpt.weights.layers.resize(ckpt.config.n_layers);
  auto refs = tensor_refs(ckpt.config, ckpt.weights);
  if (manifest.size() != refs.size()) {
    for (const auto& [name, _] : manifest) {
      if (std::none_of(refs.begin(), refs.end(), [&](const auto& r) { return r.name == name; })) {
        throw ValidationError(fmt::format("checkpoint: tensor {} is not implied by the config", name));
      }
    }
  }
  for (auto& r : refs) {
    const auto it = manifest.find(r.name);
    if (it == manifest.end()) throw ValidationError(fmt::format("checkpoint: tensor {} missing from manifest", r.name));
    const auto& entry = it->second;
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != r.shape) {
      throw ValidationError(fmt::format("checkpoint: tensor {} has shape [{}], config implies [{}]", r.name,
                                        fmt::join(shape, ", "), fmt::join(r.shape, ", ")));
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto length = entry.at("length").get<std::size_t>();
    if (length != r.numel() * 4) {
      throw ValidationError(fmt::format("checkpoint: tensor {} declares {} bytes, expected {}", r.name, length,
                                        r.numel() * 4));
    }
    if (offset > payload.size() || length > payload.size() - offset) {
      throw FormatError(fmt::format("checkpoint: payload truncated in tensor {}", r.name));
    }
    r.data->resize(r.numel());
    for (std::size_t i = 0; i < r.numel(); ++i) {
      (*r.data)[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload, offset + 4 * i));
    }
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace kanac
