// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "kanac/model.hpp"

namespace kanac {

// Binary layout (all integers little-endian):
//   "KANACKPT" | u32 version | u64 header_len | header JSON | zero pad to 64
//   | payload
// The header holds config, metadata and a manifest of {name, shape, offset,
// length} sorted by name; offsets are relative to the payload start and
// 64-byte aligned. Tensor data is raw little-endian float32.
inline constexpr std::string_view kCheckpointMagic = "KANACKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

/// Metadata key under which the payload SHA-256 is stored.
inline constexpr std::string_view kPayloadDigestKey = "payload_sha256";

/// Writes `ckpt` and returns the payload digest. Throws InternalError (and
/// writes nothing) when tensors do not match the config, IoError on I/O
/// failure.
std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Serialized bytes exactly as save_checkpoint writes them.
std::string serialize_checkpoint(const Checkpoint& ckpt);

/// Throws FormatError for bad magic, version, header or truncated payload,
/// ValidationError when the manifest disagrees with the config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Digest of the payload that serialize_checkpoint would produce.
std::string checkpoint_digest(const Checkpoint& ckpt);

}  // namespace kanac
