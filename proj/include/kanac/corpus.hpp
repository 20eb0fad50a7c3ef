// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kanac/model.hpp"

namespace kanac {

// Token file: "KANATOKS" | u32 vocab_size | u64 count | count x u32 ids, all
// little-endian.
inline constexpr std::string_view kCorpusMagic = "KANATOKS";

/// One token per byte, id = byte value.
std::vector<TokenId> encode_bytes(std::string_view text);
/// Inverse of encode_bytes; throws DomainError for ids above 255.
std::string decode_bytes(std::span<const TokenId> tokens);

std::string serialize_corpus(std::size_t vocab_size, std::span<const TokenId> tokens);
void write_corpus(const std::filesystem::path& path, std::size_t vocab_size, std::span<const TokenId> tokens);

/// Token stream cut into non-overlapping windows of seq_len + 1 tokens in
/// file order (inputs plus shifted targets). A trailing partial window is
/// dropped.
class Corpus {
 public:
  /// Throws ValidationError for out-of-vocabulary ids (with offset) or fewer
  /// than seq_len + 1 tokens.
  Corpus(std::size_t vocab_size, std::vector<TokenId> tokens, std::size_t seq_len, std::string path = {});

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t total_tokens() const { return tokens_.size(); }
  const std::string& path() const { return path_; }
  std::span<const TokenId> tokens() const { return tokens_; }

  std::size_t window_count() const { return tokens_.size() / (seq_len_ + 1); }
  std::span<const TokenId> window(std::size_t i) const;

  /// Same tokens, different window length.
  Corpus rewindowed(std::size_t seq_len) const;

  /// Batch of the given windows in order.
  TrainBatch batch(std::span<const std::size_t> windows) const;

  /// Hex SHA-256 over vocab size, seq_len and token ids.
  std::string digest() const;

 private:
  std::size_t vocab_size_;
  std::vector<TokenId> tokens_;
  std::size_t seq_len_;
  std::string path_;
};

Corpus parse_corpus(std::string_view bytes, std::size_t seq_len, std::string path = {});
Corpus load_corpus(const std::filesystem::path& path, std::size_t seq_len);

}  // namespace kanac
