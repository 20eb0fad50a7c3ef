// SPDX-License-Identifier: Apache-2.0
#include "kanac/corpus.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "kanac/digest.hpp"
#include "kanac/errors.hpp"

namespace kanac {

namespace {

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

}  // namespace

std::vector<TokenId> encode_bytes(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char ch : text) out.push_back(static_cast<unsigned char>(ch));
  return out;
}

std::string decode_bytes(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t > 255) throw DomainError(fmt::format("token {} is not a byte", t));
    out.push_back(static_cast<char>(t));
  }
  return out;
}

std::string serialize_corpus(std::size_t vocab_size, std::span<const TokenId> tokens) {
  std::string out(kCorpusMagic);
  put_le(out, static_cast<std::uint32_t>(vocab_size));
  put_le(out, static_cast<std::uint64_t>(tokens.size()));
  out.reserve(out.size() + 4 * tokens.size());
  for (TokenId t : tokens) put_le(out, static_cast<std::uint32_t>(t));
  return out;
}

void write_corpus(const std::filesystem::path& path, std::size_t vocab_size, std::span<const TokenId> tokens) {
  const std::string bytes = serialize_corpus(vocab_size, tokens);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(fmt::format("write to {} failed", path.string()));
}

Corpus::Corpus(std::size_t vocab_size, std::vector<TokenId> tokens, std::size_t seq_len, std::string path)
    : vocab_size_(vocab_size), tokens_(std::move(tokens)), seq_len_(seq_len), path_(std::move(path)) {
  if (vocab_size_ == 0) throw ValidationError("corpus: vocab_size must be >= 1");
  if (seq_len_ == 0) throw ValidationError("corpus: seq_len must be >= 1");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] >= vocab_size_) {
      throw ValidationError(
          fmt::format("corpus: token id {} at offset {} is outside vocab_size {}", tokens_[i], i, vocab_size_));
    }
  }
  if (tokens_.size() < seq_len_ + 1) {
    throw ValidationError(
        fmt::format("corpus: {} tokens cannot fill one window of {} tokens", tokens_.size(), seq_len_ + 1));
  }
}

std::span<const TokenId> Corpus::window(std::size_t i) const {
  if (i >= window_count()) throw DomainError(fmt::format("window {} out of range ({})", i, window_count()));
  return std::span<const TokenId>(tokens_).subspan(i * (seq_len_ + 1), seq_len_ + 1);
}

Corpus Corpus::rewindowed(std::size_t seq_len) const { return Corpus(vocab_size_, tokens_, seq_len, path_); }

TrainBatch Corpus::batch(std::span<const std::size_t> windows) const {
  TrainBatch b;
  b.inputs.batch = windows.size();
  b.inputs.seq = seq_len_;
  b.inputs.tokens.reserve(windows.size() * seq_len_);
  b.targets.reserve(windows.size() * seq_len_);
  for (std::size_t w : windows) {
    const auto win = window(w);
    b.inputs.tokens.insert(b.inputs.tokens.end(), win.begin(), win.end() - 1);
    b.targets.insert(b.targets.end(), win.begin() + 1, win.end());
  }
  return b;
}

std::string Corpus::digest() const {
  Sha256 h;
  h.update(fmt::format("vocab={};seq_len={};", vocab_size_, seq_len_));
  h.update(serialize_corpus(vocab_size_, tokens_));
  return h.hex();
}

Corpus parse_corpus(std::string_view bytes, std::size_t seq_len, std::string path) {
  constexpr std::size_t kFixed = 8 + 4 + 8;
  if (bytes.size() < kFixed) throw FormatError("corpus: file shorter than the fixed prefix");
  if (bytes.substr(0, 8) != kCorpusMagic) throw FormatError("corpus: bad magic");
  const auto vocab = get_le<std::uint32_t>(bytes, 8);
  const auto count = get_le<std::uint64_t>(bytes, 12);
  if (count > (bytes.size() - kFixed) / 4) {
    throw FormatError(fmt::format("corpus: header declares {} tokens, file holds {}", count, (bytes.size() - kFixed) / 4));
  }
  std::vector<TokenId> tokens(count);
  for (std::size_t i = 0; i < count; ++i) tokens[i] = get_le<std::uint32_t>(bytes, kFixed + 4 * i);
  return Corpus(vocab, std::move(tokens), seq_len, std::move(path));
}

Corpus load_corpus(const std::filesystem::path& path, std::size_t seq_len) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_corpus(ss.str(), seq_len, path.string());
}

}  // namespace kanac
