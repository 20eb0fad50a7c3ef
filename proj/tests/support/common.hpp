// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "kanac/model.hpp"

namespace kanac::testing {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 11;
  c.n_layers = 1;
  c.hidden_dim = 8;
  c.n_query_heads = 2;
  c.n_kv_heads = 1;
  c.head_dim = 4;
  c.intermediate_dim = 16;
  c.max_seq_len = 16;
  return c;
}

// Random small but valid config; head counts respect GQA divisibility.
inline ModelConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ModelConfig c;
  c.vocab_size = pick(5, 40);
  c.n_layers = pick(1, 3);
  c.hidden_dim = pick(4, 24);
  c.n_kv_heads = pick(1, 3);
  c.n_query_heads = c.n_kv_heads * pick(1, 3);
  c.head_dim = 2 * pick(1, 4);
  c.intermediate_dim = pick(4, 40);
  c.max_seq_len = 16;
  c.tied_embeddings = pick(0, 3) == 0;
  return c;
}

// Overwrites every weight (norm gains included) with N(0, std).
inline void scramble(Checkpoint& ck, std::uint64_t seed, double std = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, static_cast<float>(std));
  for (auto& t : tensor_refs(ck.config, ck.weights))
    for (auto& v : *t.data) v = nd(rng);
}

inline TokenBatch random_batch(const ModelConfig& c, std::size_t batch, std::size_t seq, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> ud(0, static_cast<TokenId>(c.vocab_size - 1));
  TokenBatch b{batch, seq, {}};
  for (std::size_t i = 0; i < batch * seq; ++i) b.tokens.push_back(ud(rng));
  return b;
}

inline std::vector<TokenId> random_targets(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> ud(0, static_cast<TokenId>(c.vocab_size - 1));
  std::vector<TokenId> t(n);
  for (auto& v : t) v = ud(rng);
  return t;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// Seeded English-like text from a small template grammar. The structure is
// regular enough for a tiny byte-level model to learn in a few hundred steps.
inline std::string synthetic_text(std::size_t bytes, std::uint64_t seed) {
  static const std::vector<std::string> det = {"the", "a", "every", "one", "that"};
  static const std::vector<std::string> adj = {"small", "red", "old", "quiet", "bright", "green", "tall"};
  static const std::vector<std::string> noun = {"cat", "dog", "bird", "tree", "house", "river", "stone", "child"};
  static const std::vector<std::string> verb = {"sees", "finds", "likes", "follows", "hears", "moves"};
  static const std::vector<std::string> prep = {"near", "under", "behind", "over"};
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  auto np = [&]() {
    std::string s = pick(det) + " ";
    if (rng() % 2) s += pick(adj) + " ";
    return s + pick(noun);
  };
  std::string out;
  while (out.size() < bytes) {
    std::string s = np() + " " + pick(verb) + " " + np();
    if (rng() % 3 == 0) s += " " + pick(prep) + " " + np();
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
    out += s + ".\n";
  }
  out.resize(bytes);
  return out;
}

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("kanac_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace kanac::testing
