// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>

#include "kanac/corpus.hpp"
#include "kanac/errors.hpp"
#include "support/common.hpp"

using namespace kanac;

TEST_CASE("byte encoding") {
  CHECK(encode_bytes("AB") == std::vector<TokenId>{65, 66});
  CHECK(encode_bytes("").empty());
  std::string all;
  for (int i = 0; i < 256; ++i) all.push_back(static_cast<char>(i));
  CHECK(decode_bytes(encode_bytes(all)) == all);
  const std::vector<TokenId> bad{300};
  CHECK_THROWS_AS(decode_bytes(bad), DomainError);
}

TEST_CASE("windows are non-overlapping and drop the tail") {
  std::vector<TokenId> t(10);
  std::iota(t.begin(), t.end(), 0);
  const Corpus c(256, t, 4);
  REQUIRE(c.window_count() == 2);
  CHECK(std::vector<TokenId>(c.window(0).begin(), c.window(0).end()) == std::vector<TokenId>{0, 1, 2, 3, 4});
  CHECK(std::vector<TokenId>(c.window(1).begin(), c.window(1).end()) == std::vector<TokenId>{5, 6, 7, 8, 9});
  const std::vector<std::size_t> ids{1, 0};
  const auto b = c.batch(ids);
  CHECK(b.inputs.batch == 2);
  CHECK(b.inputs.seq == 4);
  CHECK(b.inputs.tokens == std::vector<TokenId>{5, 6, 7, 8, 0, 1, 2, 3});
  CHECK(b.targets == std::vector<TokenId>{6, 7, 8, 9, 1, 2, 3, 4});
  CHECK(c.rewindowed(2).window_count() == 3);
}

TEST_CASE("out-of-vocabulary ids are reported with their offset") {
  std::vector<TokenId> t(20, 1);
  t[13] = 300;
  try {
    Corpus c(256, t, 4);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("13") != std::string::npos);
  }
  CHECK_THROWS_AS(Corpus(256, std::vector<TokenId>(4, 0), 4), ValidationError);
}

TEST_CASE("file round trip is stable") {
  testing::TempDir dir;
  const auto tokens = encode_bytes(testing::synthetic_text(1000, 1));
  write_corpus(dir / "c.toks", 256, tokens);
  const auto a = load_corpus(dir / "c.toks", 16);
  const auto b = load_corpus(dir / "c.toks", 16);
  CHECK(a.window_count() == 1000 / 17);
  for (std::size_t i = 0; i < a.window_count(); ++i) {
    CHECK(std::equal(a.window(i).begin(), a.window(i).end(), b.window(i).begin()));
  }
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != a.rewindowed(8).digest());
  CHECK_THROWS_AS(parse_corpus("KANATOKX", 4), FormatError);
  auto bytes = serialize_corpus(256, tokens);
  CHECK_THROWS_AS(parse_corpus(bytes.substr(0, bytes.size() - 2), 4), FormatError);
}
