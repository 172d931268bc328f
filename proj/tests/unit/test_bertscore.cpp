// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "longsum/bertscore.hpp"

using namespace longsum;

namespace {

EmbeddingTable one_hot(std::size_t n) {
  EmbeddingTable t(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(n, 0.0);
    v[i] = 1.0;
    t.set(static_cast<TokenId>(10 + i), v);
  }
  return t;
}

EmbeddingTable random_positive(std::size_t ids, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  EmbeddingTable t(dim);
  for (std::size_t i = 0; i < ids; ++i) {
    std::vector<double> v(dim);
    for (double& x : v) x = u(rng);
    t.set(static_cast<TokenId>(10 + i), v);
  }
  return t;
}

}  // namespace

TEST_CASE("cosine") {
  const std::vector<double> a = {1, 2, 3};
  CHECK(cosine(a, a) == doctest::Approx(1.0));
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine(std::vector<double>{1, 1}, std::vector<double>{1, 0}) == doctest::Approx(0.7071067811865476));
  CHECK_THROWS_AS(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), std::invalid_argument);
}

TEST_CASE("f1 and the reference score rows") {
  CHECK(std::abs(f1(0.736, 0.710) - 0.722) <= 0.001);
  CHECK(std::abs(f1(0.742, 0.680) - 0.710) <= 0.001);
  CHECK(std::abs(f1(0.752, 0.716) - 0.734) <= 0.001);
  for (double x : {0.0, 0.3, 1.0}) CHECK(f1(x, x) == doctest::Approx(x));
  CHECK(f1(0.0, 0.0) == 0.0);
}

TEST_CASE("pair scores") {
  const EmbeddingTable t = one_hot(3);
  const std::vector<TokenId> ab = {10, 11};
  auto r = score_pair(ab, ab, t);
  CHECK(r.precision == doctest::Approx(1.0));
  CHECK(r.recall == doctest::Approx(1.0));
  CHECK(r.f1 == doctest::Approx(1.0));
  r = score_pair(std::vector<TokenId>{10}, ab, t);
  CHECK(r.precision == doctest::Approx(1.0));
  CHECK(r.recall == doctest::Approx(0.5));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
  // specials are ignored
  r = score_pair(std::vector<TokenId>{1, 10, 2}, std::vector<TokenId>{10, 0}, t);
  CHECK(r.f1 == doctest::Approx(1.0));
  CHECK_THROWS_AS(score_pair(std::vector<TokenId>{1, 2}, ab, t), std::invalid_argument);
  CHECK_THROWS_AS(score_pair(ab, std::vector<TokenId>{99}, t), std::out_of_range);
}

TEST_CASE("corpus aggregation") {
  const EmbeddingTable t = one_hot(3);
  std::vector<TokenPair> pairs = {{{10}, {10, 11}}};
  auto single = score_corpus(pairs, t);
  auto direct = score_pair(pairs[0].first, pairs[0].second, t);
  CHECK(single.precision == direct.precision);
  CHECK(single.f1 == direct.f1);
  pairs = {{{10, 12}, {10}}, {{10, 11}, {10, 11}}};  // P = 0.5 and 1.0
  auto mean = score_corpus(pairs, t);
  CHECK(mean.precision == doctest::Approx(0.75));
  CHECK(mean.f1 == doctest::Approx(f1(mean.precision, mean.recall)));
  CHECK_THROWS_AS(score_corpus(std::vector<TokenPair>{}, t), std::invalid_argument);
}

TEST_CASE("symmetry, bounds and reference growth") {
  const EmbeddingTable t = random_positive(8, 4, 5);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<TokenId> id(10, 17);
  std::uniform_int_distribution<int> len(1, 8);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TokenId> a, b;
    for (int k = len(rng); k > 0; --k) a.push_back(id(rng));
    for (int k = len(rng); k > 0; --k) b.push_back(id(rng));
    const auto ab = score_pair(a, b, t);
    const auto ba = score_pair(b, a, t);
    CHECK(ab.precision == doctest::Approx(ba.recall).epsilon(1e-14));
    for (double x : {ab.precision, ab.recall, ab.f1}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0 + 1e-12);
    }
    auto grown = b;
    grown.push_back(a[static_cast<std::size_t>(trial) % a.size()]);
    CHECK(score_pair(a, grown, t).precision >= ab.precision - 1e-15);
  }
}

TEST_CASE("external embedding file") {
  const auto dir = std::filesystem::temp_directory_path() / "longsum_emb";
  std::filesystem::create_directories(dir);
  const std::vector<std::string> texts = {"ab ab ba"};
  const Tokenizer tok = Tokenizer::train(texts, 8);
  {
    std::ofstream out(dir / "emb.txt");
    out << "2\n" << "a\t1 0\n" << "b\t0 1\n" << "zz\t1 1\n";
  }
  const EmbeddingTable t = EmbeddingTable::load_file(dir / "emb.txt", tok);
  CHECK(t.dim() == 2);
  CHECK(t.size() == 2);
  {
    std::ofstream out(dir / "bad.txt");
    out << "2\n" << "a\t1 0 3\n";
  }
  CHECK_THROWS_WITH_AS(EmbeddingTable::load_file(dir / "bad.txt", tok), doctest::Contains("line 2"),
                       std::invalid_argument);
  EmbeddingTable z(2);
  CHECK_THROWS_AS(z.set(5, std::vector<double>{0, 0}), std::invalid_argument);
}

TEST_CASE("model embeddings give identical texts a perfect score") {
  ModelConfig c;
  c.vocab_size = 30;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 16;
  c.window = 4;
  c.max_enc_len = 32;
  c.max_dec_len = 8;
  const Parameters p = Parameters::initialize(c, 2, 0.5);
  const std::vector<Encoding> contexts = {make_encoding({1, 5, 6, 7, 2}), make_encoding({1, 7, 8, 2})};
  const EmbeddingTable t = EmbeddingTable::from_model(p, c, contexts);
  CHECK(t.contains(5));
  CHECK(t.contains(8));
  CHECK_FALSE(t.contains(9));
  const std::vector<TokenId> s = {5, 6, 7, 8};
  CHECK(score_pair(s, s, t).f1 == doctest::Approx(1.0).epsilon(1e-12));
}
