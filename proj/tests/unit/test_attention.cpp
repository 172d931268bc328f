// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "longsum/attention.hpp"

using namespace longsum;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Allowed set written directly from the rule, independent of the pattern builder.
std::vector<std::vector<bool>> window_rule(std::size_t n, const AttentionSpec& spec) {
  std::vector<std::vector<bool>> a(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool real = spec.pad_mask.empty() || spec.pad_mask[j];
      const bool gi = !spec.global_mask.empty() && spec.global_mask[i];
      const bool gj = !spec.global_mask.empty() && spec.global_mask[j];
      const auto dist = static_cast<std::size_t>(std::abs(static_cast<long>(i) - static_cast<long>(j)));
      a[i][j] = real && (gi || gj || dist <= spec.window / 2);
    }
  }
  return a;
}

}  // namespace

TEST_CASE("single position returns the value row") {
  Matrix q(1, 3), k(1, 3), v(1, 3);
  q << 0.3, -1, 2;
  k << 1, 1, 1;
  v << 4, 5, 6;
  AttentionSpec spec;
  CHECK(full_attention_reference(q, k, v, spec) == v);
  CHECK(sliding_window_attention(q, k, v, spec) == v);
}

TEST_CASE("identical keys average the unmasked values") {
  std::mt19937_64 rng(1);
  const Matrix q = random_matrix(rng, 4, 2);
  Matrix k(4, 2);
  k.rowwise() = RowVector::Constant(2, 0.7);
  const Matrix v = random_matrix(rng, 4, 2);
  AttentionSpec spec;
  spec.pad_mask = {1, 1, 0, 1};
  const Matrix out = full_attention_reference(q, k, v, spec);
  const RowVector mean = (v.row(0) + v.row(1) + v.row(3)) / 3.0;
  for (int i = 0; i < 4; ++i) CHECK((out.row(i) - mean).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("hand-computed 2x2 softmax") {
  const Matrix q = Matrix::Identity(2, 2);
  const Matrix k = Matrix::Identity(2, 2);
  Matrix v(2, 2);
  v << 1, 2, 3, 4;
  const Matrix out = full_attention_reference(q, k, v, AttentionSpec{});
  CHECK(out(0, 0) == doctest::Approx(1.6604769013466862).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(2.6604769013466862).epsilon(1e-14));
  CHECK(out(1, 0) == doctest::Approx(2.3395230986533138).epsilon(1e-14));
  CHECK(out(1, 1) == doctest::Approx(3.3395230986533138).epsilon(1e-14));
}

TEST_CASE("fully masked rows are zero and shapes are checked") {
  Matrix q = Matrix::Ones(2, 2);
  AttentionSpec spec;
  spec.pad_mask = {0, 0};
  CHECK(full_attention_reference(q, q, q, spec).isZero());
  CHECK_THROWS_AS(full_attention_reference(q, Matrix::Ones(2, 3), q, spec), std::invalid_argument);
  CHECK_THROWS_AS(sliding_window_attention(q, q, Matrix::Ones(3, 2), AttentionSpec{}), std::invalid_argument);
  AttentionSpec odd;
  odd.window = 3;
  CHECK_THROWS_AS(sliding_window_attention(q, q, q, odd), std::invalid_argument);
}

TEST_CASE("wide window equals full attention") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_int_distribution<int> dim(1, 16);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = len(rng);
    const int d = dim(rng);
    const Matrix q = random_matrix(rng, n, d), k = random_matrix(rng, n, d), v = random_matrix(rng, n, d);
    AttentionSpec spec;
    spec.window = 2 * static_cast<std::size_t>(n) + 2 * static_cast<std::size_t>(trial % 3);
    CHECK((sliding_window_attention(q, k, v, spec) - full_attention_reference(q, k, v, spec)).cwiseAbs().maxCoeff() <=
          1e-10);
  }
}

TEST_CASE("narrow window equals banded dense attention") {
  std::mt19937_64 rng(3);
  const Matrix q = random_matrix(rng, 6, 4), k = random_matrix(rng, 6, 4), v = random_matrix(rng, 6, 4);
  AttentionSpec spec;
  spec.window = 2;
  std::vector<std::vector<bool>> band(6, std::vector<bool>(6));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) band[i][j] = std::abs(i - j) <= 1;
  CHECK((sliding_window_attention(q, k, v, spec) - masked_attention_reference(q, k, v, band)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("globals and padding follow the attention rule") {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.2);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(trial);
    const Matrix q = random_matrix(rng, static_cast<Eigen::Index>(n), 3);
    const Matrix k = random_matrix(rng, static_cast<Eigen::Index>(n), 3);
    const Matrix v = random_matrix(rng, static_cast<Eigen::Index>(n), 3);
    AttentionSpec spec;
    spec.window = 2 * (1 + static_cast<std::size_t>(trial % 4));
    spec.global_mask.assign(n, 0);
    spec.pad_mask.assign(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      spec.global_mask[i] = coin(rng) ? 1 : 0;
      if (i + 3 >= n) spec.pad_mask[i] = 0;
    }
    const Matrix sparse = sliding_window_attention(q, k, v, spec);
    const Matrix dense = masked_attention_reference(q, k, v, window_rule(n, spec));
    CHECK((sparse - dense).cwiseAbs().maxCoeff() < 1e-12);

    const AttentionMap map = sliding_window_weights(q, k, spec);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t e = map.pattern.row_ptr[i]; e < map.pattern.row_ptr[i + 1]; ++e) sum += map.probs[e];
      if (map.pattern.row_ptr[i] != map.pattern.row_ptr[i + 1]) CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("pattern size is linear in n") {
  AttentionSpec spec;
  spec.window = 64;
  const auto a = sliding_window_pattern(1024, spec);
  const auto b = sliding_window_pattern(2048, spec);
  CHECK(a.nnz() <= 1024 * 65);
  const double ratio = static_cast<double>(b.memory_elements()) / static_cast<double>(a.memory_elements());
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("multi-head backward matches finite differences") {
  std::mt19937_64 rng(21);
  const Eigen::Index n = 7, d = 6;
  const std::size_t heads = 2;
  Matrix q = random_matrix(rng, n, d), k = random_matrix(rng, n, d), v = random_matrix(rng, n, d);
  const Matrix w = random_matrix(rng, n, d);  // loss = sum(out .* w)
  AttentionSpec spec;
  spec.window = 2;
  spec.global_mask = {1, 0, 0, 0, 0, 0, 0};
  const AttentionPattern p = sliding_window_pattern(static_cast<std::size_t>(n), spec);
  auto loss = [&](const Matrix& qq, const Matrix& kk, const Matrix& vv) {
    Matrix out;
    std::vector<double> probs;
    pattern_attention_forward(qq, kk, vv, p, heads, out, probs);
    return (out.array() * w.array()).sum();
  };
  Matrix out;
  std::vector<double> probs;
  pattern_attention_forward(q, k, v, p, heads, out, probs);
  Matrix dq = Matrix::Zero(n, d), dk = Matrix::Zero(n, d), dv = Matrix::Zero(n, d);
  pattern_attention_backward(q, k, v, p, heads, probs, w, dq, dk, dv);
  const double h = 1e-6;
  for (Matrix* m : {&q, &k, &v}) {
    const Matrix& g = m == &q ? dq : m == &k ? dk : dv;
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const double saved = m->data()[i];
      m->data()[i] = saved + h;
      const double up = loss(q, k, v);
      m->data()[i] = saved - h;
      const double down = loss(q, k, v);
      m->data()[i] = saved;
      CHECK(g.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("causal dense pattern") {
  AttentionSpec spec;
  spec.causal = true;
  const auto p = dense_pattern(4, 4, spec);
  CHECK(p.nnz() == 10);
  spec.global_mask = {1, 0, 0, 0};
  CHECK_THROWS_AS(dense_pattern(4, 4, spec), std::invalid_argument);
}
