// SPDX-License-Identifier: Apache-2.0
#include "longsum/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace longsum {
namespace {

void check_shapes(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || k.cols() != v.cols()) {
    throw std::invalid_argument("attention: shape mismatch (Q " + std::to_string(q.rows()) + "x" +
                                std::to_string(q.cols()) + ", K " + std::to_string(k.rows()) + "x" +
                                std::to_string(k.cols()) + ", V " + std::to_string(v.rows()) + "x" +
                                std::to_string(v.cols()) + ")");
  }
}

}  // namespace

void AttentionSpec::validate(std::size_t n_keys) const {
  if (!pad_mask.empty() && pad_mask.size() != n_keys) {
    throw std::invalid_argument("attention: pad_mask length " + std::to_string(pad_mask.size()) +
                                " != " + std::to_string(n_keys));
  }
  if (!global_mask.empty() && global_mask.size() != n_keys) {
    throw std::invalid_argument("attention: global_mask length mismatch");
  }
  if (causal && std::any_of(global_mask.begin(), global_mask.end(), [](auto g) { return g != 0; })) {
    throw std::invalid_argument("attention: causal and global attention are exclusive");
  }
}

AttentionPattern sliding_window_pattern(std::size_t n, const AttentionSpec& spec) {
  if (spec.window % 2 != 0) throw std::invalid_argument("window: must be even");
  spec.validate(n);
  const std::size_t half = spec.window / 2;

  std::vector<std::uint32_t> globals;
  for (std::size_t j = 0; j < n; ++j) {
    if (spec.is_global(j) && spec.key_allowed(j)) globals.push_back(static_cast<std::uint32_t>(j));
  }

  AttentionPattern p;
  p.rows = n;
  p.cols_total = n;
  p.row_ptr.reserve(n + 1);
  p.cols.reserve(n * (std::min(spec.window, n) + 1 + globals.size()));
  p.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.is_global(i)) {
      const std::size_t hi = spec.causal ? i : n - 1;
      for (std::size_t j = 0; j <= hi; ++j) {
        if (spec.key_allowed(j)) p.cols.push_back(static_cast<std::uint32_t>(j));
      }
    } else {
      const std::size_t lo = i >= half ? i - half : 0;
      const std::size_t hi = spec.causal ? i : std::min(n - 1, i + half);
      auto g = globals.begin();
      // merge band [lo, hi] with the sorted global columns
      for (std::size_t j = lo; j <= hi; ++j) {
        while (g != globals.end() && *g < j) p.cols.push_back(*g++);
        if (g != globals.end() && *g == j) ++g;
        if (spec.key_allowed(j)) p.cols.push_back(static_cast<std::uint32_t>(j));
      }
      while (g != globals.end()) p.cols.push_back(*g++);
    }
    p.row_ptr.push_back(p.cols.size());
  }
  return p;
}

AttentionPattern dense_pattern(std::size_t n_queries, std::size_t n_keys, const AttentionSpec& spec) {
  spec.validate(n_keys);
  AttentionPattern p;
  p.rows = n_queries;
  p.cols_total = n_keys;
  p.row_ptr.reserve(n_queries + 1);
  p.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n_queries; ++i) {
    const std::size_t end = spec.causal ? std::min(i + 1, n_keys) : n_keys;
    for (std::size_t j = 0; j < end; ++j) {
      if (spec.key_allowed(j)) p.cols.push_back(static_cast<std::uint32_t>(j));
    }
    p.row_ptr.push_back(p.cols.size());
  }
  return p;
}

void pattern_attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                               const AttentionPattern& pattern, std::size_t n_heads, Matrix& out,
                               std::vector<double>& probs) {
  check_shapes(q, k, v);
  const auto nq = static_cast<std::size_t>(q.rows());
  const std::size_t dh = static_cast<std::size_t>(q.cols()) / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nnz = pattern.nnz();
  out.setZero(q.rows(), q.cols());
  probs.assign(n_heads * nnz, 0.0);

  std::vector<double> scores;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    const auto width = static_cast<Eigen::Index>(dh);
    double* head_probs = probs.data() + h * nnz;
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t begin = pattern.row_ptr[i];
      const std::size_t end = pattern.row_ptr[i + 1];
      if (begin == end) continue;
      const auto qi = q.row(static_cast<Eigen::Index>(i)).segment(c0, width);
      scores.resize(end - begin);
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t e = begin; e < end; ++e) {
        const double s = scale * qi.dot(k.row(pattern.cols[e]).segment(c0, width));
        scores[e - begin] = s;
        max_score = std::max(max_score, s);
      }
      double total = 0.0;
      for (double& s : scores) {
        s = std::exp(s - max_score);
        total += s;
      }
      auto oi = out.row(static_cast<Eigen::Index>(i)).segment(c0, width);
      for (std::size_t e = begin; e < end; ++e) {
        const double p = scores[e - begin] / total;
        head_probs[e] = p;
        oi.noalias() += p * v.row(pattern.cols[e]).segment(c0, width);
      }
    }
  }
}

void pattern_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionPattern& pattern, std::size_t n_heads,
                                const std::vector<double>& probs, const Matrix& dout, Matrix& dq,
                                Matrix& dk, Matrix& dv) {
  const auto nq = static_cast<std::size_t>(q.rows());
  const std::size_t dh = static_cast<std::size_t>(q.cols()) / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nnz = pattern.nnz();

  std::vector<double> dp;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    const auto width = static_cast<Eigen::Index>(dh);
    const double* head_probs = probs.data() + h * nnz;
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t begin = pattern.row_ptr[i];
      const std::size_t end = pattern.row_ptr[i + 1];
      if (begin == end) continue;
      const auto row = static_cast<Eigen::Index>(i);
      const auto doi = dout.row(row).segment(c0, width);
      dp.resize(end - begin);
      double weighted = 0.0;
      for (std::size_t e = begin; e < end; ++e) {
        const auto j = static_cast<Eigen::Index>(pattern.cols[e]);
        const double p = head_probs[e];
        const double g = doi.dot(v.row(j).segment(c0, width));
        dp[e - begin] = g;
        weighted += p * g;
        dv.row(j).segment(c0, width).noalias() += p * doi;
      }
      auto dqi = dq.row(row).segment(c0, width);
      const auto qi = q.row(row).segment(c0, width);
      for (std::size_t e = begin; e < end; ++e) {
        const auto j = static_cast<Eigen::Index>(pattern.cols[e]);
        const double ds = head_probs[e] * (dp[e - begin] - weighted) * scale;
        dqi.noalias() += ds * k.row(j).segment(c0, width);
        dk.row(j).segment(c0, width).noalias() += ds * qi;
      }
    }
  }
}

Matrix masked_attention_reference(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const std::vector<std::vector<bool>>& allowed) {
  check_shapes(q, k, v);
  const Eigen::Index nq = q.rows();
  const Eigen::Index nk = k.rows();
  if (static_cast<Eigen::Index>(allowed.size()) != nq) {
    throw std::invalid_argument("attention: mask rows mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix scores = (q * k.transpose()) * scale;
  Matrix out = Matrix::Zero(nq, v.cols());
  for (Eigen::Index i = 0; i < nq; ++i) {
    if (static_cast<Eigen::Index>(allowed[i].size()) != nk) {
      throw std::invalid_argument("attention: mask cols mismatch");
    }
    double max_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < nk; ++j) {
      if (allowed[i][j]) max_score = std::max(max_score, scores(i, j));
    }
    if (!std::isfinite(max_score)) continue;
    RowVector weights = RowVector::Zero(nk);
    for (Eigen::Index j = 0; j < nk; ++j) {
      if (allowed[i][j]) weights(j) = std::exp(scores(i, j) - max_score);
    }
    weights /= weights.sum();
    out.row(i) = weights * v;
  }
  return out;
}

Matrix full_attention_reference(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionSpec& spec) {
  check_shapes(q, k, v);
  spec.validate(static_cast<std::size_t>(k.rows()));
  std::vector<std::vector<bool>> allowed(static_cast<std::size_t>(q.rows()),
                                         std::vector<bool>(static_cast<std::size_t>(k.rows())));
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    for (std::size_t j = 0; j < allowed[i].size(); ++j) {
      allowed[i][j] = spec.key_allowed(j) && (!spec.causal || j <= i);
    }
  }
  return masked_attention_reference(q, k, v, allowed);
}

Matrix sliding_window_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionSpec& spec) {
  check_shapes(q, k, v);
  if (q.rows() != k.rows()) throw std::invalid_argument("attention: self-attention needs Q and K of equal length");
  const AttentionPattern pattern = sliding_window_pattern(static_cast<std::size_t>(q.rows()), spec);
  Matrix out;
  std::vector<double> probs;
  pattern_attention_forward(q, k, v, pattern, 1, out, probs);
  return out;
}

AttentionMap sliding_window_weights(const Matrix& q, const Matrix& k, const AttentionSpec& spec) {
  if (q.rows() != k.rows() || q.cols() != k.cols()) throw std::invalid_argument("attention: shape mismatch");
  AttentionMap map{sliding_window_pattern(static_cast<std::size_t>(q.rows()), spec), {}};
  Matrix out;
  const Matrix v = Matrix::Zero(k.rows(), k.cols());
  pattern_attention_forward(q, k, v, map.pattern, 1, out, map.probs);
  return map;
}

}  // namespace longsum
