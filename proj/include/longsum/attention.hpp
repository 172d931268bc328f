// SPDX-License-Identifier: Apache-2.0
//
// Sliding-window + global attention over a sparse row pattern, plus a dense
// reference used as a test oracle.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "longsum/tensor.hpp"

namespace longsum {

struct AttentionSpec {
  /// Full window width w (even); query i sees keys j with |i - j| <= w/2.
  std::size_t window = 64;
  /// Key mask, 1 = real token. Empty means every key is real.
  std::vector<std::uint8_t> pad_mask;
  /// 1 marks a global position. Must be empty when `causal` is set.
  std::vector<std::uint8_t> global_mask;
  bool causal = false;

  void validate(std::size_t n_keys) const;
  bool key_allowed(std::size_t j) const { return pad_mask.empty() || pad_mask[j] != 0; }
  bool is_global(std::size_t j) const { return !global_mask.empty() && global_mask[j] != 0; }
};

/// Compressed sparse rows: row i attends to columns cols[row_ptr[i] .. row_ptr[i+1]).
struct AttentionPattern {
  std::size_t rows = 0;
  std::size_t cols_total = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> cols;

  std::size_t nnz() const { return cols.size(); }
  std::size_t memory_elements() const { return row_ptr.size() + cols.size(); }
};

/// Band |i-j| <= w/2 over unmasked keys, plus global columns; global rows see
/// every unmasked key. Size is O(n * (w + g)).
AttentionPattern sliding_window_pattern(std::size_t n, const AttentionSpec& spec);

/// Every unmasked key (j <= i when causal).
AttentionPattern dense_pattern(std::size_t n_queries, std::size_t n_keys, const AttentionSpec& spec);

/// Multi-head attention over a pattern. q: [nq x H*dh], k, v: [nk x H*dh].
/// `probs` receives H * nnz weights (head-major). Rows with no allowed key
/// produce zeros.
void pattern_attention_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                               const AttentionPattern& pattern, std::size_t n_heads, Matrix& out,
                               std::vector<double>& probs);

/// Accumulates into dq, dk, dv (must be pre-sized).
void pattern_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionPattern& pattern, std::size_t n_heads,
                                const std::vector<double>& probs, const Matrix& dout, Matrix& dq,
                                Matrix& dk, Matrix& dv);

/// softmax(Q K^T / sqrt(d) + mask) V computed densely; window ignored.
Matrix full_attention_reference(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionSpec& spec);

/// Dense attention with an explicit allow-matrix [nq x nk].
Matrix masked_attention_reference(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const std::vector<std::vector<bool>>& allowed);

/// Single-head sliding-window attention, Q, K, V: [n x d].
Matrix sliding_window_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                const AttentionSpec& spec);

struct AttentionMap {
  AttentionPattern pattern;
  std::vector<double> probs;
};

/// Debug hook: the normalized weights sliding_window_attention would use.
AttentionMap sliding_window_weights(const Matrix& q, const Matrix& k, const AttentionSpec& spec);

}  // namespace longsum
