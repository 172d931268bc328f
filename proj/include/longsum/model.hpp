// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder transformer with sliding-window + global encoder attention.
// Pre-layer-norm blocks, GELU feed-forward, learned absolute positions.
// Forward and backward passes are written out by hand; with gradient
// checkpointing the per-layer activations are dropped after the forward pass
// and rebuilt from the stored layer inputs during backward.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "longsum/activation_meter.hpp"
#include "longsum/parameters.hpp"
#include "longsum/tensor.hpp"
#include "longsum/tokenizer.hpp"

namespace longsum {

struct Example {
  Encoding source;
  /// SOS y_1 ... y_k EOS (optionally padded). The decoder reads ids[0..m-1)
  /// and predicts ids[1..m).
  Encoding target;
};

/// Raised when the loss is not finite. `layer` indexes encoder layers first
/// (0 .. E-1), then decoder layers (E .. E+D-1); E+D stands for the output head.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t layer, const std::string& where)
      : std::runtime_error("non-finite values first seen in " + where + " (layer index " +
                           std::to_string(layer) + ")"),
        layer_(layer) {}
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

enum class EncoderAttention { sliding_window, full_reference };

struct ForwardOptions {
  /// Enables dropout (when config.dropout > 0) with masks derived from `dropout_seed`.
  bool training = false;
  std::uint64_t dropout_seed = 0;
  /// Replace the sparse encoder attention by dense full attention (test oracle).
  EncoderAttention encoder_attention = EncoderAttention::sliding_window;
};

struct LossOptions : ForwardOptions {
  bool checkpointing = false;
  ActivationMeter* meter = nullptr;
};

struct LossResult {
  double loss = 0.0;
  std::size_t target_tokens = 0;
  Parameters grads;
};

/// Final encoder states [n x d_model]. Throws std::invalid_argument when the
/// encoding is longer than max_enc_len.
Matrix encode_document(const Parameters& params, const ModelConfig& config, const Encoding& enc,
                       const ForwardOptions& options = {});

/// Logits [m x vocab] for the target prefix, with cross-attention over the
/// unmasked encoder states. An empty `enc_mask` means every state is real.
Matrix decoder_forward(const Parameters& params, const ModelConfig& config, const Matrix& enc_states,
                       std::span<const std::uint8_t> enc_mask, std::span<const TokenId> target_ids,
                       const ForwardOptions& options = {});

/// Mean token cross-entropy over non-pad target positions and its exact gradient.
LossResult loss_and_gradients(const Parameters& params, const ModelConfig& config, const Example& example,
                              const LossOptions& options = {});

struct SequenceLoss {
  double total_nll = 0.0;
  std::size_t tokens = 0;
  double mean() const { return tokens == 0 ? 0.0 : total_nll / static_cast<double>(tokens); }
};

/// Forward-only teacher-forced loss.
SequenceLoss sequence_loss(const Parameters& params, const ModelConfig& config, const Example& example);

/// Incremental decoder with cached self-attention keys/values, for generation.
class DecoderSession {
 public:
  struct State {
    std::vector<Matrix> self_k;
    std::vector<Matrix> self_v;
    std::size_t length = 0;  // tokens fed so far, SOS included
    RowVector log_probs;     // next-token distribution
  };

  DecoderSession(const Parameters& params, const ModelConfig& config, const Matrix& enc_states,
                 std::span<const std::uint8_t> enc_mask);

  /// State after feeding SOS.
  State start() const;
  State extend(const State& state, TokenId token) const;
  std::size_t vocab_size() const { return config_.vocab_size; }

 private:
  void step(State& state, TokenId token) const;

  const Parameters& params_;
  ModelConfig config_;
  std::vector<Matrix> cross_k_;
  std::vector<Matrix> cross_v_;
  std::vector<std::uint32_t> cross_keys_;
};

/// Numerically stable log-softmax of one row.
RowVector log_softmax(const RowVector& logits);

}  // namespace longsum
