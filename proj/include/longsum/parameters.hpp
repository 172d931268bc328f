// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "longsum/tensor.hpp"

namespace longsum {

struct ModelConfig {
  std::size_t vocab_size = 8000;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 256;
  /// Full attention window; each token sees w/2 neighbours on either side.
  std::size_t window = 64;
  std::size_t max_enc_len = 8192;
  std::size_t max_dec_len = 512;
  double dropout = 0.0;
  bool tie_embeddings = false;
  double layer_norm_eps = 1e-5;

  std::size_t head_dim() const { return d_model / n_heads; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LayerNormWeights {
  Tensor gamma;
  Tensor beta;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardWeights {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerWeights {
  LayerNormWeights attn_norm;
  AttentionWeights self_attn;
  LayerNormWeights ff_norm;
  FeedForwardWeights ff;
};

struct DecoderLayerWeights {
  LayerNormWeights self_norm;
  AttentionWeights self_attn;
  LayerNormWeights cross_norm;
  AttentionWeights cross_attn;
  LayerNormWeights ff_norm;
  FeedForwardWeights ff;
};

/// Every learnable array of the encoder-decoder. Gradients use the same type.
struct Parameters {
  Tensor token_embedding;  // [vocab, d_model]
  Tensor enc_positions;    // [max_enc_len, d_model]
  Tensor dec_positions;    // [max_dec_len, d_model]
  std::vector<EncoderLayerWeights> encoder;
  LayerNormWeights enc_final_norm;
  std::vector<DecoderLayerWeights> decoder;
  LayerNormWeights dec_final_norm;
  Tensor lm_head;       // [d_model, vocab]; empty when embeddings are tied
  Tensor lm_head_bias;  // [vocab]

  /// All arrays zero (layer-norm scales included).
  static Parameters zeros(const ModelConfig& config);
  /// Seeded random initialization: projections N(0, 1/fan_in), embeddings
  /// N(0, init_std^2), layer-norm scales 1, biases 0.
  static Parameters initialize(const ModelConfig& config, std::uint64_t seed, double init_std = 0.02);

  /// Stable (name, tensor) listing in checkpoint order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Throws std::invalid_argument when a tensor's shape disagrees with `config`.
  void check_shapes(const ModelConfig& config) const;
  void set_zero();
  /// this += scale * other (same layout)
  void add_scaled(const Parameters& other, double scale);
};

}  // namespace longsum
