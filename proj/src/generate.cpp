// SPDX-License-Identifier: Apache-2.0
#include "longsum/generate.hpp"

#include <string>

namespace longsum {
namespace {

void check_limits(const ModelConfig& config, const GenConfig& gen) {
  gen.validate();
  if (gen.max_output_len > config.max_dec_len) {
    throw std::invalid_argument("max_output_len: " + std::to_string(gen.max_output_len) + " exceeds max_dec_len " +
                                std::to_string(config.max_dec_len));
  }
}

}  // namespace

ModelScorer::ModelScorer(const Parameters& params, const ModelConfig& config, const Encoding& source)
    : enc_states_(encode_document(params, config, source)),
      session_(params, config, enc_states_, source.attention_mask) {}

Generation greedy_decode(const Parameters& params, const ModelConfig& config, const Encoding& source,
                         const GenConfig& gen) {
  check_limits(config, gen);
  return greedy_decode(ModelScorer(params, config, source), gen);
}

Generation beam_search(const Parameters& params, const ModelConfig& config, const Encoding& source,
                       const GenConfig& gen) {
  check_limits(config, gen);
  return beam_search(ModelScorer(params, config, source), gen);
}

}  // namespace longsum
