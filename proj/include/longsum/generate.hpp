// SPDX-License-Identifier: Apache-2.0
//
// Greedy and length-synchronous beam-search decoding over any scorer that
// exposes next-token log-probabilities for an incrementally extended state.
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "longsum/model.hpp"
#include "longsum/tensor.hpp"
#include "longsum/tokenizer.hpp"

namespace longsum {

struct GenConfig {
  std::size_t beam_size = 2;
  /// Generated tokens, EOS included.
  std::size_t max_output_len = 512;
  /// Finished scores are divided by length^alpha; 0 ranks by raw log-probability.
  double length_penalty = 0.0;

  void validate() const {
    if (beam_size < 1) throw std::invalid_argument("beam_size: must be >= 1");
    if (max_output_len < 1) throw std::invalid_argument("max_output_len: must be >= 1");
    if (!std::isfinite(length_penalty)) throw std::invalid_argument("length_penalty: must be finite");
  }
};

struct Generation {
  std::vector<TokenId> tokens;  // SOS excluded; EOS included when emitted
  double log_prob = 0.0;        // cumulative
  double score = 0.0;           // log_prob / length^alpha
  bool finished_with_eos = false;
};

template <class S>
concept Scorer = requires(const S& s, const typename S::State& state, TokenId token) {
  { s.start() } -> std::same_as<typename S::State>;
  { s.extend(state, token) } -> std::same_as<typename S::State>;
  { s.log_probs(state) } -> std::convertible_to<const RowVector&>;
  { s.eos() } -> std::convertible_to<TokenId>;
};

namespace detail {

inline double normalized(double log_prob, std::size_t length, double alpha) {
  return alpha == 0.0 ? log_prob : log_prob / std::pow(static_cast<double>(length), alpha);
}

// Lowest id wins ties.
inline TokenId argmax(const RowVector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace detail

template <Scorer S>
Generation greedy_decode(const S& scorer, const GenConfig& config) {
  config.validate();
  Generation out;
  auto state = scorer.start();
  while (true) {
    const RowVector& lp = scorer.log_probs(state);
    const TokenId tok = detail::argmax(lp);
    out.tokens.push_back(tok);
    out.log_prob += lp(tok);
    if (tok == scorer.eos()) {
      out.finished_with_eos = true;
      break;
    }
    if (out.tokens.size() == config.max_output_len) break;
    state = scorer.extend(state, tok);
  }
  out.score = detail::normalized(out.log_prob, out.tokens.size(), config.length_penalty);
  return out;
}

template <Scorer S>
Generation beam_search(const S& scorer, const GenConfig& config) {
  config.validate();
  using State = typename S::State;
  struct Hyp {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    State state;
  };
  struct Candidate {
    double log_prob;
    std::size_t hyp;
    TokenId token;
  };

  const std::size_t k = config.beam_size;
  const double alpha = config.length_penalty;
  std::vector<Hyp> beams;
  beams.push_back(Hyp{{}, 0.0, scorer.start()});
  std::vector<Generation> pool;
  std::vector<Candidate> cands;

  for (std::size_t length = 1; length <= config.max_output_len && !beams.empty(); ++length) {
    cands.clear();
    for (std::size_t h = 0; h < beams.size(); ++h) {
      const RowVector& lp = scorer.log_probs(beams[h].state);
      for (Eigen::Index t = 0; t < lp.size(); ++t) {
        if (lp(t) == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({beams[h].log_prob + lp(t), h, static_cast<TokenId>(t)});
      }
    }
    const auto before = [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    };
    // at most k finished and k unfinished candidates are consumed per step
    const std::size_t top = std::min(cands.size(), 2 * k);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(top), cands.end(), before);

    std::vector<Hyp> next;
    std::size_t finished_here = 0;
    for (std::size_t c = 0; c < top && next.size() < k && finished_here < k; ++c) {
      const Candidate& cand = cands[c];
      std::vector<TokenId> tokens = beams[cand.hyp].tokens;
      tokens.push_back(cand.token);
      const bool eos = cand.token == scorer.eos();
      if (eos || length == config.max_output_len) {
        Generation g;
        g.tokens = std::move(tokens);
        g.log_prob = cand.log_prob;
        g.score = detail::normalized(cand.log_prob, length, alpha);
        g.finished_with_eos = eos;
        pool.push_back(std::move(g));
        ++finished_here;
      } else {
        next.push_back(Hyp{std::move(tokens), cand.log_prob, scorer.extend(beams[cand.hyp].state, cand.token)});
      }
    }
    beams = std::move(next);

    if (!pool.empty() && !beams.empty()) {
      double best_pool = -std::numeric_limits<double>::infinity();
      for (const auto& g : pool) best_pool = std::max(best_pool, g.score);
      // log-probabilities only decrease, so an unfinished beam can at best
      // keep its current sum; with alpha > 0 the most favourable length is the cap
      const double bound_len = alpha > 0.0 ? static_cast<double>(config.max_output_len) : 1.0;
      double best_open = -std::numeric_limits<double>::infinity();
      for (const auto& h : beams) {
        best_open = std::max(best_open, alpha == 0.0 ? h.log_prob : h.log_prob / std::pow(bound_len, alpha));
      }
      if (best_pool >= best_open) break;
    }
  }

  if (pool.empty()) throw std::logic_error("beam_search: no finished hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].score > pool[best].score) best = i;
  }
  return pool[best];
}

/// Scorer over the encoder-decoder with a KV-cached decoder.
class ModelScorer {
 public:
  using State = DecoderSession::State;

  ModelScorer(const Parameters& params, const ModelConfig& config, const Encoding& source);

  State start() const { return session_.start(); }
  State extend(const State& s, TokenId t) const { return session_.extend(s, t); }
  const RowVector& log_probs(const State& s) const { return s.log_probs; }
  TokenId eos() const { return Tokenizer::kEos; }

 private:
  Matrix enc_states_;
  DecoderSession session_;
};

/// Throws std::invalid_argument when max_output_len exceeds the decoder's position table.
Generation greedy_decode(const Parameters& params, const ModelConfig& config, const Encoding& source,
                         const GenConfig& gen);
Generation beam_search(const Parameters& params, const ModelConfig& config, const Encoding& source,
                       const GenConfig& gen);

}  // namespace longsum
