// SPDX-License-Identifier: Apache-2.0
//
// Greedy cosine matching between candidate and reference token embeddings.
#pragma once

#include <filesystem>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "longsum/model.hpp"
#include "longsum/tensor.hpp"
#include "longsum/tokenizer.hpp"

namespace longsum {

struct ScoreReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Throws std::invalid_argument on a zero vector or a length mismatch.
double cosine(std::span<const double> u, std::span<const double> v);

/// 2pr / (p + r); 0 when p + r == 0.
double f1(double p, double r);

/// Token id -> unit vector.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  /// Stores v / |v|; throws on zero vectors or wrong dimension.
  void set(TokenId id, std::span<const double> v);
  bool contains(TokenId id) const { return vectors_.count(id) != 0; }
  /// Throws std::out_of_range for unknown ids.
  const RowVector& at(TokenId id) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  /// Per-id mean of final encoder states over every occurrence in `contexts`.
  static EmbeddingTable from_model(const Parameters& params, const ModelConfig& config,
                                   std::span<const Encoding> contexts);

  /// First line: the dimension. Then `token<TAB>f1 f2 ... fd` per line.
  /// Tokens unknown to the tokenizer are skipped.
  static EmbeddingTable load_file(const std::filesystem::path& path, const Tokenizer& tokenizer);

 private:
  std::size_t dim_ = 0;
  std::unordered_map<TokenId, RowVector> vectors_;
};

/// PAD, SOS and EOS are dropped before matching; an empty remainder is an error.
ScoreReport score_pair(std::span<const TokenId> candidate, std::span<const TokenId> reference,
                       const EmbeddingTable& table);

using TokenPair = std::pair<std::vector<TokenId>, std::vector<TokenId>>;

/// Mean P and mean R over pairs; F1 is their harmonic mean.
ScoreReport score_corpus(std::span<const TokenPair> pairs, const EmbeddingTable& table);

}  // namespace longsum
