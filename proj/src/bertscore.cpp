// SPDX-License-Identifier: Apache-2.0
#include "longsum/bertscore.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace longsum {
namespace {

std::vector<TokenId> content_tokens(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  for (TokenId id : ids) {
    if (id != Tokenizer::kPad && id != Tokenizer::kSos && id != Tokenizer::kEos) out.push_back(id);
  }
  return out;
}

double greedy_side(const std::vector<TokenId>& from, const std::vector<TokenId>& to, const EmbeddingTable& t) {
  double total = 0.0;
  for (TokenId a : from) {
    double best = -std::numeric_limits<double>::infinity();
    for (TokenId b : to) best = std::max(best, t.at(a).dot(t.at(b)));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine: zero-norm vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

void EmbeddingTable::set(TokenId id, std::span<const double> v) {
  if (v.size() != dim_) throw std::invalid_argument("embedding: dimension mismatch");
  RowVector row = ConstRowVectorMap(v.data(), static_cast<Eigen::Index>(v.size()));
  const double norm = row.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw std::invalid_argument("embedding: zero or non-finite vector for id " + std::to_string(id));
  }
  vectors_[id] = row / norm;
}

const RowVector& EmbeddingTable::at(TokenId id) const {
  auto it = vectors_.find(id);
  if (it == vectors_.end()) throw std::out_of_range("embedding: no vector for id " + std::to_string(id));
  return it->second;
}

EmbeddingTable EmbeddingTable::from_model(const Parameters& params, const ModelConfig& config,
                                          std::span<const Encoding> contexts) {
  std::unordered_map<TokenId, std::pair<RowVector, std::size_t>> sums;
  for (const auto& enc : contexts) {
    const Matrix states = encode_document(params, config, enc);
    for (std::size_t i = 0; i < enc.size(); ++i) {
      if (enc.attention_mask[i] == 0) continue;
      auto [it, fresh] = sums.try_emplace(enc.ids[i], RowVector::Zero(static_cast<Eigen::Index>(config.d_model)), 0);
      it->second.first += states.row(static_cast<Eigen::Index>(i));
      ++it->second.second;
    }
  }
  EmbeddingTable table(config.d_model);
  for (auto& [id, acc] : sums) {
    const RowVector mean = acc.first / static_cast<double>(acc.second);
    table.set(id, std::span<const double>(mean.data(), static_cast<std::size_t>(mean.size())));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load_file(const std::filesystem::path& path, const Tokenizer& tokenizer) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("embeddings: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("embeddings: missing dimension header");
  std::size_t dim = 0;
  try {
    dim = std::stoul(line);
  } catch (const std::exception&) {
    throw std::invalid_argument("embeddings: line 1: bad dimension header");
  }
  if (dim == 0) throw std::invalid_argument("embeddings: line 1: dimension must be >= 1");
  EmbeddingTable table(dim);
  std::size_t line_no = 1;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::invalid_argument("embeddings: line " + std::to_string(line_no) + ": missing tab");
    }
    std::istringstream fields(line.substr(tab + 1));
    values.clear();
    double x = 0.0;
    while (fields >> x) values.push_back(x);
    if (!fields.eof() || values.size() != dim) {
      throw std::invalid_argument("embeddings: line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(dim) + " numbers");
    }
    if (auto id = tokenizer.find(line.substr(0, tab))) table.set(*id, values);
  }
  return table;
}

ScoreReport score_pair(std::span<const TokenId> candidate, std::span<const TokenId> reference,
                       const EmbeddingTable& table) {
  const auto cand = content_tokens(candidate);
  const auto ref = content_tokens(reference);
  if (cand.empty()) throw std::invalid_argument("candidate: empty after removing special tokens");
  if (ref.empty()) throw std::invalid_argument("reference: empty after removing special tokens");
  ScoreReport r;
  r.precision = greedy_side(cand, ref, table);
  r.recall = greedy_side(ref, cand, table);
  r.f1 = f1(r.precision, r.recall);
  return r;
}

ScoreReport score_corpus(std::span<const TokenPair> pairs, const EmbeddingTable& table) {
  if (pairs.empty()) throw std::invalid_argument("pairs: empty corpus");
  ScoreReport out;
  for (const auto& [cand, ref] : pairs) {
    const ScoreReport r = score_pair(cand, ref, table);
    out.precision += r.precision;
    out.recall += r.recall;
  }
  out.precision /= static_cast<double>(pairs.size());
  out.recall /= static_cast<double>(pairs.size());
  out.f1 = f1(out.precision, out.recall);
  return out;
}

}  // namespace longsum
