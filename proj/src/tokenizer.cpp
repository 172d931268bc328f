// SPDX-License-Identifier: Apache-2.0
#include "longsum/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "longsum/utf8.hpp"

namespace longsum {
namespace {

// Stand-in for a literal U+2581 in the input; never part of the vocabulary.
constexpr char32_t kLiteralMarker = 0xFFFF;

const char* const kSpecialTokens[] = {"<pad>", "<s>", "</s>", "<unk>"};

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case ' ': out += "\\s"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s, std::size_t line_no) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i >= s.size()) throw std::runtime_error("line " + std::to_string(line_no) + ": dangling escape");
    switch (s[i]) {
      case '\\': out.push_back('\\'); break;
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 's': out.push_back(' '); break;
      default: throw std::runtime_error("line " + std::to_string(line_no) + ": unknown escape");
    }
  }
  return out;
}

std::string to_utf8(char32_t cp) {
  std::string s;
  utf8::append(s, cp);
  return s;
}

}  // namespace

Encoding make_encoding(std::vector<TokenId> ids, std::span<const std::size_t> global_positions) {
  Encoding enc;
  enc.length = ids.size();
  enc.attention_mask.assign(ids.size(), 1);
  enc.global_mask.assign(ids.size(), 0);
  for (std::size_t p : global_positions) {
    if (p < ids.size()) enc.global_mask[p] = 1;
  }
  enc.ids = std::move(ids);
  return enc;
}

std::vector<std::u32string> pretokenize(std::string_view text) {
  std::vector<std::u32string> chunks;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) chunks.push_back(std::move(current));
    current.clear();
  };
  for (char32_t cp : utf8::decode(text)) {
    if (cp == U'\n') {
      flush();
      chunks.emplace_back(1, U'\n');
    } else if (cp == U' ') {
      flush();
      current.push_back(Tokenizer::kSpaceMarker);
    } else {
      current.push_back(cp == Tokenizer::kSpaceMarker ? kLiteralMarker : cp);
    }
  }
  flush();
  return chunks;
}

Tokenizer::Tokenizer() {
  for (const char* s : kSpecialTokens) tokens_.emplace_back(s);
}

TokenId Tokenizer::add_token(std::string token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

void Tokenizer::add_merge(TokenId left, TokenId right) {
  const TokenId merged = add_token(tokens_[left] + tokens_[right]);
  merge_rank_.emplace(std::make_pair(left, right), std::make_pair(merges_.size(), merged));
  merges_.emplace_back(left, right);
}

const std::string& Tokenizer::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Tokenizer::find(std::string_view token) const {
  for (std::size_t i = 0; i < kNumSpecial; ++i) {
    if (token == kSpecialTokens[i]) return static_cast<TokenId>(i);
  }
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

Tokenizer Tokenizer::train(std::span<const std::string> texts, std::size_t vocab_size) {
  std::map<std::u32string, std::int64_t> chunk_counts;
  for (const auto& text : texts) {
    for (auto& chunk : pretokenize(text)) ++chunk_counts[chunk];
  }
  if (chunk_counts.empty()) throw std::invalid_argument("corpus: cannot train a tokenizer on empty text");

  std::set<char32_t> alphabet;
  for (const auto& [chunk, count] : chunk_counts) {
    for (char32_t cp : chunk) {
      if (cp != kLiteralMarker) alphabet.insert(cp);
    }
  }
  if (vocab_size <= alphabet.size() + kNumSpecial) {
    throw std::invalid_argument("vocab_size: " + std::to_string(vocab_size) +
                                " must exceed alphabet size + 4 special tokens (" +
                                std::to_string(alphabet.size() + kNumSpecial) + ")");
  }

  Tokenizer tok;
  for (char32_t cp : alphabet) tok.add_token(to_utf8(cp));

  struct Word {
    std::vector<TokenId> symbols;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (char32_t cp : chunk) {
      w.symbols.push_back(cp == kLiteralMarker ? kUnk : *tok.find(to_utf8(cp)));
    }
    words.push_back(std::move(w));
  }

  using Pair = std::pair<TokenId, TokenId>;
  std::unordered_map<Pair, std::int64_t, PairHash> counts;
  std::unordered_map<Pair, std::unordered_set<std::size_t>, PairHash> where;

  auto for_each_pair = [](const Word& w, auto&& fn) {
    for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
      if (w.symbols[i] == kUnk || w.symbols[i + 1] == kUnk) continue;
      fn(Pair{w.symbols[i], w.symbols[i + 1]});
    }
  };

  struct Entry {
    std::int64_t count;
    Pair pair;
  };
  // Max-heap by count; ties resolve to the lexicographically smallest pair.
  auto worse = [&tok](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = tok.tokens_[a.pair.first];
    const auto& bl = tok.tokens_[b.pair.first];
    if (al != bl) return al > bl;
    return tok.tokens_[a.pair.second] > tok.tokens_[b.pair.second];
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);

  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    for_each_pair(words[wi], [&](const Pair& p) {
      counts[p] += words[wi].count;
      where[p].insert(wi);
    });
  }
  for (const auto& [p, c] : counts) heap.push({c, p});

  while (tok.tokens_.size() < vocab_size && !heap.empty()) {
    const Entry top = heap.top();
    heap.pop();
    auto it = counts.find(top.pair);
    if (it == counts.end() || it->second != top.count) continue;  // stale
    if (top.count < 2) break;

    const Pair best = top.pair;
    tok.add_merge(best.first, best.second);
    const TokenId merged = tok.merge_rank_.at(best).second;

    std::unordered_set<Pair, PairHash> touched;
    std::vector<std::size_t> affected(where[best].begin(), where[best].end());
    std::sort(affected.begin(), affected.end());
    for (std::size_t wi : affected) {
      Word& w = words[wi];
      for_each_pair(w, [&](const Pair& p) {
        counts[p] -= w.count;
        touched.insert(p);
      });
      std::vector<TokenId> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best.first && w.symbols[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
      for_each_pair(w, [&](const Pair& p) {
        counts[p] += w.count;
        where[p].insert(wi);
        touched.insert(p);
      });
    }
    for (const Pair& p : touched) {
      auto c = counts.find(p);
      if (c->second <= 0) {
        counts.erase(c);
        where.erase(p);
      } else {
        heap.push({c->second, p});
      }
    }
  }
  return tok;
}

void Tokenizer::encode_chunk(std::u32string_view chunk, std::vector<TokenId>& out) const {
  std::vector<TokenId> symbols;
  symbols.reserve(chunk.size());
  for (char32_t cp : chunk) {
    if (cp == kLiteralMarker) {
      symbols.push_back(kUnk);
      continue;
    }
    auto id = find(to_utf8(cp));
    symbols.push_back(id ? *id : kUnk);
  }
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    TokenId best_left = -1;
    TokenId best_right = -1;
    TokenId best_merged = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_left = symbols[i];
        best_right = symbols[i + 1];
        best_merged = it->second.second;
      }
    }
    if (best_merged < 0) break;
    std::size_t w = 0;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == best_left && symbols[i + 1] == best_right) {
        symbols[w++] = best_merged;
        ++i;
      } else {
        symbols[w++] = symbols[i];
      }
    }
    symbols.resize(w);
  }
  out.insert(out.end(), symbols.begin(), symbols.end());
}

std::vector<TokenId> Tokenizer::encode_subwords(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& chunk : pretokenize(text)) encode_chunk(chunk, ids);
  return ids;
}

Encoding Tokenizer::encode(std::string_view text, std::size_t max_len, bool pad_to_max,
                           std::span<const std::size_t> global_positions) const {
  if (max_len < 2) throw std::invalid_argument("max_len: must be at least 2");
  std::vector<TokenId> sub = encode_subwords(text);
  const std::size_t keep = std::min(sub.size(), max_len - 2);
  std::vector<TokenId> ids;
  ids.reserve(pad_to_max ? max_len : keep + 2);
  ids.push_back(kSos);
  ids.insert(ids.end(), sub.begin(), sub.begin() + static_cast<std::ptrdiff_t>(keep));
  ids.push_back(kEos);
  Encoding enc = make_encoding(std::move(ids), global_positions);
  if (pad_to_max) {
    enc.ids.resize(max_len, kPad);
    enc.attention_mask.resize(max_len, 0);
    enc.global_mask.resize(max_len, 0);
  }
  return enc;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    const std::string& piece = token(id);
    if (id == kPad || id == kSos || id == kEos) continue;
    if (id == kUnk) {
      utf8::append(out, 0xFFFD);
      continue;
    }
    out += piece;
  }
  const std::string marker = to_utf8(kSpaceMarker);
  std::string result;
  result.reserve(out.size());
  for (std::size_t i = 0; i < out.size();) {
    if (out.compare(i, marker.size(), marker) == 0) {
      result.push_back(' ');
      i += marker.size();
    } else {
      result.push_back(out[i++]);
    }
  }
  return result;
}

void Tokenizer::save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const {
  std::ofstream vocab(vocab_path, std::ios::binary | std::ios::trunc);
  std::ofstream merges(merges_path, std::ios::binary | std::ios::trunc);
  if (!vocab || !merges) throw std::runtime_error("cannot write tokenizer files");
  for (std::size_t id = 0; id < tokens_.size(); ++id) vocab << escape(tokens_[id]) << '\t' << id << '\n';
  for (const auto& [l, r] : merges_) merges << escape(tokens_[l]) << ' ' << escape(tokens_[r]) << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  std::ifstream vocab(vocab_path, std::ios::binary);
  std::ifstream merges(merges_path, std::ios::binary);
  if (!vocab) throw std::runtime_error("cannot open " + vocab_path.string());
  if (!merges) throw std::runtime_error("cannot open " + merges_path.string());

  std::vector<std::string> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(vocab, line)) {
    ++line_no;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw std::runtime_error("vocab line " + std::to_string(line_no) + ": missing tab");
    if (line.substr(tab + 1) != std::to_string(tokens.size())) {
      throw std::runtime_error("vocab line " + std::to_string(line_no) + ": ids must be dense and ordered");
    }
    tokens.push_back(unescape(std::string_view(line).substr(0, tab), line_no));
  }
  if (tokens.size() < kNumSpecial) throw std::runtime_error("vocab: missing special tokens");
  for (std::size_t i = 0; i < kNumSpecial; ++i) {
    if (tokens[i] != kSpecialTokens[i]) throw std::runtime_error("vocab: special tokens must occupy ids 0..3");
  }

  Tokenizer tok;
  // Single-codepoint tokens first so that merges can reference them.
  std::size_t next = kNumSpecial;
  while (next < tokens.size()) {
    const auto cps = utf8::decode(tokens[next]);
    if (cps.size() != 1) break;
    tok.add_token(tokens[next]);
    ++next;
  }
  line_no = 0;
  while (std::getline(merges, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error("merges line " + std::to_string(line_no) + ": expected 'left right'");
    const auto left = tok.find(unescape(std::string_view(line).substr(0, sp), line_no));
    const auto right = tok.find(unescape(std::string_view(line).substr(sp + 1), line_no));
    if (!left || !right) throw std::runtime_error("merges line " + std::to_string(line_no) + ": unknown symbol");
    tok.add_merge(*left, *right);
  }
  if (tok.tokens_ != tokens) throw std::runtime_error("vocab and merges files disagree");
  return tok;
}

void Tokenizer::save_dir(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save(dir / "vocab.txt", dir / "merges.txt");
}

Tokenizer Tokenizer::load_dir(const std::filesystem::path& dir) {
  return load(dir / "vocab.txt", dir / "merges.txt");
}

}  // namespace longsum
