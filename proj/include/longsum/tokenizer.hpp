// SPDX-License-Identifier: Apache-2.0
//
// Byte-pair subword tokenizer over Unicode codepoints.
//
// Text is pre-split into chunks: a space starts a new chunk and is carried as
// the visible marker U+2581 at the chunk's front; a newline is a chunk of its
// own. Merges never cross chunk boundaries, so decoding is plain
// concatenation with the marker turned back into a space.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace longsum {

using TokenId = std::int32_t;

struct Encoding {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::uint8_t> global_mask;
  /// Number of real (unpadded) tokens.
  std::size_t length = 0;

  std::size_t size() const { return ids.size(); }
  std::span<const TokenId> real_ids() const { return {ids.data(), length}; }
};

/// Builds an unpadded encoding directly from ids (SOS/EOS must already be
/// present when wanted). Global positions outside the sequence are ignored.
Encoding make_encoding(std::vector<TokenId> ids, std::span<const std::size_t> global_positions = {});

class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kSos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecial = 4;
  static constexpr char32_t kSpaceMarker = 0x2581;

  Tokenizer();

  /// Standard BPE training: repeatedly merges the most frequent adjacent
  /// pair (ties go to the lexicographically smallest pair) until the vocab
  /// holds `vocab_size` entries or no pair occurs twice.
  static Tokenizer train(std::span<const std::string> texts, std::size_t vocab_size);

  std::vector<TokenId> encode_subwords(std::string_view text) const;

  /// SOS + subwords + EOS, truncated to `max_len` with EOS kept last.
  Encoding encode(std::string_view text, std::size_t max_len, bool pad_to_max = false,
                  std::span<const std::size_t> global_positions = kDefaultGlobal) const;

  /// Drops PAD/SOS/EOS; UNK renders as U+FFFD. Throws std::out_of_range on
  /// ids outside the vocabulary.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  /// Vocab file: `token<TAB>id` per line; merges file: `left right` per line
  /// in priority order. Backslash, tab, newline, CR and space are escaped.
  void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const;
  static Tokenizer load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);

  /// Convenience: `<dir>/vocab.txt` and `<dir>/merges.txt`.
  void save_dir(const std::filesystem::path& dir) const;
  static Tokenizer load_dir(const std::filesystem::path& dir);

  static constexpr std::size_t kDefaultGlobalArr[1] = {0};
  static constexpr std::span<const std::size_t> kDefaultGlobal{kDefaultGlobalArr};

 private:
  struct PairHash {
    std::size_t operator()(const std::pair<TokenId, TokenId>& p) const noexcept {
      return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
                                        static_cast<std::uint32_t>(p.second));
    }
  };

  TokenId add_token(std::string token);
  void add_merge(TokenId left, TokenId right);
  void encode_chunk(std::u32string_view chunk, std::vector<TokenId>& out) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  // pair -> (rank, merged id)
  std::unordered_map<std::pair<TokenId, TokenId>, std::pair<std::size_t, TokenId>, PairHash> merge_rank_;
};

/// Splits text into merge chunks (space marker applied).
std::vector<std::u32string> pretokenize(std::string_view text);

}  // namespace longsum
