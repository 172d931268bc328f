// SPDX-License-Identifier: Apache-2.0
//
// Persian text cleaning and document-level filtering.
//
// The document pipeline runs, in this fixed order:
//   normalize_characters -> normalize_lines -> strip_front_matter
//   -> filter_short_lines -> Persian-ratio gate
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace longsum {

struct RawDocument {
  std::string id;
  std::optional<std::string> title;
  std::string body;
  std::string summary;
  std::optional<std::string> category;

  bool operator==(const RawDocument&) const = default;
};

struct CodepointRange {
  char32_t lo = 0;
  char32_t hi = 0;

  bool contains(char32_t cp) const { return cp >= lo && cp <= hi; }
  bool operator==(const CodepointRange&) const = default;
};

struct NormalizationRules {
  std::map<char32_t, std::u32string> char_map;
  std::vector<CodepointRange> strip_ranges;
  std::size_t min_line_tokens = 10;
  double persian_threshold = 0.6;
  std::vector<std::string> front_matter_markers;

  /// Arabic-to-Persian letter and digit map, harakat/tatweel stripping,
  /// introduction headings as front-matter markers.
  static NormalizationRules defaults();

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Parses a rule table: one `SRC_HEX -> DST_HEX [DST_HEX ...]` per line.
/// An empty right-hand side deletes the codepoint. `#` starts a comment.
/// Throws std::runtime_error with the 1-based line number on malformed lines.
std::map<char32_t, std::u32string> parse_char_map(std::string_view table,
                                                  std::vector<CodepointRange>* deletions = nullptr);
void load_char_map_file(const std::filesystem::path& path, NormalizationRules& rules);

struct CleanDocument {
  std::string id;
  std::optional<std::string> title;
  std::string body;
  std::string summary;
  std::optional<std::string> category;
  /// Line index (in the line-normalized body) of the matched front-matter
  /// heading; empty when no marker was found and the body was kept whole.
  std::optional<std::size_t> front_matter_marker_line;

  RawDocument as_raw() const { return {id, title, body, summary, category}; }
};

enum class RejectionReason { non_persian, empty_after_filtering };

std::string_view to_string(RejectionReason reason);

struct Rejection {
  std::string id;
  RejectionReason reason;
  double persian_ratio = 0.0;
};

using NormalizeResult = std::variant<CleanDocument, Rejection>;

std::string normalize_characters(std::string_view text, const NormalizationRules& rules);

std::string normalize_lines(std::string_view text);

std::string filter_short_lines(std::string_view text, std::size_t min_tokens);

double persian_ratio(std::string_view text);

struct FrontMatterResult {
  RawDocument doc;
  std::optional<std::size_t> marker_line;
  std::size_t removed_lines = 0;
};

/// Drops every line before the first heading line that matches a marker.
/// A heading line matches when, after trimming section numbering and
/// trailing punctuation, it equals one of the markers.
FrontMatterResult strip_front_matter(const RawDocument& doc, const NormalizationRules& rules);

NormalizeResult normalize_document(const RawDocument& doc, const NormalizationRules& rules);

}  // namespace longsum
