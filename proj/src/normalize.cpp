// SPDX-License-Identifier: Apache-2.0
#include "longsum/normalize.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "longsum/utf8.hpp"

namespace longsum {
namespace {

bool stripped(const NormalizationRules& rules, char32_t cp) {
  return std::any_of(rules.strip_ranges.begin(), rules.strip_ranges.end(),
                     [cp](const CodepointRange& r) { return r.contains(cp); });
}

bool is_numbering(char32_t cp) {
  return (cp >= U'0' && cp <= U'9') || (cp >= 0x0660 && cp <= 0x0669) ||
         (cp >= 0x06F0 && cp <= 0x06F9) || cp == U'.' || cp == U'-' || cp == U')' ||
         cp == U'(' || cp == U':' || cp == U' ' || cp == 0x060C /* Arabic comma */ ||
         cp == 0x06D4 /* Arabic full stop */;
}

bool is_trailing_punct(char32_t cp) {
  return cp == U':' || cp == U'.' || cp == U' ' || cp == 0x06D4;
}

std::u32string heading_key(std::string_view line) {
  std::u32string cps = utf8::decode(line);
  std::size_t b = 0;
  while (b < cps.size() && is_numbering(cps[b])) ++b;
  std::size_t e = cps.size();
  while (e > b && is_trailing_punct(cps[e - 1])) --e;
  return cps.substr(b, e - b);
}

char32_t parse_hex(std::string_view tok, std::size_t line_no) {
  std::string s(tok);
  if (s.size() > 2 && (s.rfind("U+", 0) == 0 || s.rfind("0x", 0) == 0 || s.rfind("u+", 0) == 0)) {
    s = s.substr(2);
  }
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(s, &used, 16);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || value > 0x10FFFF) {
    throw std::runtime_error("rule table line " + std::to_string(line_no) +
                             ": bad codepoint '" + std::string(tok) + "'");
  }
  return static_cast<char32_t>(value);
}

}  // namespace

NormalizationRules NormalizationRules::defaults() {
  NormalizationRules rules;
  rules.char_map = {
      {0x064A, U"ی"},  // Arabic yeh -> Persian yeh
      {0x0649, U"ی"},  // alef maksura -> Persian yeh
      {0x0643, U"ک"},  // Arabic kaf -> keheh
      {0x0629, U"ه"},  // teh marbuta -> heh
  };
  for (char32_t d = 0; d < 10; ++d) {
    rules.char_map[0x0660 + d] = std::u32string(1, static_cast<char32_t>(0x06F0 + d));
  }
  rules.strip_ranges = {{0x0640, 0x0640}, {0x064B, 0x0652}};
  rules.front_matter_markers = {"مقدمه", "پیشگفتار"};
  return rules;
}

void NormalizationRules::validate() const {
  if (persian_threshold < 0.0 || persian_threshold > 1.0) {
    throw std::invalid_argument("persian_threshold: must be within [0, 1]");
  }
  std::vector<CodepointRange> sorted = strip_ranges;
  std::sort(sorted.begin(), sorted.end(),
            [](const CodepointRange& a, const CodepointRange& b) { return a.lo < b.lo; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].lo > sorted[i].hi) {
      throw std::invalid_argument("strip_ranges: range with lo > hi");
    }
    if (i > 0 && sorted[i].lo <= sorted[i - 1].hi) {
      throw std::invalid_argument("strip_ranges: ranges overlap");
    }
  }
  // A replacement that re-introduces a key or a stripped codepoint would
  // make the map non-idempotent.
  for (const auto& [key, value] : char_map) {
    for (char32_t cp : value) {
      if (char_map.count(cp) != 0 || stripped(*this, cp)) {
        throw std::invalid_argument("char_map: replacement for U+" +
                                    std::to_string(static_cast<unsigned>(key)) +
                                    " is not a fixed point");
      }
    }
  }
}

std::map<char32_t, std::u32string> parse_char_map(std::string_view table,
                                                  std::vector<CodepointRange>* deletions) {
  std::map<char32_t, std::u32string> out;
  std::size_t line_no = 0;
  for (std::string_view line : utf8::split_lines(table)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    auto tokens = utf8::split_whitespace(line);
    if (tokens.empty()) continue;
    if (tokens.size() < 2 || tokens[1] != "->") {
      throw std::runtime_error("rule table line " + std::to_string(line_no) +
                               ": expected 'SRC_HEX -> DST_HEX'");
    }
    const char32_t src = parse_hex(tokens[0], line_no);
    std::u32string dst;
    for (std::size_t i = 2; i < tokens.size(); ++i) dst.push_back(parse_hex(tokens[i], line_no));
    if (dst.empty()) {
      if (deletions == nullptr) {
        throw std::runtime_error("rule table line " + std::to_string(line_no) +
                                 ": empty replacement not allowed here");
      }
      deletions->push_back({src, src});
      continue;
    }
    out[src] = std::move(dst);
  }
  return out;
}

void load_char_map_file(const std::filesystem::path& path, NormalizationRules& rules) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open rule table " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::vector<CodepointRange> deletions;
  rules.char_map = parse_char_map(buffer.str(), &deletions);
  rules.strip_ranges.insert(rules.strip_ranges.end(), deletions.begin(), deletions.end());
  rules.validate();
}

std::string_view to_string(RejectionReason reason) {
  switch (reason) {
    case RejectionReason::non_persian:
      return "non_persian";
    case RejectionReason::empty_after_filtering:
      return "empty_after_filtering";
  }
  return "unknown";
}

std::string normalize_characters(std::string_view text, const NormalizationRules& rules) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : utf8::decode(text)) {
    if (stripped(rules, cp)) continue;
    if (auto it = rules.char_map.find(cp); it != rules.char_map.end()) {
      for (char32_t r : it->second) utf8::append(out, r);
    } else {
      utf8::append(out, cp);
    }
  }
  return out;
}

std::string normalize_lines(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::string_view line : utf8::split_lines(text)) {
    std::string cleaned;
    bool pending_space = false;
    for (char32_t cp : utf8::decode(line)) {
      if (utf8::is_horizontal_space(cp) || cp == U'\r') {
        pending_space = !cleaned.empty();
        continue;
      }
      if (pending_space) {
        cleaned.push_back(' ');
        pending_space = false;
      }
      utf8::append(cleaned, cp);
    }
    if (cleaned.empty()) continue;
    if (!out.empty()) out.push_back('\n');
    out += cleaned;
  }
  return out;
}

std::string filter_short_lines(std::string_view text, std::size_t min_tokens) {
  std::string out;
  for (std::string_view line : utf8::split_lines(text)) {
    if (utf8::count_tokens(line) < min_tokens) continue;
    if (!out.empty()) out.push_back('\n');
    out += line;
  }
  return out;
}

double persian_ratio(std::string_view text) {
  std::size_t letters = 0;
  std::size_t arabic = 0;
  for (char32_t cp : utf8::decode(text)) {
    if (!utf8::is_letter(cp)) continue;
    ++letters;
    if (utf8::is_arabic_script(cp)) ++arabic;
  }
  return letters == 0 ? 0.0 : static_cast<double>(arabic) / static_cast<double>(letters);
}

FrontMatterResult strip_front_matter(const RawDocument& doc, const NormalizationRules& rules) {
  FrontMatterResult result{doc, std::nullopt, 0};
  std::vector<std::u32string> markers;
  for (const auto& m : rules.front_matter_markers) {
    markers.push_back(utf8::decode(normalize_characters(m, rules)));
  }
  const auto lines = utf8::split_lines(doc.body);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::u32string key = heading_key(lines[i]);
    if (key.empty()) continue;
    if (std::find(markers.begin(), markers.end(), key) == markers.end()) continue;
    result.marker_line = i;
    result.removed_lines = i;
    std::string body;
    for (std::size_t k = i; k < lines.size(); ++k) {
      if (k > i) body.push_back('\n');
      body += lines[k];
    }
    result.doc.body = std::move(body);
    break;
  }
  return result;
}

NormalizeResult normalize_document(const RawDocument& doc, const NormalizationRules& rules) {
  if (doc.id.empty()) throw std::invalid_argument("id: document id must be non-empty");

  RawDocument staged = doc;
  staged.body = normalize_lines(normalize_characters(doc.body, rules));
  staged.summary = normalize_lines(normalize_characters(doc.summary, rules));
  if (doc.title) staged.title = normalize_lines(normalize_characters(*doc.title, rules));

  FrontMatterResult front = strip_front_matter(staged, rules);
  std::string body = filter_short_lines(front.doc.body, rules.min_line_tokens);
  if (body.empty()) {
    return Rejection{doc.id, RejectionReason::empty_after_filtering, 0.0};
  }
  const double ratio = persian_ratio(body);
  if (ratio < rules.persian_threshold) {
    return Rejection{doc.id, RejectionReason::non_persian, ratio};
  }
  return CleanDocument{doc.id,           staged.title, std::move(body), staged.summary,
                       staged.category, front.marker_line};
}

}  // namespace longsum
