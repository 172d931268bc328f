// SPDX-License-Identifier: Apache-2.0
#include "longsum/utf8.hpp"

#include <stdexcept>

namespace longsum::utf8 {
namespace {

struct Range {
  char32_t lo;
  char32_t hi;
};

// Letter ranges for the scripts that show up in scholarly Persian text.
// Not a full Unicode category table.
constexpr Range kLetterRanges[] = {
    {U'A', U'Z'},         {U'a', U'z'},         {0x00AA, 0x00AA},
    {0x00B5, 0x00B5},     {0x00BA, 0x00BA},     {0x00C0, 0x00D6},
    {0x00D8, 0x00F6},     {0x00F8, 0x024F},     {0x0370, 0x03FF},
    {0x0400, 0x052F},     {0x0531, 0x0587},     {0x05D0, 0x05EA},
    {0x0620, 0x064A},     {0x066E, 0x066F},     {0x0671, 0x06D3},
    {0x06D5, 0x06D5},     {0x06E5, 0x06E6},     {0x06EE, 0x06EF},
    {0x06FA, 0x06FC},     {0x06FF, 0x06FF},     {0x0750, 0x077F},
    {0x08A0, 0x08C9},     {0x0900, 0x0939},     {0x0E01, 0x0E30},
    {0x1E00, 0x1FFF},     {0x3041, 0x30FF},     {0x3400, 0x4DBF},
    {0x4E00, 0x9FFF},     {0xAC00, 0xD7A3},     {0xFB50, 0xFDFB},
    {0xFE70, 0xFEFC},
};

constexpr Range kArabicScript[] = {
    {0x0600, 0x06FF}, {0x0750, 0x077F}, {0x08A0, 0x08FF},
    {0xFB50, 0xFDFF}, {0xFE70, 0xFEFF},
};

template <std::size_t N>
bool in_ranges(const Range (&ranges)[N], char32_t cp) {
  for (const auto& r : ranges) {
    if (cp >= r.lo && cp <= r.hi) return true;
  }
  return false;
}

bool is_any_space(char32_t cp) {
  return is_horizontal_space(cp) || cp == U'\n' || cp == U'\r' || cp == 0x0B ||
         cp == 0x0C || cp == 0x85 || cp == 0x2028 || cp == 0x2029;
}

// Decodes one codepoint starting at text[i]; returns 0 length on error.
std::size_t decode_one(std::string_view text, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  std::size_t len = 0;
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return 0;
  }
  if (i + len > text.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(text[i + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  // overlong, surrogate and out-of-range forms
  if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
      (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
      (cp >= 0xD800 && cp <= 0xDFFF)) {
    return 0;
  }
  return len;
}

}  // namespace

std::u32string decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = decode_one(text, i, cp);
    if (len == 0) {
      throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(i));
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

bool is_valid(std::string_view text) {
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = decode_one(text, i, cp);
    if (len == 0) return false;
    i += len;
  }
  return true;
}

void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode(std::u32string_view codepoints) {
  std::string out;
  out.reserve(codepoints.size() * 2);
  for (char32_t cp : codepoints) append(out, cp);
  return out;
}

bool is_horizontal_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == 0x00A0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

bool is_letter(char32_t cp) { return in_ranges(kLetterRanges, cp); }

bool is_arabic_script(char32_t cp) { return in_ranges(kArabicScript, cp); }

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> tokens;
  std::size_t start = std::string_view::npos;
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    std::size_t len = decode_one(text, i, cp);
    if (len == 0) {
      // treat stray bytes as token content
      len = 1;
      cp = 0xFFFD;
    }
    if (is_any_space(cp)) {
      if (start != std::string_view::npos) {
        tokens.push_back(text.substr(start, i - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = i;
    }
    i += len;
  }
  if (start != std::string_view::npos) tokens.push_back(text.substr(start));
  return tokens;
}

std::size_t count_tokens(std::string_view text) {
  return split_whitespace(text).size();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  if (text.empty()) return lines;
  std::size_t start = 0;
  while (true) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace longsum::utf8
