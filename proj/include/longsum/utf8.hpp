// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace longsum::utf8 {

/// Decodes UTF-8 into codepoints. Throws std::invalid_argument on malformed input.
std::u32string decode(std::string_view text);

std::string encode(std::u32string_view codepoints);
void append(std::string& out, char32_t cp);

bool is_valid(std::string_view text);

/// Horizontal whitespace (space, tab, NBSP, the U+2000 block, ...). Excludes
/// line breaks and ZWNJ.
bool is_horizontal_space(char32_t cp);

bool is_letter(char32_t cp);
bool is_arabic_script(char32_t cp);

/// Splits on ASCII/Unicode whitespace, dropping empty runs.
std::vector<std::string_view> split_whitespace(std::string_view text);
std::size_t count_tokens(std::string_view text);

std::vector<std::string_view> split_lines(std::string_view text);

}  // namespace longsum::utf8
