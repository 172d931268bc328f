// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "longsum/normalize.hpp"
#include "longsum/utf8.hpp"

using namespace longsum;

namespace {

const NormalizationRules kRules = NormalizationRules::defaults();

std::string random_document_text(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {
      "کتاب", "علي", "مَدرَسه", "پژوهشـها", "٣٤", "۱۲", "فارسی", "نيم‌فاصله", "كار", "جامعة", "book", "مقدمه",
      "۱. مقدمه", "چکیده", "،", ".", "ى", "متن"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> len(1, 16);
  std::uniform_int_distribution<int> sep(0, 9);
  std::string text;
  const int n_lines = len(rng);
  for (int l = 0; l < n_lines; ++l) {
    const int n = len(rng);
    for (int t = 0; t < n; ++t) {
      text += pieces[pick(rng)];
      const int s = sep(rng);
      text += s == 0 ? "  " : s == 1 ? "\t" : " ";
    }
    text += sep(rng) == 0 ? "\n\n" : "\n";
  }
  return text;
}

}  // namespace

TEST_CASE("character map and stripping") {
  CHECK(normalize_characters("علي", kRules) == "علی");
  CHECK(normalize_characters("", kRules).empty());
  CHECK(normalize_characters("مَدرَسه", kRules) == "مدرسه");
  CHECK(normalize_characters("کتاب", kRules) == "کتاب");
  CHECK(normalize_characters("كتابة", kRules) == "کتابه");
  CHECK(normalize_characters("٠١٩", kRules) == "۰۱۹");
  CHECK(normalize_characters("بـــه", kRules) == "به");
  CHECK(normalize_characters("می‌شود", kRules) == "می‌شود");  // ZWNJ kept
}

TEST_CASE("line normalization") {
  CHECK(normalize_lines("a  b\n\nc") == "a b\nc");
  CHECK(normalize_lines("x") == "x");
  CHECK(normalize_lines("   \n\t\n").empty());
  CHECK(normalize_lines("  lead\t and trail  \r\n") == "lead and trail");
}

TEST_CASE("short line filter") {
  const std::string nine = "a b c d e f g h i";
  const std::string ten = "a b c d e f g h i j";
  CHECK(filter_short_lines(nine, 10).empty());
  CHECK(filter_short_lines(ten, 10) == ten);
  CHECK(filter_short_lines("", 10).empty());
  CHECK(filter_short_lines(nine + "\n" + ten + "\n" + nine + "\n" + ten + " k", 10) == ten + "\n" + ten + " k");
}

TEST_CASE("persian ratio") {
  CHECK(persian_ratio("کتاب خوب") == 1.0);
  CHECK(persian_ratio("hello world") == 0.0);
  CHECK(persian_ratio("کتاب book") == 0.5);
  CHECK(persian_ratio("123 ...") == 0.0);
}

TEST_CASE("front matter") {
  RawDocument doc{"d", std::nullopt, "", "s", std::nullopt};
  std::string body;
  for (int i = 0; i < 7; ++i) body += "line " + std::to_string(i) + "\n";
  body += "مقدمه\nafter one\nafter two";
  doc.body = body;
  auto r = strip_front_matter(doc, kRules);
  REQUIRE(r.marker_line.has_value());
  CHECK(*r.marker_line == 7);
  CHECK(r.removed_lines == 7);
  CHECK(r.doc.body == "مقدمه\nafter one\nafter two");

  doc.body = "no marker\nhere";
  r = strip_front_matter(doc, kRules);
  CHECK_FALSE(r.marker_line.has_value());
  CHECK(r.doc.body == doc.body);

  doc.body = "۱. مقدمه:\nrest";
  r = strip_front_matter(doc, kRules);
  CHECK(r.marker_line == std::optional<std::size_t>(0));
  CHECK(r.doc.body == doc.body);

  // a sentence that merely contains the word is not a heading
  doc.body = "در مقدمه این کتاب\nrest";
  CHECK_FALSE(strip_front_matter(doc, kRules).marker_line.has_value());
}

TEST_CASE("document rejection reasons") {
  RawDocument en{"en", std::nullopt,
                 "this is a fully english document with more than ten tokens on the line", "summary", std::nullopt};
  auto r = normalize_document(en, kRules);
  REQUIRE(std::holds_alternative<Rejection>(r));
  CHECK(std::get<Rejection>(r).reason == RejectionReason::non_persian);

  RawDocument tiny{"tiny", std::nullopt, "کوتاه\nخیلی کوتاه", "خلاصه", std::nullopt};
  r = normalize_document(tiny, kRules);
  REQUIRE(std::holds_alternative<Rejection>(r));
  CHECK(std::get<Rejection>(r).reason == RejectionReason::empty_after_filtering);

  CHECK_THROWS_AS(normalize_document(RawDocument{}, kRules), std::invalid_argument);
}

TEST_CASE("composite fixture matches golden output") {
  std::ifstream raw_in(LONGSUM_TEST_DATA "/composite_raw.json");
  std::ifstream gold_in(LONGSUM_TEST_DATA "/composite_expected.json");
  REQUIRE(raw_in);
  REQUIRE(gold_in);
  const auto raw = nlohmann::json::parse(raw_in);
  const auto gold = nlohmann::json::parse(gold_in);
  RawDocument doc{raw["id"], raw["title"].get<std::string>(), raw["body"], raw["summary"],
                  raw["category"].get<std::string>()};
  const auto r = normalize_document(doc, kRules);
  REQUIRE(std::holds_alternative<CleanDocument>(r));
  const auto& clean = std::get<CleanDocument>(r);
  CHECK(clean.body == gold["body"].get<std::string>());
  CHECK(clean.summary == gold["summary"].get<std::string>());
  CHECK(*clean.title == gold["title"].get<std::string>());
  CHECK(clean.front_matter_marker_line == std::optional<std::size_t>(3));
}

TEST_CASE("normalize_document is idempotent and its output satisfies the clean invariants") {
  std::mt19937_64 rng(2024);
  std::size_t accepted = 0;
  for (int i = 0; i < 1000; ++i) {
    RawDocument doc{"doc" + std::to_string(i), std::nullopt, random_document_text(rng), random_document_text(rng),
                    std::nullopt};
    const auto first = normalize_document(doc, kRules);
    if (!std::holds_alternative<CleanDocument>(first)) continue;
    ++accepted;
    const auto& c1 = std::get<CleanDocument>(first);
    const auto second = normalize_document(c1.as_raw(), kRules);
    REQUIRE(std::holds_alternative<CleanDocument>(second));
    const auto& c2 = std::get<CleanDocument>(second);
    CHECK(c2.body == c1.body);
    CHECK(c2.summary == c1.summary);
    CHECK(c1.body.find("  ") == std::string::npos);
    CHECK(c1.body.find("\n\n") == std::string::npos);
    for (auto line : utf8::split_lines(c1.body)) CHECK(utf8::count_tokens(line) >= kRules.min_line_tokens);
    for (char32_t cp : utf8::decode(c1.body)) {
      CHECK(kRules.char_map.count(cp) == 0);
      CHECK_FALSE((cp == 0x0640 || (cp >= 0x064B && cp <= 0x0652)));
    }
  }
  CHECK(accepted > 100);
}

TEST_CASE("persian ratio is bounded and monotone under appended Persian letters") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string text = random_document_text(rng);
    double prev = persian_ratio(text);
    CHECK(prev >= 0.0);
    CHECK(prev <= 1.0);
    for (int k = 0; k < 3; ++k) {
      text += "ب";
      const double next = persian_ratio(text);
      CHECK(next >= prev);
      prev = next;
    }
  }
}

TEST_CASE("rule table parsing") {
  std::vector<CodepointRange> deletions;
  const auto map = parse_char_map("# comment\nU+064A -> U+06CC\n0643 -> 06A9\n0640 ->\n", &deletions);
  CHECK(map.at(0x064A) == U"ی");
  CHECK(map.at(0x0643) == U"ک");
  REQUIRE(deletions.size() == 1);
  CHECK(deletions[0].lo == 0x0640);
  CHECK_THROWS_WITH_AS(parse_char_map("064A => 06CC", nullptr), doctest::Contains("line 1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_char_map("\nZZZZ -> 06CC", nullptr), doctest::Contains("line 2"), std::runtime_error);

  NormalizationRules bad = kRules;
  bad.char_map[0x06CC] = U"ي";  // maps back onto a key
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = kRules;
  bad.strip_ranges.push_back({0x0650, 0x0660});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
