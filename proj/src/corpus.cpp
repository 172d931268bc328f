// SPDX-License-Identifier: Apache-2.0
#include "longsum/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "longsum/utf8.hpp"

namespace longsum {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

LengthSummary summarize(std::vector<std::size_t> lengths) {
  LengthSummary s;
  double total = 0.0;
  for (std::size_t len : lengths) {
    ++s.histogram[histogram_bucket(len)];
    total += static_cast<double>(len);
  }
  std::sort(lengths.begin(), lengths.end());
  s.mean = total / static_cast<double>(lengths.size());
  const std::size_t mid = lengths.size() / 2;
  s.median = lengths.size() % 2 == 1
                 ? static_cast<double>(lengths[mid])
                 : 0.5 * static_cast<double>(lengths[mid - 1] + lengths[mid]);
  s.min = lengths.front();
  s.max = lengths.back();
  return s;
}

}  // namespace

void SplitRatios::validate() const {
  if (train < 0 || validation < 0 || test < 0) {
    throw std::invalid_argument("ratios: each ratio must be non-negative");
  }
  if (std::abs(train + validation + test - 1.0) > 1e-9) {
    throw std::invalid_argument("ratios: must sum to 1");
  }
}

SplitRatios SplitRatios::parse(std::string_view text) {
  std::vector<double> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string piece(text.substr(start, comma - start));
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(piece, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (piece.empty() || used != piece.size()) {
      throw std::invalid_argument("ratios: cannot parse '" + std::string(text) + "'");
    }
    parts.push_back(value);
    start = comma + 1;
  }
  if (parts.size() != 3) throw std::invalid_argument("ratios: expected three values");
  SplitRatios r{parts[0], parts[1], parts[2]};
  r.validate();
  return r;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "unknown";
}

CorpusRecord make_record(const CleanDocument& doc) {
  if (doc.summary.empty()) {
    throw std::invalid_argument("summary: document '" + doc.id + "' has an empty abstract");
  }
  if (doc.body.empty()) {
    throw std::invalid_argument("article: document '" + doc.id + "' has an empty body");
  }
  return {doc.id, doc.body, doc.summary, doc.category};
}

std::uint64_t split_hash(std::string_view id, std::uint64_t seed) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(h ^ splitmix64(seed));
}

Split assign_split(std::string_view id, std::uint64_t seed, const SplitRatios& ratios) {
  // 53-bit mantissa keeps the fraction exact in [0, 1).
  const double u = static_cast<double>(split_hash(id, seed) >> 11) * 0x1.0p-53;
  if (u < ratios.train) return Split::train;
  if (u < ratios.train + ratios.validation) return Split::validation;
  if (ratios.test == 0.0 && ratios.validation == 0.0) return Split::train;
  return ratios.test == 0.0 ? Split::validation : Split::test;
}

std::string to_jsonl(const CorpusRecord& record) {
  nlohmann::ordered_json j;
  j["id"] = record.id;
  j["article"] = record.article;
  j["summary"] = record.summary;
  j["category"] = record.category ? nlohmann::ordered_json(*record.category) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

CorpusRecord record_from_jsonl(std::string_view line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusFormatError(line_no, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw CorpusFormatError(line_no, "record is not an object");
  auto field = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw CorpusFormatError(line_no, std::string("missing string field '") + key + "'");
    }
    return it->get<std::string>();
  };
  CorpusRecord r{field("id"), field("article"), field("summary"), std::nullopt};
  if (auto it = j.find("category"); it != j.end() && it->is_string()) {
    r.category = it->get<std::string>();
  }
  if (r.id.empty()) throw CorpusFormatError(line_no, "empty id");
  return r;
}

std::size_t write_corpus(const std::vector<CorpusRecord>& records, const std::filesystem::path& path) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw std::invalid_argument("id: duplicate id '" + r.id + "'");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << to_jsonl(r) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return records.size();
}

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<CorpusRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    CorpusRecord r = record_from_jsonl(line, line_no);
    if (!seen.insert(r.id).second) throw CorpusFormatError(line_no, "duplicate id '" + r.id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

std::array<std::size_t, 3> write_splits(const std::vector<CorpusRecord>& records,
                                        const std::filesystem::path& dir, std::uint64_t seed,
                                        const SplitRatios& ratios) {
  ratios.validate();
  std::array<std::vector<CorpusRecord>, 3> parts;
  for (const auto& r : records) {
    parts[static_cast<std::size_t>(assign_split(r.id, seed, ratios))].push_back(r);
  }
  std::filesystem::create_directories(dir);
  std::array<std::size_t, 3> counts{};
  for (std::size_t s = 0; s < 3; ++s) {
    const auto name = std::string(to_string(static_cast<Split>(s))) + ".jsonl";
    counts[s] = write_corpus(parts[s], dir / name);
  }
  return counts;
}

std::size_t histogram_bucket(std::size_t tokens) {
  std::size_t bucket = 0;
  for (std::size_t b = 1; b < kHistogramEdges.size(); ++b) {
    if (tokens >= kHistogramEdges[b]) bucket = b;
  }
  return bucket;
}

CorpusStats compute_stats(const std::vector<CorpusRecord>& records) {
  if (records.empty()) throw std::invalid_argument("corpus: cannot compute stats of an empty corpus");
  std::vector<std::size_t> article_lengths;
  std::vector<std::size_t> summary_lengths;
  article_lengths.reserve(records.size());
  summary_lengths.reserve(records.size());
  for (const auto& r : records) {
    article_lengths.push_back(utf8::count_tokens(r.article));
    summary_lengths.push_back(utf8::count_tokens(r.summary));
  }
  return {records.size(), summarize(std::move(article_lengths)), summarize(std::move(summary_lengths))};
}

}  // namespace longsum
