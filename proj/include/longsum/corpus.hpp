// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "longsum/normalize.hpp"

namespace longsum {

struct CorpusRecord {
  std::string id;
  std::string article;
  std::string summary;
  std::optional<std::string> category;

  bool operator==(const CorpusRecord&) const = default;
};

/// Raised for malformed record files; carries the 1-based line number.
class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct SplitRatios {
  double train = 0.90;
  double validation = 0.05;
  double test = 0.05;

  void validate() const;
  /// Parses "0.9,0.05,0.05".
  static SplitRatios parse(std::string_view text);
};

enum class Split { train, validation, test };

std::string_view to_string(Split split);

CorpusRecord make_record(const CleanDocument& doc);

/// Stable 64-bit hash of (seed, id): FNV-1a over the id bytes, mixed with the
/// seed through splitmix64 finalizers.
std::uint64_t split_hash(std::string_view id, std::uint64_t seed);

Split assign_split(std::string_view id, std::uint64_t seed, const SplitRatios& ratios);

std::string to_jsonl(const CorpusRecord& record);
CorpusRecord record_from_jsonl(std::string_view line, std::size_t line_no);

std::size_t write_corpus(const std::vector<CorpusRecord>& records, const std::filesystem::path& path);
std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);

/// Writes train.jsonl, validation.jsonl, test.jsonl under `dir`.
std::array<std::size_t, 3> write_splits(const std::vector<CorpusRecord>& records,
                                        const std::filesystem::path& dir, std::uint64_t seed,
                                        const SplitRatios& ratios);

inline constexpr std::array<std::size_t, 6> kHistogramEdges = {0, 512, 1024, 2048, 4096, 8192};

struct LengthSummary {
  std::array<std::size_t, 6> histogram{};
  double mean = 0.0;
  double median = 0.0;
  std::size_t min = 0;
  std::size_t max = 0;
};

struct CorpusStats {
  std::size_t record_count = 0;
  LengthSummary article;
  LengthSummary summary;
};

std::size_t histogram_bucket(std::size_t tokens);

CorpusStats compute_stats(const std::vector<CorpusRecord>& records);

}  // namespace longsum
