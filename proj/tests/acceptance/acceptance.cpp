// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "longsum/attention.hpp"
#include "longsum/bertscore.hpp"
#include "longsum/corpus.hpp"
#include "longsum/generate.hpp"
#include "longsum/model.hpp"
#include "longsum/normalize.hpp"
#include "longsum/optimizer.hpp"
#include "longsum/tokenizer.hpp"
#include "longsum/trainer.hpp"

using namespace longsum;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ModelConfig small_model(std::size_t vocab, std::size_t layers) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = layers;
  c.n_dec_layers = layers;
  c.d_ff = 16;
  c.window = 4;
  c.max_enc_len = 32;
  c.max_dec_len = 16;
  return c;
}

Example random_example(const ModelConfig& c, std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(4, static_cast<TokenId>(c.vocab_size) - 1);
  std::vector<TokenId> src{Tokenizer::kSos};
  while (src.size() + 1 < n) src.push_back(tok(rng));
  src.push_back(Tokenizer::kEos);
  std::vector<TokenId> tgt{Tokenizer::kSos};
  while (tgt.size() + 1 < m) tgt.push_back(tok(rng));
  tgt.push_back(Tokenizer::kEos);
  return {make_encoding(src, Tokenizer::kDefaultGlobal), make_encoding(tgt)};
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

Outcome f1_arithmetic() {
  const double rows[3][3] = {{0.736, 0.710, 0.722}, {0.742, 0.680, 0.710}, {0.752, 0.716, 0.734}};
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, std::abs(f1(r[0], r[1]) - r[2]));
  return {worst <= 0.001, "max |f1 - printed| = " + fmt(worst)};
}

Outcome attention_equivalence() {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_int_distribution<int> dim(1, 16);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = len(rng);
    const int d = dim(rng);
    const Matrix q = random_matrix(rng, n, d), k = random_matrix(rng, n, d), v = random_matrix(rng, n, d);
    AttentionSpec spec;
    spec.window = 2 * static_cast<std::size_t>(n);
    worst = std::max(worst, (sliding_window_attention(q, k, v, spec) - full_attention_reference(q, k, v, spec))
                                .cwiseAbs()
                                .maxCoeff());
  }
  return {worst <= 1e-10, "50 instances, max abs diff " + fmt(worst)};
}

Outcome gradient_correctness() {
  const ModelConfig c = small_model(50, 1);
  Parameters p = Parameters::initialize(c, 7, 0.5);
  NormalSampler noise(99);
  for (auto& [name, t] : p.named()) {
    if (t->rank() == 1) for (double& x : t->data) x += 0.3 * noise();
  }
  const Example ex = random_example(c, 12, 6, 3);
  const LossResult r = loss_and_gradients(p, c, ex);
  auto grads = r.grads.named();
  auto params = p.named();
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (std::size_t a = 0; a < params.size(); ++a) {
    Tensor& t = *params[a].second;
    const Tensor& g = *grads[a].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + h;
      const double up = sequence_loss(p, c, ex).mean();
      t.data[i] = saved - h;
      const double down = sequence_loss(p, c, ex).mean();
      t.data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double e = std::abs(g.data[i] - numeric) / std::max({std::abs(g.data[i]), std::abs(numeric), 1e-6});
      if (e > worst) worst = e, worst_name = params[a].first;
      ++checked;
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " coordinates, max rel err " + fmt(worst) + " (" + worst_name + ")"};
}

Outcome checkpoint_parity() {
  ModelConfig c = small_model(50, 4);
  c.max_enc_len = 2048;
  c.window = 64;
  c.dropout = 0.1;
  const Parameters p = Parameters::initialize(c, 5);
  const Example ex = random_example(c, 2048, 12, 8);
  ActivationMeter plain, ckpt;
  LossOptions opts;
  opts.training = true;
  opts.dropout_seed = 42;
  opts.meter = &plain;
  const LossResult a = loss_and_gradients(p, c, ex, opts);
  opts.checkpointing = true;
  opts.meter = &ckpt;
  const LossResult b = loss_and_gradients(p, c, ex, opts);
  auto ga = a.grads.named();
  auto gb = b.grads.named();
  double diff = 0.0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    diff = std::max(diff, (ga[i].second->vec() - gb[i].second->vec()).cwiseAbs().maxCoeff());
  }
  const bool lower = ckpt.peak_total() < plain.peak_total();
  return {diff <= 1e-10 && lower, "max grad diff " + fmt(diff) + ", peak " + std::to_string(ckpt.peak_total()) +
                                      " vs " + std::to_string(plain.peak_total()) + " elements"};
}

Outcome adafactor_exactness() {
  OptimConfig cfg;
  cfg.learning_rate = 0.01;
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::bernoulli_distribution sign(0.5);
  double worst = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const std::size_t rows = 3 + static_cast<std::size_t>(seed) % 14;
    const std::size_t cols = 2 + static_cast<std::size_t>(seed * 7) % 15;
    Tensor p({rows, cols});
    Tensor g({rows, cols});
    std::vector<double> r(rows), col(cols);
    for (double& x : r) x = u(rng);
    for (double& x : col) x = u(rng);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        p.data[i * cols + j] = u(rng);
        g.data[i * cols + j] = (sign(rng) ? 1.0 : -1.0) * std::sqrt(r[i] * col[j]);
      }
    }
    // unfactored oracle at step 1: v = g^2 + eps1, update clipped by RMS
    std::vector<double> upd(p.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      upd[i] = g.data[i] / std::sqrt(g.data[i] * g.data[i] + cfg.eps1);
      sq += upd[i] * upd[i];
    }
    const double denom = std::max(1.0, std::sqrt(sq / static_cast<double>(p.size())) / cfg.clip_threshold);
    std::vector<double> expect = p.data;
    for (std::size_t i = 0; i < p.size(); ++i) expect[i] -= cfg.learning_rate * upd[i] / denom;
    AdafactorSlot slot = init_slot(p);
    adafactor_update(p, g, slot, 1, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p.data[i] - expect[i]));
  }
  return {worst <= 1e-12, "100 shapes, max abs diff " + fmt(worst)};
}

// Fixed 3-token, 2-step distribution; the greedy first token leads nowhere good.
struct TwoStepScorer {
  struct State {
    std::vector<TokenId> prefix;
    RowVector lp;
  };
  static RowVector probs(const std::vector<TokenId>& prefix) {
    RowVector p(3);
    if (prefix.empty()) {
      p << 0.5, 0.4, 0.1;
    } else if (prefix[0] == 0) {
      p << 0.35, 0.35, 0.3;
    } else if (prefix[0] == 1) {
      p << 0.9, 0.05, 0.05;
    } else {
      p << 0.2, 0.2, 0.6;
    }
    return p.array().log();
  }
  State start() const { return {{}, probs({})}; }
  State extend(const State& s, TokenId t) const {
    State n{s.prefix, {}};
    n.prefix.push_back(t);
    n.lp = probs(n.prefix);
    return n;
  }
  const RowVector& log_probs(const State& s) const { return s.lp; }
  TokenId eos() const { return 99; }
};

Outcome decoding() {
  std::size_t identical = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig c = small_model(20, 1);
    const Parameters p = Parameters::initialize(c, seed, 1.0);
    const Example ex = random_example(c, 6 + seed % 10, 2, seed + 100);
    GenConfig g;
    g.beam_size = 1;
    g.max_output_len = 16;
    const Generation a = greedy_decode(p, c, ex.source, g);
    const Generation b = beam_search(p, c, ex.source, g);
    if (a.tokens == b.tokens && a.log_prob == b.log_prob) ++identical;
  }
  const TwoStepScorer s;
  double best = -1e300;
  std::vector<TokenId> best_seq;
  for (TokenId a = 0; a < 3; ++a) {
    for (TokenId b = 0; b < 3; ++b) {
      const double lp = s.log_probs(s.start())(a) + s.log_probs(s.extend(s.start(), a))(b);
      if (lp > best) best = lp, best_seq = {a, b};
    }
  }
  GenConfig g;
  g.max_output_len = 2;
  g.beam_size = 2;
  const bool beam_ok = beam_search(s, g).tokens == best_seq;
  const bool greedy_misses = greedy_decode(s, g).tokens != best_seq;
  return {identical == 20 && beam_ok && greedy_misses,
          std::to_string(identical) + "/20 beam-1 runs identical to greedy; beam-2 optimal " + (beam_ok ? "yes" : "no") +
              ", greedy suboptimal " + (greedy_misses ? "yes" : "no")};
}

Outcome overfit() {
  ModelConfig c;
  c.vocab_size = 24;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 64;
  c.window = 8;
  c.max_enc_len = 16;
  c.max_dec_len = 8;
  std::vector<Example> pairs;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<TokenId> tok(4, 23);
  for (int i = 0; i < 5; ++i) {
    std::vector<TokenId> s{Tokenizer::kSos}, t{Tokenizer::kSos};
    for (int k = 0; k < 8; ++k) s.push_back(tok(rng));
    s.push_back(Tokenizer::kEos);
    for (int k = 0; k < 4; ++k) t.push_back(tok(rng));
    t.push_back(Tokenizer::kEos);
    pairs.push_back({make_encoding(s, Tokenizer::kDefaultGlobal), make_encoding(t)});
  }
  TrainingConfig t;
  t.learning_rate = 3e-3;
  t.eval_steps = 50;
  t.max_steps = 2000;
  t.patience = 1000;
  t.max_output_len = 8;
  t.max_input_len = 16;
  const TrainResult r = train(Parameters::initialize(c, 1), c, pairs, pairs, t, OptimConfig{});
  std::optional<std::size_t> first_below;
  for (const auto& e : r.log.evals) {
    if (e.validation_loss < 0.1) {
      first_below = e.step;
      break;
    }
  }
  std::size_t reproduced = 0;
  GenConfig g;
  g.max_output_len = 8;
  for (const Example& ex : pairs) {
    const Generation out = beam_search(r.best, c, ex.source, g);
    const std::vector<TokenId> expect(ex.target.ids.begin() + 1, ex.target.ids.end());
    if (out.tokens == expect) ++reproduced;
  }
  return {first_below.has_value() && reproduced == 5,
          "loss < 0.1 " + (first_below ? "at step " + std::to_string(*first_below) : std::string("never")) +
              ", best loss " + fmt(r.best_validation_loss) + ", beam reproduced " + std::to_string(reproduced) +
              "/5 targets"};
}

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

Outcome preprocessing() {
  const NormalizationRules rules = NormalizationRules::defaults();
  std::ifstream raw_in(LONGSUM_TEST_DATA "/composite_raw.json");
  std::ifstream gold_in(LONGSUM_TEST_DATA "/composite_expected.json");
  if (!raw_in || !gold_in) return {false, "fixture files missing"};
  const auto raw = nlohmann::json::parse(raw_in);
  const auto gold = nlohmann::json::parse(gold_in);
  RawDocument doc{raw["id"], raw["title"].get<std::string>(), raw["body"], raw["summary"],
                  raw["category"].get<std::string>()};
  const auto golden = normalize_document(doc, rules);
  const bool golden_ok = std::holds_alternative<CleanDocument>(golden) &&
                         std::get<CleanDocument>(golden).body == gold["body"].get<std::string>() &&
                         std::get<CleanDocument>(golden).summary == gold["summary"].get<std::string>();

  std::mt19937_64 rng(2024);
  std::size_t idempotent = 0;
  for (int i = 0; i < 1000; ++i) {
    RawDocument d{"doc" + std::to_string(i), std::nullopt, random_document_text(rng), random_document_text(rng),
                  std::nullopt};
    const auto first = normalize_document(d, rules);
    if (!std::holds_alternative<CleanDocument>(first)) {
      ++idempotent;  // rejection is a fixed point of its own
      continue;
    }
    const auto& c1 = std::get<CleanDocument>(first);
    const auto second = normalize_document(c1.as_raw(), rules);
    if (std::holds_alternative<CleanDocument>(second) && std::get<CleanDocument>(second).body == c1.body &&
        std::get<CleanDocument>(second).summary == c1.summary) {
      ++idempotent;
    }
  }

  const SplitRatios ratios;
  std::array<std::size_t, 3> counts{};
  bool stable = true;
  for (int i = 0; i < 10000; ++i) {
    const std::string id = "id-" + std::to_string(i);
    const Split s = assign_split(id, 7, ratios);
    stable = stable && s == assign_split(id, 7, ratios);
    ++counts[static_cast<std::size_t>(s)];
  }
  const bool split_ok = stable && std::abs(static_cast<double>(counts[0]) - 9000.0) <= 100.0 &&
                        std::abs(static_cast<double>(counts[1]) - 500.0) <= 100.0 &&
                        std::abs(static_cast<double>(counts[2]) - 500.0) <= 100.0;
  return {golden_ok && idempotent == 1000 && split_ok,
          std::string("golden ") + (golden_ok ? "match" : "mismatch") + ", idempotent " + std::to_string(idempotent) +
              "/1000, split " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
              std::to_string(counts[2])};
}

Outcome tokenizer_contracts() {
  const std::vector<std::string> texts = {"کتاب خوب است", "این کتاب را خواندم", "کتابخانه بزرگ", "خوب و بد",
                                          "متن فارسی با نیم‌فاصله می‌نویسیم", "abc abc ab\nسطر دوم"};
  const Tokenizer tok = Tokenizer::train(texts, 80);
  const std::vector<std::string> symbols = {"ک", "ت", "ا", "ب", " ", "خ", "و", "\n", "‌", "abc", "ی", "م"};
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, symbols.size() - 1);
  std::uniform_int_distribution<int> len(0, 30);
  std::size_t round_trips = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    for (int k = len(rng); k > 0; --k) s += symbols[pick(rng)];
    if (tok.decode(tok.encode(s, 1024).real_ids()) == s) ++round_trips;
  }

  // build a text of exactly 9000 subwords by appending single-subword pieces
  std::string text;
  std::size_t subwords = 0;
  const std::string unit = "کتاب ";
  const std::size_t per_unit = tok.encode(unit, 64, true).length - 2;
  while (subwords + per_unit <= 9000) text += unit, subwords += per_unit;
  while (subwords < 9000) text += "ک", subwords = tok.encode(text, 20000, true).length - 2;
  const Encoding full = tok.encode(text, 20000, true);
  const Encoding cut = tok.encode(text, 8192, true);
  const bool length_ok = full.length == 9002 && cut.length == 8192 && cut.ids.size() == 8192 &&
                         cut.ids[cut.length - 1] == Tokenizer::kEos;
  return {round_trips == 1000 && length_ok, std::to_string(round_trips) + "/1000 round trips; " +
                                                std::to_string(full.length - 2) + " subwords -> " +
                                                std::to_string(cut.length) + " ids, last is EOS " +
                                                (cut.ids[cut.length - 1] == Tokenizer::kEos ? "yes" : "no")};
}

Outcome linear_memory() {
  ModelConfig c = small_model(50, 2);
  c.window = 64;
  c.max_enc_len = 2048;
  std::size_t peaks[2];
  const std::size_t lengths[2] = {1024, 2048};
  for (int i = 0; i < 2; ++i) {
    const Parameters p = Parameters::initialize(c, 3);
    const Example ex = random_example(c, lengths[i], 6, 4);
    ActivationMeter meter;
    LossOptions opts;
    opts.meter = &meter;
    loss_and_gradients(p, c, ex, opts);
    peaks[i] = meter.peak(ActivationRegion::encoder);
  }
  const double ratio = static_cast<double>(peaks[1]) / static_cast<double>(peaks[0]);
  return {std::abs(ratio - 2.0) <= 0.2, "encoder peak " + std::to_string(peaks[1]) + " / " + std::to_string(peaks[0]) +
                                            " = " + fmt(ratio)};
}

struct Criterion {
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"f1-arithmetic", 1.0, f1_arithmetic},
      {"attention-equivalence", 5.0, attention_equivalence},
      {"gradient-correctness", 60.0, gradient_correctness},
      {"checkpointing-parity", 60.0, checkpoint_parity},
      {"adafactor-factored-exactness", 5.0, adafactor_exactness},
      {"decoding", 5.0, decoding},
      {"overfit-smoke", 300.0, overfit},
      {"preprocessing-goldens", 30.0, preprocessing},
      {"tokenizer-round-trip", 30.0, tokenizer_contracts},
      {"linear-memory-scaling", 60.0, linear_memory},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs <= c.limit_seconds;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(secs) << " s, limit "
              << c.limit_seconds << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
