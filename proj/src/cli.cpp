// SPDX-License-Identifier: Apache-2.0
#include "longsum/cli.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "longsum/bertscore.hpp"
#include "longsum/checkpoint.hpp"
#include "longsum/corpus.hpp"
#include "longsum/generate.hpp"
#include "longsum/normalize.hpp"
#include "longsum/tokenizer.hpp"
#include "longsum/trainer.hpp"

namespace longsum {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::array<std::string_view, 8> kCommands = {"normalize",       "build-corpus", "split",    "stats",
                                                       "train-tokenizer", "train",        "generate", "evaluate"};

// Failure that maps to exit 1 with a named field.
struct FieldError : std::runtime_error {
  FieldError(std::string f, const std::string& msg) : std::runtime_error(msg), field(std::move(f)) {}
  std::string field;
};

std::string usage() {
  std::string text = "usage: longsum <command> [options]\ncommands:";
  for (auto c : kCommands) text += std::string(" ") + std::string(c);
  return text + "\nrun `longsum <command> --help` for options\n";
}

bool parse_switch(const std::string& field, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "0" || s == "no") return false;
  throw FieldError(field, field + ": expected on/off, got '" + v + "'");
}

void require_file(const std::string& field, const fs::path& p) {
  if (!fs::exists(p)) throw FieldError(field, field + ": no such file: " + p.string());
}

// JSON config keys are long option names; each becomes `--key value` placed
// before the command-line flags so that the flags win.
std::vector<std::string> config_args(const fs::path& path, const CLI::App& cmd) {
  std::ifstream in(path);
  if (!in) throw FieldError("config", "config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FieldError("config", std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw FieldError("config", "config: expected a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    const CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") throw FieldError(key, key + ": unknown config field");
    const auto emit = [&](const json& v) {
      out.push_back("--" + key);
      if (v.is_string()) {
        out.push_back(v.get<std::string>());
      } else if (v.is_boolean()) {
        out.push_back(v.get<bool>() ? "on" : "off");
      } else if (v.is_number()) {
        out.push_back(v.dump());
      } else {
        throw FieldError(key, key + ": unsupported value type");
      }
    };
    if (value.is_array()) {
      for (const auto& v : value) emit(v);
    } else {
      emit(value);
    }
  }
  return out;
}

template <class F>
void wrap_field(const std::string& field, F&& fn) {
  try {
    fn();
  } catch (const FieldError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    const auto colon = msg.find(':');
    throw FieldError(colon == std::string::npos ? field : msg.substr(0, colon), msg);
  }
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FieldError("input", "input: cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FieldError("input", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

json length_json(const LengthSummary& s) {
  return {{"histogram", s.histogram}, {"mean", s.mean}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

// ------------------------------------------------------------------ commands

struct Paths {
  std::string input;
  std::string output;
};

json cmd_normalize(const std::string& input, const std::string& output, const std::string& rejected,
                   const std::string& char_map, std::size_t min_tokens, double threshold,
                   const std::vector<std::string>& markers) {
  NormalizationRules rules = NormalizationRules::defaults();
  if (!char_map.empty()) {
    require_file("char-map", char_map);
    wrap_field("char-map", [&] { load_char_map_file(char_map, rules); });
  }
  rules.min_line_tokens = min_tokens;
  rules.persian_threshold = threshold;
  if (!markers.empty()) rules.front_matter_markers = markers;
  wrap_field("rules", [&] { rules.validate(); });
  require_file("input", input);

  std::ofstream out(output, std::ios::trunc);
  if (!out) throw FieldError("output", "output: cannot open " + output);
  std::ofstream rej;
  if (!rejected.empty()) {
    rej.open(rejected, std::ios::trunc);
    if (!rej) throw FieldError("rejected", "rejected: cannot open " + rejected);
  }
  std::size_t kept = 0;
  std::map<std::string, std::size_t> reasons;
  std::size_t line_no = 0;
  for (const json& j : read_jsonl(input)) {
    ++line_no;
    RawDocument doc;
    try {
      doc.id = j.at("id").get<std::string>();
      doc.title = optional_string(j, "title");
      doc.body = j.at("body").get<std::string>();
      doc.summary = j.at("summary").get<std::string>();
      doc.category = optional_string(j, "category");
    } catch (const json::exception& e) {
      throw FieldError("input", input + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const NormalizeResult r = normalize_document(doc, rules);
    if (const auto* clean = std::get_if<CleanDocument>(&r)) {
      json o = json::object();
      o["id"] = clean->id;
      o["title"] = clean->title ? json(*clean->title) : json(nullptr);
      o["body"] = clean->body;
      o["summary"] = clean->summary;
      o["category"] = clean->category ? json(*clean->category) : json(nullptr);
      out << o.dump() << '\n';
      ++kept;
    } else {
      const auto& rj = std::get<Rejection>(r);
      ++reasons[std::string(to_string(rj.reason))];
      if (rej.is_open()) {
        rej << json{{"id", rj.id}, {"reason", to_string(rj.reason)}, {"persian_ratio", rj.persian_ratio}}.dump()
            << '\n';
      }
    }
  }
  return {{"command", "normalize"}, {"input", input}, {"output", output}, {"kept", kept}, {"rejected", reasons}};
}

json cmd_build_corpus(const std::string& input, const std::string& output) {
  require_file("input", input);
  std::vector<CorpusRecord> records;
  for (const json& j : read_jsonl(input)) {
    CleanDocument doc;
    doc.id = j.at("id").get<std::string>();
    doc.title = optional_string(j, "title");
    doc.body = j.at("body").get<std::string>();
    doc.summary = j.at("summary").get<std::string>();
    doc.category = optional_string(j, "category");
    records.push_back(make_record(doc));
  }
  const std::size_t n = write_corpus(records, output);
  return {{"command", "build-corpus"}, {"input", input}, {"output", output}, {"records", n}};
}

json cmd_split(const std::string& input, const std::string& output_dir, const std::string& ratios_text,
               std::uint64_t seed) {
  SplitRatios ratios;
  wrap_field("ratios", [&] { ratios = SplitRatios::parse(ratios_text); });
  require_file("input", input);
  const auto records = read_corpus(input);
  fs::create_directories(output_dir);
  const auto counts = write_splits(records, output_dir, seed, ratios);
  return {{"command", "split"},
          {"input", input},
          {"output_dir", output_dir},
          {"seed", seed},
          {"counts", {{"train", counts[0]}, {"validation", counts[1]}, {"test", counts[2]}}}};
}

json cmd_stats(const std::string& input) {
  require_file("input", input);
  const CorpusStats s = compute_stats(read_corpus(input));
  return {{"command", "stats"},
          {"input", input},
          {"records", s.record_count},
          {"histogram_edges", kHistogramEdges},
          {"article_tokens", length_json(s.article)},
          {"summary_tokens", length_json(s.summary)}};
}

json cmd_train_tokenizer(const std::string& input, const std::string& output, std::size_t vocab_size) {
  require_file("input", input);
  std::vector<std::string> texts;
  for (const auto& r : read_corpus(input)) {
    texts.push_back(r.article);
    texts.push_back(r.summary);
  }
  Tokenizer tok;
  wrap_field("vocab-size", [&] { tok = Tokenizer::train(texts, vocab_size); });
  fs::create_directories(output);
  tok.save_dir(output);
  return {{"command", "train-tokenizer"},
          {"input", input},
          {"output", output},
          {"vocab_size", tok.vocab_size()},
          {"merges", tok.merges().size()}};
}

struct TrainArgs {
  std::string train_path, validation_path, tokenizer_dir, output_dir, init_weights;
  ModelConfig model;
  TrainingConfig training;
  std::string checkpointing = "on";
  std::uint64_t init_seed = 0;
  bool resume = false;
};

json cmd_train(TrainArgs a) {
  a.training.checkpointing = parse_switch("gradient-checkpointing", a.checkpointing);
  wrap_field("training", [&] { a.training.validate(); });
  require_file("train", a.train_path);
  require_file("validation", a.validation_path);
  require_file("tokenizer", fs::path(a.tokenizer_dir) / "vocab.txt");
  const Tokenizer tok = Tokenizer::load_dir(a.tokenizer_dir);
  a.model.vocab_size = tok.vocab_size();
  a.model.max_enc_len = a.training.max_input_len;
  a.model.max_dec_len = a.training.max_output_len;
  wrap_field("model", [&] { a.model.validate(); });

  const auto train_records = read_corpus(a.train_path);
  const auto val_records = read_corpus(a.validation_path);
  if (train_records.empty()) throw FieldError("train", "train: empty split");
  if (val_records.empty()) throw FieldError("validation", "validation: empty split");
  const auto train_ex = make_examples(tok, train_records, a.training.max_input_len, a.training.max_output_len);
  const auto val_ex = make_examples(tok, val_records, a.training.max_input_len, a.training.max_output_len);

  Parameters init = Parameters::initialize(a.model, a.init_seed);
  std::size_t imported = 0;
  if (!a.init_weights.empty()) {
    require_file("init-weights", a.init_weights);
    imported = import_weights(a.init_weights, init);
  }
  TrainOptions opts;
  opts.checkpoint_dir = fs::path(a.output_dir);
  opts.resume = a.resume;
  const TrainResult r = train(init, a.model, train_ex, val_ex, a.training, OptimConfig{}, opts);
  json evals = json::array();
  for (const auto& e : r.log.evals) {
    evals.push_back({{"step", e.step}, {"validation_loss", e.validation_loss}, {"perplexity", e.perplexity}});
  }
  return {{"command", "train"},
          {"output_dir", a.output_dir},
          {"model", (fs::path(a.output_dir) / "best.bin").string()},
          {"steps", r.log.step_losses.size()},
          {"final_loss", r.log.step_losses.empty() ? json(nullptr) : json(r.log.step_losses.back())},
          {"best_step", r.best_step ? json(*r.best_step) : json(nullptr)},
          {"best_validation_loss", r.best_step ? json(r.best_validation_loss) : json(nullptr)},
          {"evals", evals},
          {"imported_arrays", imported},
          {"stop_reason", to_string(r.log.stop_reason)}};
}

json cmd_generate(const std::string& model_path, const std::string& tokenizer_dir, const std::string& input,
                  const std::string& output, GenConfig gen, std::size_t max_input_len) {
  wrap_field("generation", [&] { gen.validate(); });
  require_file("model", model_path);
  require_file("input", input);
  const LoadedModel m = load_parameters(model_path);
  const Tokenizer tok = Tokenizer::load_dir(tokenizer_dir);
  if (tok.vocab_size() != m.config.vocab_size) {
    throw FieldError("tokenizer", "tokenizer: vocabulary size differs from the model's");
  }
  if (gen.max_output_len > m.config.max_dec_len) {
    throw FieldError("max-output-len", "max-output-len: exceeds the model's decoder length " +
                                           std::to_string(m.config.max_dec_len));
  }
  const std::size_t input_len = std::min(max_input_len, m.config.max_enc_len);
  std::ofstream out(output, std::ios::trunc);
  if (!out) throw FieldError("output", "output: cannot open " + output);
  std::size_t count = 0;
  std::size_t total_tokens = 0;
  for (const auto& r : read_corpus(input)) {
    const Encoding enc = tok.encode(r.article, input_len);
    const Generation g = beam_search(m.params, m.config, enc, gen);
    json o = json::object();
    o["id"] = r.id;
    o["summary"] = tok.decode(g.tokens);
    o["tokens"] = g.tokens.size();
    o["score"] = g.score;
    out << o.dump() << '\n';
    ++count;
    total_tokens += g.tokens.size();
  }
  return {{"command", "generate"},
          {"input", input},
          {"output", output},
          {"records", count},
          {"beam_size", gen.beam_size},
          {"max_output_len", gen.max_output_len},
          {"mean_tokens", count == 0 ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(count)}};
}

std::map<std::string, std::string> summaries_by_id(const std::string& field, const fs::path& path) {
  require_file(field, path);
  std::map<std::string, std::string> out;
  for (const json& j : read_jsonl(path)) {
    const auto id = j.at("id").get<std::string>();
    if (!out.emplace(id, j.at("summary").get<std::string>()).second) {
      throw FieldError(field, field + ": duplicate id " + id);
    }
  }
  return out;
}

json cmd_evaluate(const std::string& candidates, const std::string& references, const std::string& tokenizer_dir,
                  const std::string& model_path, const std::string& embeddings_path) {
  if (model_path.empty() == embeddings_path.empty()) {
    throw FieldError("model", "model: give exactly one of --model or --embeddings");
  }
  const auto cand = summaries_by_id("candidates", candidates);
  const auto ref = summaries_by_id("references", references);
  const Tokenizer tok = Tokenizer::load_dir(tokenizer_dir);
  std::vector<TokenPair> pairs;
  for (const auto& [id, text] : ref) {
    auto it = cand.find(id);
    if (it == cand.end()) throw FieldError("candidates", "candidates: missing id " + id);
    pairs.emplace_back(tok.encode_subwords(it->second), tok.encode_subwords(text));
  }
  if (pairs.empty()) throw FieldError("references", "references: no records");

  EmbeddingTable table;
  if (!model_path.empty()) {
    require_file("model", model_path);
    const LoadedModel m = load_parameters(model_path);
    std::vector<Encoding> contexts;
    for (const auto& [c, r] : pairs) {
      for (const auto* ids : {&c, &r}) {
        std::vector<TokenId> seq{Tokenizer::kSos};
        seq.insert(seq.end(), ids->begin(), ids->begin() + static_cast<std::ptrdiff_t>(
                                                              std::min(ids->size(), m.config.max_enc_len - 2)));
        seq.push_back(Tokenizer::kEos);
        contexts.push_back(make_encoding(std::move(seq), Tokenizer::kDefaultGlobal));
      }
    }
    table = EmbeddingTable::from_model(m.params, m.config, contexts);
  } else {
    require_file("embeddings", embeddings_path);
    table = EmbeddingTable::load_file(embeddings_path, tok);
  }
  const ScoreReport s = score_corpus(pairs, table);
  return {{"command", "evaluate"}, {"pairs", pairs.size()}, {"precision", s.precision}, {"recall", s.recall},
          {"f1", s.f1}};
}

}  // namespace

int run_command(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  if (args.empty() || std::find(kCommands.begin(), kCommands.end(), args[0]) == kCommands.end()) {
    if (!args.empty() && (args[0] == "--help" || args[0] == "-h")) {
      out << usage();
      return 0;
    }
    err << usage();
    return 2;
  }
  const std::string command = args[0];

  CLI::App app{"longsum " + command};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file of option defaults (flags override)");

  std::string input, output, rejected, char_map, output_dir, ratios = "0.9,0.05,0.05", tokenizer_dir, model_path,
                                                              embeddings, candidates, references;
  std::uint64_t seed = 0;
  std::size_t min_tokens = 10;
  double threshold = 0.6;
  std::vector<std::string> markers;
  std::size_t vocab_size = 8000;
  TrainArgs ta;
  GenConfig gen;
  std::size_t gen_max_input = 8192;

  if (command == "normalize") {
    app.add_option("--input", input, "raw documents (JSONL: id, title, body, summary, category)")->required();
    app.add_option("--output", output, "normalized documents (JSONL)")->required();
    app.add_option("--rejected", rejected, "rejection records (JSONL)");
    app.add_option("--char-map", char_map, "character map file replacing the built-in map");
    app.add_option("--min-line-tokens", min_tokens, "drop lines with fewer tokens")->capture_default_str();
    app.add_option("--persian-threshold", threshold, "minimum Persian letter ratio")->capture_default_str();
    app.add_option("--front-matter-marker", markers, "heading that ends the front matter (repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  } else if (command == "build-corpus") {
    app.add_option("--input", input, "normalized documents (JSONL)")->required();
    app.add_option("--output", output, "corpus records (JSONL)")->required();
  } else if (command == "split") {
    app.add_option("--input", input, "corpus records (JSONL)")->required();
    app.add_option("--output-dir", output_dir, "directory for train/validation/test.jsonl")->required();
    app.add_option("--ratios", ratios, "train,validation,test fractions")->capture_default_str();
    app.add_option("--seed", seed, "split seed")->capture_default_str();
  } else if (command == "stats") {
    app.add_option("--input", input, "corpus records (JSONL)")->required();
  } else if (command == "train-tokenizer") {
    app.add_option("--input", input, "corpus records (JSONL)")->required();
    app.add_option("--output", output, "tokenizer directory")->required();
    app.add_option("--vocab-size", vocab_size, "target vocabulary size")->capture_default_str();
  } else if (command == "train") {
    app.add_option("--train", ta.train_path, "training split (JSONL)")->required();
    app.add_option("--validation", ta.validation_path, "validation split (JSONL)")->required();
    app.add_option("--tokenizer", ta.tokenizer_dir, "tokenizer directory")->required();
    app.add_option("--output", ta.output_dir, "checkpoint directory")->required();
    app.add_option("--init-weights", ta.init_weights, "checkpoint container with weights to import");
    app.add_option("--init-seed", ta.init_seed, "random initialization seed")->capture_default_str();
    app.add_flag("--resume", ta.resume, "continue from the checkpoint directory");
    app.add_option("--learning-rate", ta.training.learning_rate)->capture_default_str();
    app.add_option("--batch-size", ta.training.batch_size)->capture_default_str();
    app.add_option("--grad-accum-steps", ta.training.grad_accum_steps)->capture_default_str();
    app.add_option("--max-input-len", ta.training.max_input_len)->capture_default_str();
    app.add_option("--max-output-len", ta.training.max_output_len)->capture_default_str();
    app.add_option("--eval-steps", ta.training.eval_steps)->capture_default_str();
    app.add_option("--patience", ta.training.patience)->capture_default_str();
    app.add_option("--max-steps", ta.training.max_steps)->capture_default_str();
    app.add_option("--gradient-checkpointing", ta.checkpointing, "on|off")->capture_default_str();
    app.add_option("--seed", ta.training.seed, "shuffle and dropout seed")->capture_default_str();
    app.add_option("--d-model", ta.model.d_model)->capture_default_str();
    app.add_option("--heads", ta.model.n_heads)->capture_default_str();
    app.add_option("--enc-layers", ta.model.n_enc_layers)->capture_default_str();
    app.add_option("--dec-layers", ta.model.n_dec_layers)->capture_default_str();
    app.add_option("--d-ff", ta.model.d_ff)->capture_default_str();
    app.add_option("--window", ta.model.window, "encoder attention window (even)")->capture_default_str();
    app.add_option("--dropout", ta.model.dropout)->capture_default_str();
    app.add_flag("--tie-embeddings", ta.model.tie_embeddings);
  } else if (command == "generate") {
    app.add_option("--model", model_path, "model checkpoint")->required();
    app.add_option("--tokenizer", tokenizer_dir, "tokenizer directory")->required();
    app.add_option("--input", input, "corpus records (JSONL)")->required();
    app.add_option("--output", output, "generations (JSONL: id, summary, tokens, score)")->required();
    app.add_option("--beam-size", gen.beam_size)->capture_default_str();
    app.add_option("--max-output-len", gen.max_output_len)->capture_default_str();
    app.add_option("--max-input-len", gen_max_input)->capture_default_str();
    app.add_option("--length-penalty", gen.length_penalty)->capture_default_str();
  } else if (command == "evaluate") {
    app.add_option("--candidates", candidates, "JSONL with id and summary")->required();
    app.add_option("--references", references, "JSONL with id and summary")->required();
    app.add_option("--tokenizer", tokenizer_dir, "tokenizer directory")->required();
    app.add_option("--model", model_path, "model checkpoint supplying encoder embeddings");
    app.add_option("--embeddings", embeddings, "external embedding file");
  }

  auto fail = [&](const std::string& field, const std::string& message) {
    json e = {{"command", command}, {"error", message}};
    if (!field.empty()) e["field"] = field;
    err << e.dump() << '\n';
    return 1;
  };

  try {
    std::vector<std::string> rest(args.begin() + 1, args.end());
    // pick up --config first, then re-parse with its values in front
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (rest[i] == "--config" && i + 1 < rest.size()) config_path = rest[i + 1];
      if (rest[i].rfind("--config=", 0) == 0) config_path = rest[i].substr(9);
    }
    std::vector<std::string> full;
    if (!config_path.empty()) full = config_args(config_path, app);
    full.insert(full.end(), rest.begin(), rest.end());
    std::reverse(full.begin(), full.end());  // CLI11 consumes a reversed vector
    try {
      app.parse(full);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      std::string field;
      const std::string msg = e.what();
      const auto dash = msg.find("--");
      if (dash != std::string::npos) {
        const auto end = msg.find_first_of(" :,", dash);
        field = msg.substr(dash + 2, end == std::string::npos ? std::string::npos : end - dash - 2);
      }
      return fail(field, msg);
    }

    json summary;
    if (command == "normalize") {
      summary = cmd_normalize(input, output, rejected, char_map, min_tokens, threshold, markers);
    } else if (command == "build-corpus") {
      summary = cmd_build_corpus(input, output);
    } else if (command == "split") {
      summary = cmd_split(input, output_dir, ratios, seed);
    } else if (command == "stats") {
      summary = cmd_stats(input);
    } else if (command == "train-tokenizer") {
      summary = cmd_train_tokenizer(input, output, vocab_size);
    } else if (command == "train") {
      summary = cmd_train(ta);
    } else if (command == "generate") {
      summary = cmd_generate(model_path, tokenizer_dir, input, output, gen, gen_max_input);
    } else {
      summary = cmd_evaluate(candidates, references, tokenizer_dir, model_path, embeddings);
    }
    out << summary.dump() << '\n';
    return 0;
  } catch (const FieldError& e) {
    return fail(e.field, e.what());
  } catch (const std::exception& e) {
    return fail("", e.what());
  }
}

}  // namespace longsum
