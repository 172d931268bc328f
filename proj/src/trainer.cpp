// SPDX-License-Identifier: Apache-2.0
#include "longsum/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "longsum/checkpoint.hpp"

namespace longsum {
namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

nlohmann::json eval_json(const EvalEntry& e) {
  return {{"step", e.step}, {"validation_loss", e.validation_loss}, {"perplexity", e.perplexity}};
}

struct Progress {
  std::size_t step = 0;
  std::optional<std::size_t> best_step;
  double best_loss = 0.0;
  TrainLog log;
};

void write_state(const std::filesystem::path& dir, const ModelConfig& config, const TrainingConfig& tcfg,
                 const OptimConfig& ocfg, const Parameters& params, const Parameters& best,
                 const AdafactorState& opt, const Progress& p) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "config.json", std::ios::trunc);
    out << nlohmann::json{{"model", config}, {"training", tcfg}, {"optimizer", ocfg}}.dump(2) << '\n';
  }
  save_parameters(dir / "params.bin", config, params);
  save_parameters(dir / "best.bin", config, best);
  save_optimizer_state(dir / "optimizer.bin", params, opt);
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : p.log.evals) evals.push_back(eval_json(e));
  nlohmann::json state = {{"step", p.step},
                          {"best_step", p.best_step ? nlohmann::json(*p.best_step) : nlohmann::json(nullptr)},
                          {"best_validation_loss", p.best_loss},
                          {"step_losses", p.log.step_losses},
                          {"evals", evals},
                          {"stop_reason", to_string(p.log.stop_reason)}};
  {
    std::ofstream out(dir / "trainer_state.json", std::ios::trunc);
    out << state.dump() << '\n';
  }
  std::ofstream log(dir / "log.jsonl", std::ios::trunc);
  std::size_t next_eval = 0;
  for (std::size_t i = 0; i < p.log.step_losses.size(); ++i) {
    log << nlohmann::json{{"step", i + 1}, {"loss", p.log.step_losses[i]}}.dump() << '\n';
    while (next_eval < p.log.evals.size() && p.log.evals[next_eval].step == i + 1) {
      log << nlohmann::json{{"eval", eval_json(p.log.evals[next_eval++])}}.dump() << '\n';
    }
  }
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate: must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size: must be >= 1");
  if (grad_accum_steps < 1) throw std::invalid_argument("grad_accum_steps: must be >= 1");
  if (eval_steps < 1) throw std::invalid_argument("eval_steps: must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience: must be >= 1");
  if (max_input_len < 3) throw std::invalid_argument("max_input_len: must be >= 3");
  if (max_output_len < 1) throw std::invalid_argument("max_output_len: must be >= 1");
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"learning_rate", c.learning_rate},   {"batch_size", c.batch_size},
       {"grad_accum_steps", c.grad_accum_steps}, {"max_input_len", c.max_input_len},
       {"max_output_len", c.max_output_len}, {"eval_steps", c.eval_steps},
       {"patience", c.patience},             {"max_steps", c.max_steps},
       {"checkpointing", c.checkpointing},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.max_input_len = j.value("max_input_len", c.max_input_len);
  c.max_output_len = j.value("max_output_len", c.max_output_len);
  c.eval_steps = j.value("eval_steps", c.eval_steps);
  c.patience = j.value("patience", c.patience);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.checkpointing = j.value("checkpointing", c.checkpointing);
  c.seed = j.value("seed", c.seed);
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::early_stop ? "early_stop" : "max_steps";
}

std::vector<Example> make_examples(const Tokenizer& tokenizer, std::span<const CorpusRecord> records,
                                   std::size_t max_input_len, std::size_t max_output_len) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.source = tokenizer.encode(r.article, max_input_len);
    // the decoder reads SOS + all but the last target token, so a target of
    // max_output_len generated tokens needs max_output_len + 1 ids
    ex.target = tokenizer.encode(r.summary, max_output_len + 1, false, {});
    out.push_back(std::move(ex));
  }
  return out;
}

double evaluate_validation(const Parameters& params, const ModelConfig& config, std::span<const Example> split) {
  if (split.empty()) throw std::invalid_argument("validation: empty split");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : split) {
    const SequenceLoss l = sequence_loss(params, config, ex);
    total += l.total_nll;
    tokens += l.tokens;
  }
  if (tokens == 0) throw std::invalid_argument("validation: no target tokens");
  return total / static_cast<double>(tokens);
}

bool should_stop(std::span<const double> history, std::size_t patience) {
  if (patience == 0 || history.size() <= patience) return false;
  const std::size_t split = history.size() - patience;
  const double best = *std::min_element(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(split));
  return std::all_of(history.begin() + static_cast<std::ptrdiff_t>(split), history.end(),
                     [best](double v) { return v >= best; });
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix64(seed ^ mix64(epoch)));
  for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);
  return order;
}

TrainResult train(const Parameters& init, const ModelConfig& config, std::span<const Example> train_split,
                  std::span<const Example> validation_split, const TrainingConfig& tcfg, const OptimConfig& ocfg,
                  const TrainOptions& options) {
  tcfg.validate();
  OptimConfig opt_cfg = ocfg;
  opt_cfg.learning_rate = tcfg.learning_rate;
  opt_cfg.validate();
  if (train_split.empty()) throw std::invalid_argument("train: empty training split");
  if (validation_split.empty()) throw std::invalid_argument("validation: empty split");
  if (options.resume && !options.checkpoint_dir) throw std::invalid_argument("resume: needs a checkpoint directory");

  Parameters params = init;
  Parameters best = init;
  AdafactorState opt = init_state(params);
  Progress p;

  if (options.resume) {
    const auto& dir = *options.checkpoint_dir;
    LoadedModel current = load_parameters(dir / "params.bin");
    if (!(current.config == config)) throw std::invalid_argument("resume: model config differs from checkpoint");
    params = std::move(current.params);
    best = load_parameters(dir / "best.bin").params;
    opt = load_optimizer_state(dir / "optimizer.bin", params);
    std::ifstream in(dir / "trainer_state.json");
    if (!in) throw std::invalid_argument("resume: missing trainer_state.json");
    const auto state = nlohmann::json::parse(in);
    p.step = state.at("step").get<std::size_t>();
    if (!state.at("best_step").is_null()) p.best_step = state.at("best_step").get<std::size_t>();
    p.best_loss = state.at("best_validation_loss").get<double>();
    p.log.step_losses = state.at("step_losses").get<std::vector<double>>();
    for (const auto& e : state.at("evals")) {
      p.log.evals.push_back({e.at("step").get<std::size_t>(), e.at("validation_loss").get<double>(),
                             e.at("perplexity").get<double>()});
    }
    if (opt.step != p.step) throw std::invalid_argument("resume: optimizer step disagrees with trainer state");
  }

  const std::size_t n = train_split.size();
  const std::size_t per_step = tcfg.batch_size * tcfg.grad_accum_steps;
  std::vector<double> history;
  for (const auto& e : p.log.evals) history.push_back(e.validation_loss);

  LossOptions loss_opts;
  loss_opts.training = true;
  loss_opts.checkpointing = tcfg.checkpointing;

  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  bool stopped = false;
  while (p.step < tcfg.max_steps) {
    const std::size_t step = p.step + 1;
    Parameters grads = Parameters::zeros(config);
    double loss = 0.0;
    for (std::size_t k = 0; k < per_step; ++k) {
      // global example index; epochs are consecutive blocks of n examples
      const std::size_t idx = p.step * per_step + k;
      const std::size_t epoch = idx / n;
      if (epoch != cached_epoch) {
        order = epoch_order(n, tcfg.seed, epoch);
        cached_epoch = epoch;
      }
      const Example& ex = train_split[order[idx % n]];
      loss_opts.dropout_seed = mix64(tcfg.seed ^ mix64(idx + 1));
      LossResult r;
      try {
        r = loss_and_gradients(params, config, ex, loss_opts);
      } catch (const NonFiniteError& e) {
        throw TrainingError(step, e.what());
      }
      loss += r.loss;
      grads.add_scaled(r.grads, 1.0 / static_cast<double>(per_step));
    }
    loss /= static_cast<double>(per_step);
    try {
      adafactor_step(params, grads, opt, opt_cfg);
    } catch (const std::invalid_argument& e) {
      throw TrainingError(step, e.what());
    }
    p.step = step;
    p.log.step_losses.push_back(loss);
    if (options.on_step) options.on_step(step, loss);

    if (step % tcfg.eval_steps == 0) {
      const double val = evaluate_validation(params, config, validation_split);
      p.log.evals.push_back({step, val, std::exp(val)});
      history.push_back(val);
      if (!p.best_step || val < p.best_loss) {
        p.best_step = step;
        p.best_loss = val;
        best = params;
      }
      if (should_stop(history, tcfg.patience)) {
        p.log.stop_reason = StopReason::early_stop;
        stopped = true;
      }
      if (options.checkpoint_dir) write_state(*options.checkpoint_dir, config, tcfg, opt_cfg, params, best, opt, p);
      if (stopped) break;
    }
  }
  if (!stopped) p.log.stop_reason = StopReason::max_steps;
  if (options.checkpoint_dir) write_state(*options.checkpoint_dir, config, tcfg, opt_cfg, params, best, opt, p);

  TrainResult result;
  result.best = p.best_step ? std::move(best) : params;
  result.best_step = p.best_step;
  result.best_validation_loss = p.best_loss;
  result.final_params = std::move(params);
  result.log = std::move(p.log);
  return result;
}

}  // namespace longsum
