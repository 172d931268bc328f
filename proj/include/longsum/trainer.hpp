// SPDX-License-Identifier: Apache-2.0
//
// Teacher-forced fine-tuning with Adafactor, periodic validation, early
// stopping on validation loss and resumable checkpoint directories.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "longsum/corpus.hpp"
#include "longsum/model.hpp"
#include "longsum/optimizer.hpp"
#include "longsum/tokenizer.hpp"

namespace longsum {

struct TrainingConfig {
  /// Overrides OptimConfig::learning_rate.
  double learning_rate = 1e-4;
  std::size_t batch_size = 1;
  /// Micro-batches whose gradients are averaged into one optimizer step.
  std::size_t grad_accum_steps = 1;
  std::size_t max_input_len = 8192;
  std::size_t max_output_len = 512;
  std::size_t eval_steps = 4000;
  std::size_t patience = 3;
  std::size_t max_steps = 100000;
  bool checkpointing = true;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

struct EvalEntry {
  std::size_t step = 0;
  double validation_loss = 0.0;
  double perplexity = 0.0;
};

enum class StopReason { max_steps, early_stop };
std::string_view to_string(StopReason reason);

struct TrainLog {
  std::vector<double> step_losses;  // index i holds step i+1
  std::vector<EvalEntry> evals;
  StopReason stop_reason = StopReason::max_steps;
};

struct TrainResult {
  /// Parameters at the best validation loss; the final parameters when no
  /// evaluation ran.
  Parameters best;
  std::optional<std::size_t> best_step;
  double best_validation_loss = 0.0;
  Parameters final_params;
  TrainLog log;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainOptions {
  /// When set, config, parameters, best parameters, optimizer state and the
  /// log are written here after every evaluation and at the end.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Continue from the state stored in checkpoint_dir.
  bool resume = false;
  /// Called after each optimizer step with (step, loss).
  std::function<void(std::size_t, double)> on_step;
};

/// Tokenizes records into examples; the target holds SOS, at most
/// max_output_len - 1 subwords and EOS.
std::vector<Example> make_examples(const Tokenizer& tokenizer, std::span<const CorpusRecord> records,
                                   std::size_t max_input_len, std::size_t max_output_len);

/// Mean per-token cross-entropy over the split.
double evaluate_validation(const Parameters& params, const ModelConfig& config, std::span<const Example> split);

/// True iff history has more than `patience` entries and the last `patience`
/// are all >= the minimum of the entries before them.
bool should_stop(std::span<const double> history, std::size_t patience);

/// Example order for one epoch (Fisher-Yates, seeded by (seed, epoch)).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

TrainResult train(const Parameters& init, const ModelConfig& config, std::span<const Example> train_split,
                  std::span<const Example> validation_split, const TrainingConfig& tcfg, const OptimConfig& ocfg,
                  const TrainOptions& options = {});

}  // namespace longsum
