// SPDX-License-Identifier: Apache-2.0
//
// Adafactor without momentum. Rank-2 parameters keep row and column
// second-moment accumulators; everything else keeps a full accumulator.
#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "longsum/parameters.hpp"
#include "longsum/tensor.hpp"

namespace longsum {

struct OptimConfig {
  double learning_rate = 1e-4;
  double eps1 = 1e-30;
  double eps2 = 1e-3;
  double clip_threshold = 1.0;
  /// beta2_t = 1 - t^(-decay_rate)
  double decay_rate = 0.8;
  /// lr_t = min(1e-2, 1/sqrt(t)) * max(eps2, RMS(param)) instead of the fixed rate.
  bool relative_step = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

struct AdafactorSlot {
  bool factored = false;
  std::vector<double> row;   // [rows] when factored
  std::vector<double> col;   // [cols] when factored
  std::vector<double> full;  // same size as the parameter otherwise
};

struct AdafactorState {
  std::uint64_t step = 0;
  std::vector<AdafactorSlot> slots;  // Parameters::named() order
};

AdafactorSlot init_slot(const Tensor& param);
AdafactorState init_state(const Parameters& params);

/// One update of a single tensor at step `t` (already incremented, t >= 1).
/// Throws std::invalid_argument on non-finite gradients or mismatched shapes.
void adafactor_update(Tensor& param, const Tensor& grad, AdafactorSlot& slot, std::uint64_t t,
                      const OptimConfig& config);

/// Advances state.step and updates every parameter in place.
void adafactor_step(Parameters& params, const Parameters& grads, AdafactorState& state, const OptimConfig& config);

}  // namespace longsum
