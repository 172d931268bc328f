// SPDX-License-Identifier: Apache-2.0
#include "longsum/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace longsum {

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate: must be > 0");
  if (!(clip_threshold > 0.0)) throw std::invalid_argument("clip_threshold: must be > 0");
  if (eps1 < 0.0) throw std::invalid_argument("eps1: must be >= 0");
  if (eps2 < 0.0) throw std::invalid_argument("eps2: must be >= 0");
  if (!(decay_rate > 0.0)) throw std::invalid_argument("decay_rate: must be > 0");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"eps1", c.eps1},           {"eps2", c.eps2},
       {"clip_threshold", c.clip_threshold}, {"decay_rate", c.decay_rate}, {"relative_step", c.relative_step}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.eps1 = j.value("eps1", c.eps1);
  c.eps2 = j.value("eps2", c.eps2);
  c.clip_threshold = j.value("clip_threshold", c.clip_threshold);
  c.decay_rate = j.value("decay_rate", c.decay_rate);
  c.relative_step = j.value("relative_step", c.relative_step);
}

AdafactorSlot init_slot(const Tensor& param) {
  AdafactorSlot slot;
  slot.factored = param.rank() == 2;
  if (slot.factored) {
    slot.row.assign(param.rows(), 0.0);
    slot.col.assign(param.cols(), 0.0);
  } else {
    slot.full.assign(std::max<std::size_t>(param.size(), 1), 0.0);
  }
  return slot;
}

AdafactorState init_state(const Parameters& params) {
  AdafactorState state;
  for (const auto& [name, t] : params.named()) state.slots.push_back(init_slot(*t));
  return state;
}

void adafactor_update(Tensor& param, const Tensor& grad, AdafactorSlot& slot, std::uint64_t t,
                      const OptimConfig& config) {
  if (grad.shape != param.shape) throw std::invalid_argument("grad: shape differs from parameter");
  if (!grad.all_finite()) throw std::invalid_argument("grad: non-finite entry");
  if (t == 0) throw std::invalid_argument("step: must be >= 1");
  const double beta2 = 1.0 - std::pow(static_cast<double>(t), -config.decay_rate);
  const std::size_t n = param.size();
  std::vector<double> update(n);

  if (slot.factored) {
    const std::size_t rows = param.rows();
    const std::size_t cols = param.cols();
    if (slot.row.size() != rows || slot.col.size() != cols) throw std::invalid_argument("state: slot shape mismatch");
    std::vector<double> row_mean(rows, 0.0);
    std::vector<double> col_mean(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double g2 = grad.data[i * cols + j] * grad.data[i * cols + j] + config.eps1;
        row_mean[i] += g2;
        col_mean[j] += g2;
      }
    }
    double row_sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      slot.row[i] = beta2 * slot.row[i] + (1.0 - beta2) * (row_mean[i] / static_cast<double>(cols));
      row_sum += slot.row[i];
    }
    for (std::size_t j = 0; j < cols; ++j) {
      slot.col[j] = beta2 * slot.col[j] + (1.0 - beta2) * (col_mean[j] / static_cast<double>(rows));
    }
    const double row_avg = row_sum / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double v = slot.row[i] * slot.col[j] / row_avg;
        update[i * cols + j] = grad.data[i * cols + j] / std::sqrt(v);
      }
    }
  } else {
    if (slot.full.size() != n) throw std::invalid_argument("state: slot shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      slot.full[i] = beta2 * slot.full[i] + (1.0 - beta2) * (grad.data[i] * grad.data[i] + config.eps1);
      update[i] = grad.data[i] / std::sqrt(slot.full[i]);
    }
  }

  // 0/0 when eps1 = 0 and a gradient entry is exactly zero
  for (double& u : update) {
    if (std::isnan(u)) u = 0.0;
  }
  double sq = 0.0;
  for (double u : update) sq += u * u;
  const double rms = n == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(n));
  const double denom = std::max(1.0, rms / config.clip_threshold);

  double lr = config.learning_rate;
  if (config.relative_step) {
    double p2 = 0.0;
    for (double p : param.data) p2 += p * p;
    const double param_rms = n == 0 ? 0.0 : std::sqrt(p2 / static_cast<double>(n));
    lr = std::min(1e-2, 1.0 / std::sqrt(static_cast<double>(t))) * std::max(config.eps2, param_rms);
  }
  for (std::size_t i = 0; i < n; ++i) param.data[i] -= lr * (update[i] / denom);
}

void adafactor_step(Parameters& params, const Parameters& grads, AdafactorState& state, const OptimConfig& config) {
  auto p = params.named();
  auto g = grads.named();
  if (g.size() != p.size() || state.slots.size() != p.size()) {
    throw std::invalid_argument("state: parameter layout mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!g[i].second->all_finite()) throw std::invalid_argument("grad: non-finite entry in " + p[i].first);
  }
  ++state.step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    try {
      adafactor_update(*p[i].second, *g[i].second, state.slots[i], state.step, config);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(p[i].first + ": " + e.what());
    }
  }
}

}  // namespace longsum
