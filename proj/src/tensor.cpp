// SPDX-License-Identifier: Apache-2.0
#include "longsum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

namespace longsum {

Tensor::Tensor(std::vector<std::size_t> dims, double fill) : shape(std::move(dims)) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(n, fill);
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data.begin(), data.end(), value); }

double NormalSampler::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double NormalSampler::operator()() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace longsum
