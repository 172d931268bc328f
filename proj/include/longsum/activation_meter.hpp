// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <utility>

namespace longsum {

enum class ActivationRegion { encoder = 0, decoder = 1 };

/// Counts activation elements held for the backward pass, with peaks per
/// region and overall. Not thread-safe; one meter per training step.
class ActivationMeter {
 public:
  void acquire(ActivationRegion region, std::size_t elements);
  void release(ActivationRegion region, std::size_t elements);

  std::size_t current(ActivationRegion region) const { return current_[index(region)]; }
  std::size_t peak(ActivationRegion region) const { return peak_[index(region)]; }
  std::size_t current_total() const { return current_[0] + current_[1]; }
  std::size_t peak_total() const { return peak_total_; }

 private:
  static std::size_t index(ActivationRegion r) { return static_cast<std::size_t>(r); }
  std::array<std::size_t, 2> current_{};
  std::array<std::size_t, 2> peak_{};
  std::size_t peak_total_ = 0;
};

/// RAII registration of a block of activations with a meter (may be null).
class ActivationLease {
 public:
  ActivationLease() = default;
  ActivationLease(ActivationMeter* meter, ActivationRegion region, std::size_t elements)
      : meter_(meter), region_(region), elements_(elements) {
    if (meter_ != nullptr) meter_->acquire(region_, elements_);
  }
  ActivationLease(const ActivationLease&) = delete;
  ActivationLease& operator=(const ActivationLease&) = delete;
  ActivationLease(ActivationLease&& other) noexcept { *this = std::move(other); }
  ActivationLease& operator=(ActivationLease&& other) noexcept {
    if (this != &other) {
      reset();
      meter_ = std::exchange(other.meter_, nullptr);
      region_ = other.region_;
      elements_ = std::exchange(other.elements_, 0);
    }
    return *this;
  }
  ~ActivationLease() { reset(); }

  void reset() {
    if (meter_ != nullptr) meter_->release(region_, elements_);
    meter_ = nullptr;
    elements_ = 0;
  }

 private:
  ActivationMeter* meter_ = nullptr;
  ActivationRegion region_ = ActivationRegion::encoder;
  std::size_t elements_ = 0;
};

inline void ActivationMeter::acquire(ActivationRegion region, std::size_t elements) {
  auto& cur = current_[index(region)];
  cur += elements;
  if (cur > peak_[index(region)]) peak_[index(region)] = cur;
  if (current_total() > peak_total_) peak_total_ = current_total();
}

inline void ActivationMeter::release(ActivationRegion region, std::size_t elements) {
  current_[index(region)] -= elements;
}

}  // namespace longsum
