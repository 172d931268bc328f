// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace longsum {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using RowVectorMap = Eigen::Map<RowVector>;
using ConstRowVectorMap = Eigen::Map<const RowVector>;

/// Dense array of rank 1 or 2, row-major.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  MatrixMap mat() { return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())}; }
  ConstMatrixMap mat() const {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  RowVectorMap vec() { return {data.data(), static_cast<Eigen::Index>(data.size())}; }
  ConstRowVectorMap vec() const { return {data.data(), static_cast<Eigen::Index>(data.size())}; }

  bool all_finite() const;
  void fill(double value);
  bool operator==(const Tensor&) const = default;
};

/// Portable normal sampler (Box-Muller over mt19937_64) so that seeded
/// initialization is identical across standard libraries.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}
  double operator()();
  double uniform();  // [0, 1)
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace longsum
