#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace noft {

/// Row-major dense matrix used for plans, logits and projected features.
template <typename Real>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, Real fill = Real(0)) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<Real> values)
      : rows(r), cols(c), data(std::move(values)) {}

  Real& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }
  Real operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }

  std::span<Real> row(std::size_t i) noexcept { return {data.data() + i * cols, cols}; }
  std::span<const Real> row(std::size_t i) const noexcept { return {data.data() + i * cols, cols}; }

  template <typename Other>
  Matrix<Other> cast() const {
    return Matrix<Other>(rows, cols, std::vector<Other>(data.begin(), data.end()));
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace noft
