#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

namespace causalmm {

// Stored in place of a masked score. softmax_rows maps it to exactly zero.
inline constexpr double kMaskSentinel = std::numeric_limits<double>::lowest();

using Shape = std::vector<std::size_t>;

// Dense row-major array of finite doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);

  // Throws DimensionError if data.size() != product(shape) and
  // InputError if any entry is NaN or infinite.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  // 2-D accessors; rows() is the product of all leading axes.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  const std::vector<double>& values() const noexcept { return data_; }

  // Throws InputError if any entry is NaN or infinite.
  void check_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& shape);

Tensor matmul(const Tensor& a, const Tensor& b);

// a + b elementwise; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);

// Stabilized row softmax. Entries equal to kMaskSentinel behave as -inf.
// Throws AllMaskedError if a row is entirely masked.
Tensor softmax_rows(const Tensor& x);

// Normalizes every vector along the last axis (variance epsilon 1e-5),
// then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace causalmm
