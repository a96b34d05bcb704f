#include "causalmm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "causalmm/error.hpp"

namespace causalmm {

namespace {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
  check_finite();
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  t.check_finite();
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : data_.size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

void Tensor::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw InputError("non-finite tensor entry at flat index " + std::to_string(i));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto out_row = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      if (aip == 0.0) continue;
      auto b_row = b.row(p);
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
  out.check_finite();
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " + " +
                         shape_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    double max = kMaskSentinel;
    bool any = false;
    for (double v : row) {
      if (v == kMaskSentinel) continue;
      max = any ? std::max(max, v) : v;
      any = true;
    }
    if (!any) throw AllMaskedError("softmax row " + std::to_string(r) + " is entirely masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = row[j] == kMaskSentinel ? 0.0 : std::exp(row[j] - max);
      sum += row[j];
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm width " + std::to_string(d) + " vs gain " +
                         std::to_string(gain.size()) + ", bias " + std::to_string(bias.size()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - mean) * inv * gain[j] + bias[j];
  }
  return out;
}

}  // namespace causalmm
