#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gca {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles with shape metadata. Vectors have rank 1,
// matrices rank 2; a scalar is stored as a length-1 vector.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor scalar(double value) { return vector({value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_vector() const noexcept { return shape_.size() == 1; }
  bool is_matrix() const noexcept { return shape_.size() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  // Bitwise equality of shape and data (NaN payloads included).
  bool bit_equal(const Tensor& other) const noexcept;

  std::string shape_string() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Shape& shape);

// FNV-1a over the raw bytes of a sequence of tensors; used for cheap
// bit-exactness comparisons of parameter sets.
std::uint64_t checksum(std::span<const Tensor* const> tensors);

}  // namespace gca
