#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mgta {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { kF64 = 0, kF32 = 1 };

std::size_t num_elements(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of reals. Storage is always double; a tensor tagged
/// kF32 holds values that are exactly representable as float.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  DType dtype() const { return dtype_; }
  // Rounds every value through float and tags the tensor kF32.
  void round_to(DType dtype);

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  void fill(double v);

  // Bitwise equality of shape and values.
  bool identical(const Tensor& other) const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::kF64;
};

}  // namespace mgta
