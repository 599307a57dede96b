#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cmem {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major fp64 array. Every dimension is positive and every value is
/// finite at construction; operations never broadcast implicitly.
class Array {
 public:
  /// A single zero with shape {1}.
  Array();
  /// Zero-filled array of the given shape.
  explicit Array(Shape shape);
  Array(Shape shape, std::vector<double> data);

  static Array filled(Shape shape, double value);
  static Array scalar(double value);
  static Array vector(std::vector<double> values);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a size-1 array.
  double item() const;

  Array reshaped(Shape shape) const;
  void fill(double value);
  /// Elementwise `*this += other`; shapes must match.
  void add_inplace(const Array& other);
  bool all_finite() const;

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws DimensionError naming both shapes unless they are identical.
void require_same_shape(const Array& a, const Array& b, const char* what);

double max_abs_diff(const Array& a, const Array& b);

}  // namespace cmem
