#include "conceptmem/array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "conceptmem/error.hpp"

namespace cmem {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << " x ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("array shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("array dimension must be positive, got " + to_string(shape));
  }
}

}  // namespace

Array::Array() : shape_{1}, data_(1, 0.0) {}

Array::Array(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(element_count(shape_), 0.0);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
  if (!all_finite()) throw NumericError("array of shape " + to_string(shape_) + " contains NaN or Inf");
}

Array Array::filled(Shape shape, double value) {
  Array a(std::move(shape));
  a.fill(value);
  if (!std::isfinite(value)) throw NumericError("fill value is not finite");
  return a;
}

Array Array::scalar(double value) { return Array({1}, {value}); }

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Array({rows, cols}, std::move(values));
}

double Array::item() const {
  if (data_.size() != 1) throw DimensionError("item() needs a single-element array, got " + to_string(shape_));
  return data_[0];
}

Array Array::reshaped(Shape shape) const {
  Array out;
  out.shape_ = std::move(shape);
  validate_shape(out.shape_);
  if (element_count(out.shape_) != data_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(out.shape_));
  }
  out.data_ = data_;
  return out;
}

void Array::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Array::add_inplace(const Array& other) {
  require_same_shape(*this, other, "add_inplace");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Array& a, const Array& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

double max_abs_diff(const Array& a, const Array& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cmem
