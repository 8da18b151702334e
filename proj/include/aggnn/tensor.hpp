#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace aggnn {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. The shape never changes size after
/// construction; reshaped() returns a copy with a compatible shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access; the tensor must be rank 2.
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws InvalidValueError naming `what` if any entry is NaN or infinite.
void require_finite(const Tensor& t, const char* what);

// Elementwise, overflow-safe.
Tensor softplus(const Tensor& t);
Tensor sigmoid(const Tensor& t);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& t, std::size_t axis);

// Vector-Jacobian products of the three functions above. `input` is the
// forward argument for softplus; `output` is the forward result for
// sigmoid and softmax.
Tensor softplus_backward(const Tensor& input, const Tensor& upstream);
Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream);
Tensor softmax_backward(const Tensor& output, const Tensor& upstream, std::size_t axis);

// Plain matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

double l2_norm(std::span<const double> values);

}  // namespace aggnn
