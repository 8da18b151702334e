#include "aggnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aggnn/error.hpp"
#include "aggnn/kernels.hpp"
#include "aggnn/scalar.hpp"

namespace aggnn {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
  if (element_count(shape_) != data_.size())
    throw ShapeError("shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  return shape_[axis];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t width = size() / shape_[0];
  return std::span<double>(data_).subspan(r * width, width);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t width = size() / shape_[0];
  return std::span<const double>(data_).subspan(r * width, width);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw InvalidValueError(std::string(what) + ": non-finite value in input");
}

namespace {

template <typename F>
Tensor map(const Tensor& t, const char* what, F f) {
  require_finite(t, what);
  Tensor out = t;
  auto in = t.data();
  auto dst = out.data();
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor softplus(const Tensor& t) { return map(t, "softplus", scalar::softplus); }

Tensor sigmoid(const Tensor& t) { return map(t, "sigmoid", scalar::sigmoid); }

Tensor softmax(const Tensor& t, std::size_t axis) {
  require_finite(t, "softmax");
  const auto& shape = t.shape();
  if (axis >= shape.size()) throw ShapeError("softmax axis out of range for " + to_string(shape));
  const std::size_t len = shape[axis];
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t outer = t.size() / (len * inner);

  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = t[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, t[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(t[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

Tensor softplus_backward(const Tensor& input, const Tensor& upstream) {
  require_same_shape(input, upstream, "softplus_backward");
  Tensor out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scalar::sigmoid(input[i]);
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream) {
  require_same_shape(output, upstream, "sigmoid_backward");
  Tensor out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= output[i] * (1.0 - output[i]);
  return out;
}

Tensor softmax_backward(const Tensor& output, const Tensor& upstream, std::size_t axis) {
  require_same_shape(output, upstream, "softmax_backward");
  const auto& shape = output.shape();
  if (axis >= shape.size()) throw ShapeError("softmax_backward axis out of range for " + to_string(shape));
  const std::size_t len = shape[axis];
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t outer = output.size() / (len * inner);
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += output[base + k * inner] * upstream[base + k * inner];
      for (std::size_t k = 0; k < len; ++k)
        out[base + k * inner] = output[base + k * inner] * (upstream[base + k * inner] - dot);
    }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

}  // namespace aggnn
