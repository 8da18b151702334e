#include "aggnn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "aggnn/error.hpp"
#include "aggnn/kernels.hpp"

namespace aggnn {

std::string_view to_string(ParamGroupTag tag) { return tag == ParamGroupTag::novel ? "novel" : "standard"; }

Parameter& Layer::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw StateError("layer " + std::string(kind()) + " has no parameter '" + std::string(name) + "'");
}

const Parameter& Layer::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw StateError("layer " + std::string(kind()) + " has no parameter '" + std::string(name) + "'");
}

Parameter& Layer::add_parameter(std::string name, Shape shape, ParamGroupTag group) {
  Tensor value(shape);
  Tensor grad(std::move(shape));
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), group, false});
  return params_.back();
}

void kaiming_uniform(Tensor& weight, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : weight.data()) w = dist(rng);
}

namespace {

template <typename T>
T take(std::optional<T>& cache, std::string_view who) {
  if (!cache) throw StateError(std::string(who) + ": backward called without a cached forward");
  T value = std::move(*cache);
  cache.reset();
  return value;
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view who) {
  if (t.rank() != rank)
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                     to_string(t.shape()));
}

}  // namespace

// ---------------------------------------------------------------- linear

LinearLayer::LinearLayer(std::size_t in_units, std::size_t out_units) : in_(in_units), out_(out_units) {
  add_parameter("W", {out_units, in_units}, ParamGroupTag::standard);
  add_parameter("b", {out_units}, ParamGroupTag::standard);
}

LinearLayer::LinearLayer(Tensor weight, Tensor bias) : LinearLayer(weight.dim(1), weight.dim(0)) {
  if (bias.rank() != 1 || bias.dim(0) != out_) throw ShapeError("linear: bias does not match weight rows");
  params_[0].value = std::move(weight);
  params_[1].value = std::move(bias);
}

void LinearLayer::initialize(std::mt19937_64& rng) {
  kaiming_uniform(params_[0].value, in_, rng);
  params_[1].value.fill(0.0);
}

Tensor LinearLayer::infer(const Tensor& x) const {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_)
    throw ShapeError("linear: expected " + std::to_string(in_) + " input units, got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0);
  Tensor y({batch, out_});
  for (std::size_t r = 0; r < batch; ++r) std::copy_n(params_[1].value.raw(), out_, y.raw() + r * out_);
  kernels::gemm_nt(x.data(), params_[0].value.data(), y.data(), batch, in_, out_, true);
  return y;
}

Tensor LinearLayer::forward(const Tensor& x) {
  Tensor y = infer(x);
  cache_ = x;
  return y;
}

Tensor LinearLayer::backward(const Tensor& upstream) {
  const Tensor x = take(cache_, "linear");
  const std::size_t batch = x.dim(0);
  if (upstream.shape() != Shape{batch, out_}) throw ShapeError("linear: upstream shape mismatch");
  kernels::gemm_tn(upstream.data(), x.data(), params_[0].grad.data(), out_, batch, in_);
  auto db = params_[1].grad.data();
  std::fill(db.begin(), db.end(), 0.0);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t o = 0; o < out_; ++o) db[o] += upstream.at(r, o);
  Tensor dx({batch, in_});
  kernels::gemm_nn(upstream.data(), params_[0].value.data(), dx.data(), batch, out_, in_);
  return dx;
}

// ---------------------------------------------------------------- conv

Conv2dLayer::Conv2dLayer(std::size_t in_channels, std::size_t out_channels) : in_(in_channels), out_(out_channels) {
  add_parameter("W", {out_channels, in_channels, 3, 3}, ParamGroupTag::standard);
  add_parameter("b", {out_channels}, ParamGroupTag::standard);
}

void Conv2dLayer::initialize(std::mt19937_64& rng) {
  kaiming_uniform(params_[0].value, in_ * 9, rng);
  params_[1].value.fill(0.0);
}

Tensor Conv2dLayer::infer(const Tensor& x) const {
  require_rank(x, 4, "conv3x3");
  if (x.dim(1) != in_) throw ShapeError("conv3x3: channel mismatch, got " + to_string(x.shape()));
  const kernels::ConvDims d{x.dim(0), in_, out_, x.dim(2), x.dim(3)};
  Tensor y({d.batch, out_, d.height, d.width});
  kernels::conv3x3_forward(d, x.data(), params_[0].value.data(), params_[1].value.data(), y.data());
  return y;
}

Tensor Conv2dLayer::forward(const Tensor& x) {
  Tensor y = infer(x);
  cache_ = x;
  return y;
}

Tensor Conv2dLayer::backward(const Tensor& upstream) {
  const Tensor x = take(cache_, "conv3x3");
  const kernels::ConvDims d{x.dim(0), in_, out_, x.dim(2), x.dim(3)};
  if (upstream.shape() != Shape{d.batch, out_, d.height, d.width})
    throw ShapeError("conv3x3: upstream shape mismatch");
  Tensor dx(x.shape());
  kernels::conv3x3_backward(d, x.data(), params_[0].value.data(), upstream.data(), dx.data(),
                            params_[0].grad.data(), params_[1].grad.data());
  return dx;
}

// ---------------------------------------------------------------- maxpool

Tensor MaxPool2x2Layer::infer(const Tensor& x) const {
  require_rank(x, 4, "maxpool2x2");
  if (x.dim(2) < 2 || x.dim(3) < 2) throw ShapeError("maxpool2x2: spatial size below 2");
  const kernels::PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  Tensor y({d.batch, d.channels, d.height / 2, d.width / 2});
  std::vector<std::size_t> argmax(y.size());
  kernels::maxpool2x2_forward(d, x.data(), y.data(), argmax);
  return y;
}

Tensor MaxPool2x2Layer::forward(const Tensor& x) {
  require_rank(x, 4, "maxpool2x2");
  if (x.dim(2) < 2 || x.dim(3) < 2) throw ShapeError("maxpool2x2: spatial size below 2");
  const kernels::PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  Tensor y({d.batch, d.channels, d.height / 2, d.width / 2});
  Cache cache{x.shape(), std::vector<std::size_t>(y.size())};
  kernels::maxpool2x2_forward(d, x.data(), y.data(), cache.argmax);
  cache_ = std::move(cache);
  return y;
}

Tensor MaxPool2x2Layer::backward(const Tensor& upstream) {
  const Cache cache = take(cache_, "maxpool2x2");
  const auto& s = cache.input_shape;
  const kernels::PoolDims d{s[0], s[1], s[2], s[3]};
  if (upstream.size() != cache.argmax.size()) throw ShapeError("maxpool2x2: upstream shape mismatch");
  Tensor dx(s);
  kernels::maxpool2x2_backward(d, upstream.data(), cache.argmax, dx.data());
  return dx;
}

// ---------------------------------------------------------------- relu

Tensor ReluLayer::infer(const Tensor& x) const {
  Tensor y = x;
  for (auto& v : y.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return y;
}

Tensor ReluLayer::forward(const Tensor& x) {
  Tensor y = infer(x);
  cache_ = x;
  return y;
}

Tensor ReluLayer::backward(const Tensor& upstream) {
  const Tensor x = take(cache_, "relu");
  if (upstream.shape() != x.shape()) throw ShapeError("relu: upstream shape mismatch");
  Tensor dx = upstream;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------- flatten

Tensor FlattenLayer::infer(const Tensor& x) const {
  if (x.rank() < 1) throw ShapeError("flatten: rank-0 input");
  const std::size_t batch = x.dim(0);
  return x.reshaped({batch, x.size() / batch});
}

Tensor FlattenLayer::forward(const Tensor& x) {
  Tensor y = infer(x);
  cache_ = x.shape();
  return y;
}

Tensor FlattenLayer::backward(const Tensor& upstream) {
  const Shape shape = take(cache_, "flatten");
  return upstream.reshaped(shape);
}

// ---------------------------------------------------------------- loss

XentResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_xent");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("softmax_xent: label count does not match batch");
  for (int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw InvalidValueError("softmax_xent: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");

  Tensor probs = softmax(logits, 1);
  double loss = 0.0;
  Tensor grad = probs;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto label = static_cast<std::size_t>(labels[r]);
    // log-softmax directly, so a saturated wrong class stays finite
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    loss += (mx + std::log(total)) - row[label];
    grad.at(r, label) -= 1.0;
  }
  for (auto& g : grad.data()) g *= inv_batch;
  return {loss * inv_batch, std::move(grad)};
}

}  // namespace aggnn
