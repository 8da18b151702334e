#include "aggnn/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aggnn/error.hpp"
#include "aggnn/kernels.hpp"
#include "aggnn/scalar.hpp"

namespace aggnn {

namespace {

const double kLogEpsilon = std::log(kFMeanEpsilon);

}  // namespace

std::vector<double> fmean_weights(std::span<const double> z, double p) {
  // (z+)^p = exp(p ln z+); shifting every exponent by the largest one
  // (including ln eps) leaves the ratio unchanged and keeps exp <= 1.
  std::vector<double> w(z.size());
  double shift = kLogEpsilon;
  for (std::size_t i = 0; i < z.size(); ++i) {
    w[i] = p * scalar::log_softplus(z[i]);
    shift = std::max(shift, w[i]);
  }
  double denom = std::exp(kLogEpsilon - shift);
  for (auto& v : w) {
    v = std::exp(v - shift);
    denom += v;
  }
  for (auto& v : w) v /= denom;
  return w;
}

double fmean_aggregate(std::span<const double> z, double p) {
  const auto w = fmean_weights(z, p);
  double a = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) a += w[i] * z[i];
  return a;
}

Tensor gaussian_affinity(std::span<const double> z, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidValueError("gaussian_affinity: sigma must be positive and finite");
  const std::size_t n = z.size();
  Tensor aff({n, n}, 1.0);
  const double c = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = z[i] - z[j];
      aff.at(i, j) = aff.at(j, i) = std::exp(-d * d * c);
    }
  return aff;
}

std::vector<double> gaussian_support_weights(const Tensor& affinity) {
  if (affinity.rank() != 2 || affinity.dim(0) != affinity.dim(1))
    throw ShapeError("gaussian_support_weights: expected a square matrix, got " + to_string(affinity.shape()));
  const std::size_t n = affinity.dim(0);
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w[i] += affinity.at(i, j);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

double gaussian_aggregate(std::span<const double> z, double sigma) {
  const auto w = gaussian_support_weights(gaussian_affinity(z, sigma));
  double a = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) a += w[i] * z[i];
  return a;
}

std::string_view to_string(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::fmean: return "fmean";
    case AggregationKind::gaussian: return "gaussian";
    case AggregationKind::hybrid_fmean: return "hybrid-fmean";
    case AggregationKind::hybrid_gaussian: return "hybrid-gaussian";
    case AggregationKind::hybrid_threeway: return "hybrid-threeway";
  }
  return "unknown";
}

// ---------------------------------------------------------------- layer

AggregationLayer::AggregationLayer(AggregationKind kind, std::size_t in_units, std::size_t out_units)
    : in_(in_units), out_(out_units), kind_(kind) {
  add_parameter("W", {out_units, in_units}, ParamGroupTag::standard);
  add_parameter("b", {out_units}, ParamGroupTag::standard);
  if (has_fmean()) add_parameter("p", {out_units}, ParamGroupTag::novel).value.fill(1.0);
  if (has_gaussian()) add_parameter("log_sigma", {out_units}, ParamGroupTag::novel);
  if (kind == AggregationKind::hybrid_threeway)
    add_parameter("alpha_raw", {out_units, 3}, ParamGroupTag::novel);
  else if (is_hybrid())
    add_parameter("alpha_raw", {out_units}, ParamGroupTag::novel);
}

bool AggregationLayer::has_fmean() const {
  return kind_ == AggregationKind::fmean || kind_ == AggregationKind::hybrid_fmean ||
         kind_ == AggregationKind::hybrid_threeway;
}

bool AggregationLayer::has_gaussian() const {
  return kind_ == AggregationKind::gaussian || kind_ == AggregationKind::hybrid_gaussian ||
         kind_ == AggregationKind::hybrid_threeway;
}

bool AggregationLayer::is_hybrid() const {
  return kind_ != AggregationKind::fmean && kind_ != AggregationKind::gaussian;
}

void AggregationLayer::initialize(std::mt19937_64& rng) {
  kaiming_uniform(parameter("W").value, in_, rng);
  parameter("b").value.fill(0.0);
  if (has_fmean()) parameter("p").value.fill(1.0);
  if (has_gaussian()) parameter("log_sigma").value.fill(0.0);
  if (is_hybrid()) parameter("alpha_raw").value.fill(0.0);
}

Tensor AggregationLayer::mix() const {
  Tensor m({out_, 3});
  switch (kind_) {
    case AggregationKind::fmean:
      for (std::size_t j = 0; j < out_; ++j) m.at(j, 1) = 1.0;
      break;
    case AggregationKind::gaussian:
      for (std::size_t j = 0; j < out_; ++j) m.at(j, 2) = 1.0;
      break;
    case AggregationKind::hybrid_fmean:
    case AggregationKind::hybrid_gaussian: {
      const auto& raw = parameter("alpha_raw").value;
      const std::size_t novel = kind_ == AggregationKind::hybrid_fmean ? 1 : 2;
      for (std::size_t j = 0; j < out_; ++j) {
        const double s = scalar::sigmoid(raw[j]);
        m.at(j, 0) = 1.0 - s;
        m.at(j, novel) = s;
      }
      break;
    }
    case AggregationKind::hybrid_threeway:
      m = softmax(parameter("alpha_raw").value, 1);
      break;
  }
  return m;
}

namespace {

kernels::AggregationArgs bind(const AggregationLayer& layer, const Tensor& x, const Tensor& mix) {
  return kernels::AggregationArgs{
      x.dim(0),
      layer.in_units(),
      layer.out_units(),
      x.data(),
      layer.parameter("W").value.data(),
      layer.parameter("b").value.data(),
      layer.has_fmean() ? layer.parameter("p").value.data() : std::span<const double>{},
      layer.has_gaussian() ? layer.parameter("log_sigma").value.data() : std::span<const double>{},
      mix.data()};
}

}  // namespace

Tensor AggregationLayer::infer(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_)
    throw ShapeError(std::string(kind()) + ": expected (batch x " + std::to_string(in_) + ") input, got " +
                     to_string(x.shape()));
  const Tensor m = mix();
  const kernels::AggregationArgs args = bind(*this, x, m);
  Tensor y({x.dim(0), out_});
  kernels::aggregate_forward(args, y.data());
  return y;
}

Tensor AggregationLayer::path_outputs(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_) throw ShapeError(std::string(kind()) + ": input shape mismatch");
  const Tensor m = mix();
  const kernels::AggregationArgs args = bind(*this, x, m);
  Tensor y({x.dim(0), out_});
  Tensor paths({x.dim(0), out_, 3});
  kernels::aggregate_forward(args, y.data(), paths.data());
  return paths;
}

Tensor AggregationLayer::forward(const Tensor& x) {
  Tensor y = infer(x);
  cache_ = x;
  return y;
}

Tensor AggregationLayer::backward(const Tensor& upstream) {
  if (!cache_) throw StateError(std::string(kind()) + ": backward called without a cached forward");
  const Tensor x = std::move(*cache_);
  cache_.reset();
  const std::size_t batch = x.dim(0);
  if (upstream.shape() != Shape{batch, out_}) throw ShapeError(std::string(kind()) + ": upstream shape mismatch");

  const Tensor m = mix();
  const kernels::AggregationArgs args = bind(*this, x, m);

  Tensor dx({batch, in_});
  Tensor dmix({out_, 3});
  const kernels::AggregationGrads grads{
      dx.data(),
      parameter("W").grad.data(),
      parameter("b").grad.data(),
      has_fmean() ? parameter("p").grad.data() : std::span<double>{},
      has_gaussian() ? parameter("log_sigma").grad.data() : std::span<double>{},
      dmix.data()};
  kernels::aggregate_backward(args, upstream.data(), grads);

  if (kind_ == AggregationKind::hybrid_threeway) {
    parameter("alpha_raw").grad = softmax_backward(m, dmix, 1);
  } else if (is_hybrid()) {
    auto& g = parameter("alpha_raw").grad;
    const std::size_t novel = kind_ == AggregationKind::hybrid_fmean ? 1 : 2;
    // out = s * A_novel + (1 - s) * A_linear, s = sigmoid(alpha_raw)
    for (std::size_t j = 0; j < out_; ++j) {
      const double s = m.at(j, novel);
      g[j] = s * (1.0 - s) * (dmix.at(j, novel) - dmix.at(j, 0));
    }
  }
  return dx;
}

HybridLayer::HybridLayer(AggregationKind kind, std::size_t in_units, std::size_t out_units)
    : AggregationLayer(kind, in_units, out_units) {
  if (!is_hybrid()) throw StateError("HybridLayer requires a hybrid aggregation kind");
}

}  // namespace aggnn
