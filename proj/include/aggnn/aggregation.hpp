#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "aggnn/layers.hpp"
#include "aggnn/tensor.hpp"

namespace aggnn {

// Stability constant in the F-Mean weight denominator.
inline constexpr double kFMeanEpsilon = 1e-8;

// ---------------------------------------------------------------------------
// Single-unit aggregation functions over a contribution vector z.

/// Power-normalised weights softplus(z_i)^p / (sum_j softplus(z_j)^p + eps).
/// Evaluated in the log domain with a max shift, so every finite z and any
/// real p gives finite, nonnegative weights summing to just under one.
std::vector<double> fmean_weights(std::span<const double> z, double p);

/// sum_i w_i(z, p) * z_i. Weights multiply the raw contributions.
double fmean_aggregate(std::span<const double> z, double p);

/// Symmetric n x n matrix exp(-(z_i - z_j)^2 / (2 sigma^2)), unit diagonal.
/// Throws InvalidValueError unless sigma > 0.
Tensor gaussian_affinity(std::span<const double> z, double sigma);

/// Row sums of `affinity` normalised to sum to one.
std::vector<double> gaussian_support_weights(const Tensor& affinity);

/// sum_i alpha_i * z_i with alpha the support weights at width sigma.
double gaussian_aggregate(std::span<const double> z, double sigma);

// ---------------------------------------------------------------------------
// Layers

enum class AggregationKind {
  fmean,            // pure F-Mean
  gaussian,         // pure Gaussian Support
  hybrid_fmean,     // sigmoid blend of F-Mean and linear
  hybrid_gaussian,  // sigmoid blend of Gaussian and linear
  hybrid_threeway,  // softmax blend of linear, F-Mean, Gaussian
};

std::string_view to_string(AggregationKind kind);

/// Shared machinery for the aggregation layers. Each output unit j forms
/// the Hadamard contributions z = W[j, :] * x and reduces them with its own
/// aggregation parameters; the bias is added after aggregation. Parameters
/// appear in the order W, b, p, log_sigma, alpha_raw (absent ones skipped).
class AggregationLayer : public Layer {
 public:
  AggregationLayer(AggregationKind kind, std::size_t in_units, std::size_t out_units);

  // Same draws as LinearLayer::initialize for W; p = 1, log_sigma = 0,
  // alpha_raw = 0.
  void initialize(std::mt19937_64& rng);

  std::string_view kind() const override { return to_string(kind_); }
  AggregationKind aggregation_kind() const { return kind_; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& upstream) override;

  std::size_t in_units() const { return in_; }
  std::size_t out_units() const { return out_; }

  bool has_fmean() const;
  bool has_gaussian() const;
  bool is_hybrid() const;

  // Effective blend coefficients per unit, out x 3 in the order
  // (linear, F-Mean, Gaussian).
  Tensor mix() const;

  // Unblended path outputs (linear, F-Mean, Gaussian) per sample and unit,
  // batch x out x 3, without bias.
  Tensor path_outputs(const Tensor& x) const;

 private:
  std::size_t in_;
  std::size_t out_;
  AggregationKind kind_;
  std::optional<Tensor> cache_;
};

class FMeanLayer : public AggregationLayer {
 public:
  FMeanLayer(std::size_t in_units, std::size_t out_units)
      : AggregationLayer(AggregationKind::fmean, in_units, out_units) {}
};

class GaussianSupportLayer : public AggregationLayer {
 public:
  GaussianSupportLayer(std::size_t in_units, std::size_t out_units)
      : AggregationLayer(AggregationKind::gaussian, in_units, out_units) {}
};

/// Linear path blended with one or both novel paths. Two-way kinds use
/// sigmoid(alpha_raw[j]) as the novel-path weight; the three-way kind uses
/// softmax(alpha_raw[j, :]) over (linear, F-Mean, Gaussian).
class HybridLayer : public AggregationLayer {
 public:
  HybridLayer(AggregationKind kind, std::size_t in_units, std::size_t out_units);
};

}  // namespace aggnn
