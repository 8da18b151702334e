#include <algorithm>
#include <cmath>
#include <vector>

#include "aggnn/aggregation.hpp"
#include "aggnn/kernels.hpp"
#include "aggnn/scalar.hpp"

// Reference aggregation built from the public single-unit functions, with
// the full n x n affinity matrix and ordered-pair sums.
namespace aggnn::kernels::serial {

namespace {

std::vector<double> contributions(const AggregationArgs& args, std::size_t b, std::size_t j) {
  std::vector<double> z(args.in);
  for (std::size_t i = 0; i < args.in; ++i) z[i] = args.weight[j * args.in + i] * args.x[b * args.in + i];
  return z;
}

}  // namespace

void aggregate_forward(const AggregationArgs& args, std::span<double> y, std::span<double> paths) {
  for (std::size_t b = 0; b < args.batch; ++b) {
    for (std::size_t j = 0; j < args.out; ++j) {
      const auto z = contributions(args, b, j);
      double lin = 0.0;
      for (double v : z) lin += v;
      const double fm = args.power.empty() ? 0.0 : fmean_aggregate(z, args.power[j]);
      const double gs = args.log_sigma.empty() ? 0.0 : gaussian_aggregate(z, std::exp(args.log_sigma[j]));
      const std::size_t idx = b * args.out + j;
      y[idx] = args.mix[j * 3] * lin + args.mix[j * 3 + 1] * fm + args.mix[j * 3 + 2] * gs + args.bias[j];
      if (!paths.empty()) {
        paths[idx * 3] = lin;
        paths[idx * 3 + 1] = fm;
        paths[idx * 3 + 2] = gs;
      }
    }
  }
}

void aggregate_backward(const AggregationArgs& args, std::span<const double> dy, const AggregationGrads& grads) {
  const std::size_t n = args.in;
  std::fill(grads.x.begin(), grads.x.end(), 0.0);
  std::fill(grads.weight.begin(), grads.weight.end(), 0.0);
  std::fill(grads.bias.begin(), grads.bias.end(), 0.0);
  std::fill(grads.power.begin(), grads.power.end(), 0.0);
  std::fill(grads.log_sigma.begin(), grads.log_sigma.end(), 0.0);
  std::fill(grads.mix.begin(), grads.mix.end(), 0.0);

  for (std::size_t b = 0; b < args.batch; ++b) {
    for (std::size_t j = 0; j < args.out; ++j) {
      const double u = dy[b * args.out + j];
      const auto z = contributions(args, b, j);
      std::vector<double> dz(n, args.mix[j * 3] * u);
      double lin = 0.0;
      for (double v : z) lin += v;
      grads.mix[j * 3] += u * lin;
      grads.bias[j] += u;

      if (!args.power.empty()) {
        const double p = args.power[j];
        const auto w = fmean_weights(z, p);
        double a = 0.0;
        for (std::size_t i = 0; i < n; ++i) a += w[i] * z[i];
        grads.mix[j * 3 + 1] += u * a;
        const double uf = args.mix[j * 3 + 1] * u;
        for (std::size_t i = 0; i < n; ++i) {
          // d(z+^p)/dz = p z+^p sigmoid(z) / z+ ; d(z+^p)/dp = z+^p ln z+
          dz[i] += uf * w[i] * (1.0 + (z[i] - a) * p * scalar::sigmoid(z[i]) / scalar::softplus(z[i]));
          grads.power[j] += uf * w[i] * (z[i] - a) * std::log(scalar::softplus(z[i]));
        }
      }

      if (!args.log_sigma.empty()) {
        const double sigma = std::exp(args.log_sigma[j]);
        const Tensor aff = gaussian_affinity(z, sigma);
        std::vector<double> rows(n, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < n; ++k) rows[i] += aff.at(i, k);
          total += rows[i];
        }
        double a = 0.0;
        for (std::size_t i = 0; i < n; ++i) a += rows[i] / total * z[i];
        grads.mix[j * 3 + 2] += u * a;
        const double ug = args.mix[j * 3 + 2] * u;
        std::vector<double> h(n);
        for (std::size_t i = 0; i < n; ++i) {
          dz[i] += ug * rows[i] / total;
          h[i] = ug * (z[i] - a) / total;
        }
        const double inv_var = 1.0 / (sigma * sigma);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < n; ++k) {
            if (i == k) continue;
            const double d = z[i] - z[k];
            dz[i] -= (h[i] + h[k]) * aff.at(i, k) * d * inv_var;
            grads.log_sigma[j] += h[i] * aff.at(i, k) * d * d * inv_var;
          }
      }

      for (std::size_t i = 0; i < n; ++i) {
        grads.weight[j * n + i] += dz[i] * args.x[b * n + i];
        grads.x[b * n + i] += dz[i] * args.weight[j * n + i];
      }
    }
  }
}

}  // namespace aggnn::kernels::serial
