#include <algorithm>
#include <cmath>
#include <vector>

#include "affinity_simd.hpp"
#include "aggnn/aggregation.hpp"
#include "aggnn/kernels.hpp"
#include "aggnn/scalar.hpp"

namespace aggnn::kernels {

namespace {

using Index = std::ptrdiff_t;

struct UnitScratch {
  explicit UnitScratch(std::size_t n, bool keep_pairs = false)
      : z(n), log_zp(n), w(n), rows(n), h(n), dz(n), tri(keep_pairs ? n * (n - 1) / 2 : 0) {}
  std::vector<double> z;
  std::vector<double> log_zp;
  std::vector<double> w;
  std::vector<double> rows;
  std::vector<double> h;
  std::vector<double> dz;
  std::vector<double> tri;  // pairwise affinities, backward only
};

// F-Mean output for one unit; leaves ln(z+) and the weights in scratch.
double fmean_path(UnitScratch& s, std::size_t n, double p) {
  const double log_eps = std::log(kFMeanEpsilon);
  double shift = log_eps;
  for (std::size_t i = 0; i < n; ++i) {
    s.log_zp[i] = scalar::log_softplus(s.z[i]);
    shift = std::max(shift, p * s.log_zp[i]);
  }
  double denom = std::exp(log_eps - shift);
  for (std::size_t i = 0; i < n; ++i) {
    s.w[i] = std::exp(p * s.log_zp[i] - shift);
    denom += s.w[i];
  }
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.w[i] /= denom;
    a += s.w[i] * s.z[i];
  }
  return a;
}

// Gaussian output for one unit; leaves affinity row sums in scratch and
// returns their total through `total`.
double gaussian_path(UnitScratch& s, std::size_t n, double c, double& total) {
  if (s.tri.empty())
    detail::affinity_row_sums(s.z.data(), n, c, s.rows.data());
  else
    detail::affinity_row_sums(s.z.data(), n, c, s.rows.data(), s.tri.data());
  total = 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += s.rows[i];
    num += s.rows[i] * s.z[i];
  }
  return num / total;
}

double half_inv_variance(double log_sigma) { return 0.5 * std::exp(-2.0 * log_sigma); }

}  // namespace

void aggregate_forward(const AggregationArgs& args, std::span<double> y, std::span<double> paths) {
  const std::size_t n = args.in;
  const bool use_fmean = !args.power.empty();
  const bool use_gauss = !args.log_sigma.empty();
  const auto total = static_cast<Index>(args.batch * args.out);

#pragma omp parallel
  {
    UnitScratch s(n);
#pragma omp for schedule(static)
    for (Index idx = 0; idx < total; ++idx) {
      const std::size_t b = static_cast<std::size_t>(idx) / args.out;
      const std::size_t j = static_cast<std::size_t>(idx) % args.out;
      const double* x = args.x.data() + b * n;
      const double* w = args.weight.data() + j * n;
      double lin = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        s.z[i] = w[i] * x[i];
        lin += s.z[i];
      }
      const double fm = use_fmean ? fmean_path(s, n, args.power[j]) : 0.0;
      double unused = 0.0;
      const double gs = use_gauss ? gaussian_path(s, n, half_inv_variance(args.log_sigma[j]), unused) : 0.0;
      const double* mix = args.mix.data() + j * 3;
      y[idx] = mix[0] * lin + mix[1] * fm + mix[2] * gs + args.bias[j];
      if (!paths.empty()) {
        paths[idx * 3 + 0] = lin;
        paths[idx * 3 + 1] = fm;
        paths[idx * 3 + 2] = gs;
      }
    }
  }
}

void aggregate_backward(const AggregationArgs& args, std::span<const double> dy, const AggregationGrads& grads) {
  const std::size_t n = args.in;
  const std::size_t out = args.out;
  const bool use_fmean = !args.power.empty();
  const bool use_gauss = !args.log_sigma.empty();

  // dL/dz per (sample, unit); reduced over units for dL/dx afterwards.
  std::vector<double> dz_all(args.batch * out * n);

#pragma omp parallel
  {
    UnitScratch s(n, use_gauss);
#pragma omp for schedule(dynamic, 4)
    for (Index jj = 0; jj < static_cast<Index>(out); ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      const double* w = args.weight.data() + j * n;
      const double* mix = args.mix.data() + j * 3;
      const double p = use_fmean ? args.power[j] : 0.0;
      const double c = use_gauss ? half_inv_variance(args.log_sigma[j]) : 0.0;
      double* dw = grads.weight.data() + j * n;
      std::fill(dw, dw + n, 0.0);
      double db = 0.0;
      double dp = 0.0;
      double dls = 0.0;
      double dmix[3] = {0.0, 0.0, 0.0};

      for (std::size_t b = 0; b < args.batch; ++b) {
        double* dz = dz_all.data() + (b * out + j) * n;
        const double u = dy[b * out + j];
        db += u;
        if (u == 0.0) continue;  // dz stays zero
        const double* x = args.x.data() + b * n;

        double lin = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          s.z[i] = w[i] * x[i];
          lin += s.z[i];
          dz[i] = mix[0] * u;
        }
        dmix[0] += u * lin;

        if (use_fmean) {
          const double a = fmean_path(s, n, p);
          dmix[1] += u * a;
          const double uf = mix[1] * u;
          double sp = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double centered = s.z[i] - a;
            dz[i] += uf * s.w[i] * (1.0 + centered * p * scalar::dlog_softplus(s.z[i]));
            sp += s.w[i] * centered * s.log_zp[i];
          }
          dp += uf * sp;
        }

        if (use_gauss) {
          double total = 0.0;
          const double a = gaussian_path(s, n, c, total);
          dmix[2] += u * a;
          const double ug = mix[2] * u;
          const double inv_total = 1.0 / total;
          for (std::size_t i = 0; i < n; ++i) {
            dz[i] += ug * s.rows[i] * inv_total;
            s.h[i] = ug * (s.z[i] - a) * inv_total;
          }
          dls += detail::affinity_backward(s.z.data(), n, c, s.h.data(), s.tri.data(), dz) * 2.0 * c;
        }

        for (std::size_t i = 0; i < n; ++i) dw[i] += dz[i] * x[i];
      }

      grads.bias[j] = db;
      if (use_fmean) grads.power[j] = dp;
      if (use_gauss) grads.log_sigma[j] = dls;
      for (std::size_t k = 0; k < 3; ++k) grads.mix[j * 3 + k] = dmix[k];
    }

#pragma omp for schedule(static)
    for (Index bb = 0; bb < static_cast<Index>(args.batch); ++bb) {
      const auto b = static_cast<std::size_t>(bb);
      double* dx = grads.x.data() + b * n;
      std::fill(dx, dx + n, 0.0);
      for (std::size_t j = 0; j < out; ++j) {
        const double* dz = dz_all.data() + (b * out + j) * n;
        const double* w = args.weight.data() + j * n;
#pragma omp simd
        for (std::size_t i = 0; i < n; ++i) dx[i] += dz[i] * w[i];
      }
    }
  }
}

}  // namespace aggnn::kernels
