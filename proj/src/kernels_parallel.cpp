#include <algorithm>
#include <cstddef>
#include <vector>

#include "aggnn/kernels.hpp"

namespace aggnn::kernels {

namespace {

using Index = std::ptrdiff_t;

constexpr std::size_t kTaps = 9;

// col[(c * 9 + ky * 3 + kx), (y * w + x)] = x[c, y + ky - 1, x + kx - 1]
void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, double* col) {
  const std::size_t hw = h * w;
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < static_cast<Index>(channels); ++c) {
    const double* plane = x + c * hw;
    for (std::size_t tap = 0; tap < kTaps; ++tap) {
      const auto dy = static_cast<Index>(tap / 3) - 1;
      const auto dx = static_cast<Index>(tap % 3) - 1;
      double* dst = col + (c * kTaps + tap) * hw;
      for (std::size_t yy = 0; yy < h; ++yy) {
        const Index sy = static_cast<Index>(yy) + dy;
        for (std::size_t xx = 0; xx < w; ++xx) {
          const Index sx = static_cast<Index>(xx) + dx;
          const bool inside = sy >= 0 && sy < static_cast<Index>(h) && sx >= 0 && sx < static_cast<Index>(w);
          dst[yy * w + xx] = inside ? plane[sy * static_cast<Index>(w) + sx] : 0.0;
        }
      }
    }
  }
}

void im2col_serial(const double* x, std::size_t channels, std::size_t h, std::size_t w, double* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t tap = 0; tap < kTaps; ++tap) {
      const auto dy = static_cast<Index>(tap / 3) - 1;
      const auto dx = static_cast<Index>(tap % 3) - 1;
      double* dst = col + (c * kTaps + tap) * hw;
      for (std::size_t yy = 0; yy < h; ++yy) {
        const Index sy = static_cast<Index>(yy) + dy;
        for (std::size_t xx = 0; xx < w; ++xx) {
          const Index sx = static_cast<Index>(xx) + dx;
          const bool inside = sy >= 0 && sy < static_cast<Index>(h) && sx >= 0 && sx < static_cast<Index>(w);
          dst[yy * w + xx] = inside ? x[c * hw + sy * static_cast<Index>(w) + sx] : 0.0;
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t channels, std::size_t h, std::size_t w, double* x) {
  const std::size_t hw = h * w;
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < static_cast<Index>(channels); ++c) {
    double* plane = x + c * hw;
    std::fill(plane, plane + hw, 0.0);
    for (std::size_t tap = 0; tap < kTaps; ++tap) {
      const auto dy = static_cast<Index>(tap / 3) - 1;
      const auto dx = static_cast<Index>(tap % 3) - 1;
      const double* src = col + (c * kTaps + tap) * hw;
      for (std::size_t yy = 0; yy < h; ++yy) {
        const Index sy = static_cast<Index>(yy) + dy;
        if (sy < 0 || sy >= static_cast<Index>(h)) continue;
        for (std::size_t xx = 0; xx < w; ++xx) {
          const Index sx = static_cast<Index>(xx) + dx;
          if (sx < 0 || sx >= static_cast<Index>(w)) continue;
          plane[sy * static_cast<Index>(w) + sx] += src[yy * w + xx];
        }
      }
    }
  }
}

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* crow = pc + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      pc[i * n + j] = accumulate ? pc[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* crow = pc + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aki = pa[kk * m + i];
      const double* brow = pb + kk * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
}

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y) {
  const std::size_t hw = d.height * d.width;
  const std::size_t rows = d.in_channels * kTaps;
#pragma omp parallel
  {
    std::vector<double> col(rows * hw);
#pragma omp for schedule(static)
    for (Index b = 0; b < static_cast<Index>(d.batch); ++b) {
      im2col_serial(x.data() + b * d.in_channels * hw, d.in_channels, d.height, d.width, col.data());
      std::span<double> yb = y.subspan(b * d.out_channels * hw, d.out_channels * hw);
      for (std::size_t o = 0; o < d.out_channels; ++o)
        std::fill_n(yb.begin() + static_cast<Index>(o * hw), hw, bias[o]);
      gemm_nn(weight, col, yb, d.out_channels, rows, hw, true);  // nested region: runs on this thread
    }
  }
}

void conv3x3_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                      std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                      std::span<double> dbias) {
  const std::size_t hw = d.height * d.width;
  const std::size_t rows = d.in_channels * kTaps;
  std::vector<double> col(rows * hw);
  std::vector<double> dcol(rows * hw);
  std::fill(dweight.begin(), dweight.end(), 0.0);
  std::fill(dbias.begin(), dbias.end(), 0.0);

  for (std::size_t b = 0; b < d.batch; ++b) {
    const auto dyb = dy.subspan(b * d.out_channels * hw, d.out_channels * hw);
    im2col(x.data() + b * d.in_channels * hw, d.in_channels, d.height, d.width, col.data());
    gemm_nt(dyb, col, dweight, d.out_channels, hw, rows, true);
    gemm_tn(weight, dyb, dcol, rows, d.out_channels, hw);
    col2im(dcol.data(), d.in_channels, d.height, d.width, dx.data() + b * d.in_channels * hw);
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += dyb[o * hw + p];
      dbias[o] += s;
    }
  }
}

void maxpool2x2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                        std::span<std::size_t> argmax) {
  const std::size_t oh = d.height / 2;
  const std::size_t ow = d.width / 2;
  const auto planes = static_cast<Index>(d.batch * d.channels);
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = pl * d.height * d.width;
    const std::size_t out_base = pl * oh * ow;
    for (std::size_t yy = 0; yy < oh; ++yy) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = in_base + (2 * yy) * d.width + 2 * xx;
        for (std::size_t t = 1; t < 4; ++t) {
          const std::size_t idx = in_base + (2 * yy + t / 2) * d.width + 2 * xx + t % 2;
          if (x[idx] > x[best]) best = idx;
        }
        y[out_base + yy * ow + xx] = x[best];
        argmax[out_base + yy * ow + xx] = best;
      }
    }
  }
}

void maxpool2x2_backward(const PoolDims& d, std::span<const double> dy, std::span<const std::size_t> argmax,
                         std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  const auto n = static_cast<Index>(d.batch * d.channels * (d.height / 2) * (d.width / 2));
  // Windows do not overlap, so each argmax target is written by one element.
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) dx[argmax[i]] += dy[i];
}

}  // namespace aggnn::kernels
