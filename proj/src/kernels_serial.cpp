#include <algorithm>
#include <cstddef>

#include "aggnn/kernels.hpp"

namespace aggnn::kernels::serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = s;
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[j * k + kk];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[kk * m + i] * b[kk * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

namespace {

// Input value at (b, c, y, x) with zero padding outside the image.
double padded(const ConvDims& d, std::span<const double> x, std::size_t b, std::size_t c, long y, long xx) {
  if (y < 0 || xx < 0 || y >= static_cast<long>(d.height) || xx >= static_cast<long>(d.width)) return 0.0;
  return x[((b * d.in_channels + c) * d.height + static_cast<std::size_t>(y)) * d.width +
           static_cast<std::size_t>(xx)];
}

}  // namespace

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y) {
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t r = 0; r < d.height; ++r)
        for (std::size_t col = 0; col < d.width; ++col) {
          double s = bias[o];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx)
                s += weight[((o * d.in_channels + c) * 3 + ky) * 3 + kx] *
                     padded(d, x, b, c, static_cast<long>(r + ky) - 1, static_cast<long>(col + kx) - 1);
          y[((b * d.out_channels + o) * d.height + r) * d.width + col] = s;
        }
}

void conv3x3_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                      std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                      std::span<double> dbias) {
  std::fill(dx.begin(), dx.end(), 0.0);
  std::fill(dweight.begin(), dweight.end(), 0.0);
  std::fill(dbias.begin(), dbias.end(), 0.0);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t r = 0; r < d.height; ++r)
        for (std::size_t col = 0; col < d.width; ++col) {
          const double g = dy[((b * d.out_channels + o) * d.height + r) * d.width + col];
          dbias[o] += g;
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long yy = static_cast<long>(r + ky) - 1;
                const long xx = static_cast<long>(col + kx) - 1;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(d.height) || xx >= static_cast<long>(d.width))
                  continue;
                const std::size_t widx = ((o * d.in_channels + c) * 3 + ky) * 3 + kx;
                const std::size_t xidx = ((b * d.in_channels + c) * d.height + static_cast<std::size_t>(yy)) *
                                             d.width +
                                         static_cast<std::size_t>(xx);
                dweight[widx] += g * x[xidx];
                dx[xidx] += g * weight[widx];
              }
        }
}

void maxpool2x2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                        std::span<std::size_t> argmax) {
  const std::size_t oh = d.height / 2;
  const std::size_t ow = d.width / 2;
  std::size_t out = 0;
  for (std::size_t pl = 0; pl < d.batch * d.channels; ++pl)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c, ++out) {
        std::size_t best = 0;
        bool first = true;
        for (std::size_t dr = 0; dr < 2; ++dr)
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = (pl * d.height + 2 * r + dr) * d.width + 2 * c + dc;
            if (first || x[idx] > x[best]) best = idx;
            first = false;
          }
        y[out] = x[best];
        argmax[out] = best;
      }
}

void maxpool2x2_backward(const PoolDims& d, std::span<const double> dy, std::span<const std::size_t> argmax,
                         std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  const std::size_t n = d.batch * d.channels * (d.height / 2) * (d.width / 2);
  for (std::size_t i = 0; i < n; ++i) dx[argmax[i]] += dy[i];
}

}  // namespace aggnn::kernels::serial
