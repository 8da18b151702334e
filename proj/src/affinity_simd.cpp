// Built with fast-math flags so the exp calls vectorise (see
// src/CMakeLists.txt). Keep anything that inspects NaN/Inf out of here.
#include "affinity_simd.hpp"

#include <cmath>

namespace aggnn::detail {

void affinity_row_sums(const double* z, std::size_t n, double c, double* rows) {
  for (std::size_t i = 0; i < n; ++i) rows[i] = 1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double zi = z[i];
    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = zi - z[j];
      const double a = std::exp(-d * d * c);
      acc += a;
      rows[j] += a;
    }
    rows[i] += acc;
  }
}

void affinity_row_sums(const double* z, std::size_t n, double c, double* rows, double* tri) {
  for (std::size_t i = 0; i < n; ++i) rows[i] = 1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double zi = z[i];
    double* t = tri;
    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = zi - z[j];
      const double a = std::exp(-d * d * c);
      t[j - i - 1] = a;
      acc += a;
      rows[j] += a;
    }
    rows[i] += acc;
    tri += n - i - 1;
  }
}

double affinity_backward(const double* z, std::size_t n, double c, const double* h, const double* tri,
                         double* dz) {
  const double inv_var = 2.0 * c;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double zi = z[i];
    const double hi = h[i];
    const double* t = tri;
    double dzi = 0.0;
    double acc = 0.0;
#pragma omp simd reduction(+ : dzi, acc)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = zi - z[j];
      const double w = (hi + h[j]) * t[j - i - 1];
      const double g = w * d * inv_var;
      dzi -= g;
      dz[j] += g;
      acc += w * d * d;
    }
    dz[i] += dzi;
    total += acc;
    tri += n - i - 1;
  }
  return total;
}

}  // namespace aggnn::detail
