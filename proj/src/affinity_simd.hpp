#pragma once

#include <cstddef>

// Pairwise Gaussian affinity loops. Only the strict upper triangle is
// evaluated; the unit diagonal and symmetry supply the rest.
namespace aggnn::detail {

// rows[i] = sum_j exp(-(z_i - z_j)^2 * c), including the diagonal 1.
void affinity_row_sums(const double* z, std::size_t n, double c, double* rows);

// As above, also keeping the strict upper triangle of affinities in `tri`
// (n(n-1)/2 entries, row-major) for affinity_backward.
void affinity_row_sums(const double* z, std::size_t n, double c, double* rows, double* tri);

// For a loss with dL/drows = h, adds dL/dz to dz and returns
// sum_{i<j} (h_i + h_j) * a_ij * (z_i - z_j)^2, which is dL/dlog(sigma)
// once multiplied by 1 / sigma^2 (= 2c).
double affinity_backward(const double* z, std::size_t n, double c, const double* h, const double* tri,
                         double* dz);

}  // namespace aggnn::detail
