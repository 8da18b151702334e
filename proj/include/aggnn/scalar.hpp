#pragma once

#include <cmath>

// Scalar forms of the guarded functions used by the tensor ops and the
// aggregation kernels. All are branch-stable over the whole finite range.
namespace aggnn::scalar {

inline double softplus(double t) {
  if (t > 30.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// ln(softplus(t)). For t < -30, softplus(t) = e^t (1 - e^t / 2 + ...), so
// the log is t - e^t / 2 to O(e^{2t}); this stays finite where softplus
// itself underflows.
inline double log_softplus(double t) {
  if (t < -30.0) return t - 0.5 * std::exp(t);
  return std::log(softplus(t));
}

// d/dt ln(softplus(t)) = sigmoid(t) / softplus(t).
inline double dlog_softplus(double t) {
  if (t < -30.0) return 1.0 - 0.5 * std::exp(t);
  return sigmoid(t) / softplus(t);
}

}  // namespace aggnn::scalar
