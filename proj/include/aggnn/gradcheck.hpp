#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aggnn {

struct GradcheckOptions {
  std::size_t cases = 100;
  double step = 1e-5;
  double tolerance = 1e-5;        // per-op
  double model_tolerance = 1e-4;  // end-to-end models
  std::uint64_t seed = 20240601;
};

struct GradcheckResult {
  std::string op;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest relative error over all cases and tensors
  double tolerance = 0.0;
  std::string worst_tensor;

  bool passed() const { return cases > 0 && failures == 0; }
};

// ||a - n|| / max(||a||, ||n||, 1e-4), L2 over the whole tensor. The floor
// keeps near-zero gradients from being judged on finite-difference rounding.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Groups: "layers" (softplus, sigmoid, softmax, linear, conv3x3, maxpool,
// relu, xent), "fmean", "gaussian", "hybrid" (both two-way kinds and the
// three-way kind), "model" (tiny end-to-end networks, one per aggregation
// setting) and "all". Throws InvalidValueError for any other name.
std::vector<GradcheckResult> run_gradcheck(std::string_view group, const GradcheckOptions& options = {});

}  // namespace aggnn
