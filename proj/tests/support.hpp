#pragma once

// Seeded generators for the property tests. Each property runs a fixed
// number of cases from a fixed seed, so a failure reproduces exactly; the
// case index is reported through doctest's INFO.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "aggnn/tensor.hpp"
#include "doctest.h"

namespace testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  std::size_t size(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
  int label(int classes) { return std::uniform_int_distribution<int>(0, classes - 1)(rng_); }

  std::vector<double> vec(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  aggnn::Tensor tensor(aggnn::Shape shape, double lo = -1.0, double hi = 1.0) {
    aggnn::Tensor t(std::move(shape));
    for (auto& x : t.data()) x = uniform(lo, hi);
    return t;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <typename F>
void for_all(std::uint64_t seed, int cases, F&& property) {
  Gen gen(seed);
  for (int c = 0; c < cases; ++c) {
    INFO("case " << c << " of seed " << seed);
    property(gen);
  }
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central differences of f around x, perturbing each entry of `target`.
template <typename F>
aggnn::Tensor numeric_grad(aggnn::Tensor& target, F&& f, double h = 1e-5) {
  aggnn::Tensor g(target.shape());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double v = target[i];
    target[i] = v + h;
    const double up = f();
    target[i] = v - h;
    const double down = f();
    target[i] = v;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-4});
}

}  // namespace testing
