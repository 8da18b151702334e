#include <cmath>
#include <limits>

#include "aggnn/error.hpp"
#include "aggnn/optim.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aggnn;
using testing::Gen;

namespace {

Parameter make(std::string name, Tensor value, ParamGroupTag group = ParamGroupTag::standard) {
  Parameter p{std::move(name), std::move(value), Tensor(), group, false};
  p.grad = Tensor(p.value.shape());
  return p;
}

double norm(std::span<Tensor* const> ts) {
  double s = 0.0;
  for (const Tensor* t : ts)
    for (double v : t->data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

// ---------------------------------------------------------------- clipping

TEST_CASE("clip global norm examples") {
  Tensor a = Tensor::vector({3.0}), b = Tensor::vector({4.0});
  Tensor* both[] = {&a, &b};
  CHECK(clip_global_norm(both, 1.0) == 5.0);
  CHECK(a[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(b[0] == doctest::Approx(0.8).epsilon(1e-15));

  Tensor c = Tensor::vector({2.0, 0.0});
  Tensor* one[] = {&c};
  clip_global_norm(one, 1.0);
  CHECK(c[0] == 1.0);

  Tensor d = Tensor::vector({0.3, 0.4});
  Tensor* small[] = {&d};
  CHECK(clip_global_norm(small, 1.0) == doctest::Approx(0.5));
  CHECK(d == Tensor::vector({0.3, 0.4}));

  Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  Tensor* nan[] = {&bad};
  CHECK_THROWS_AS(clip_global_norm(nan, 1.0), InvalidValueError);
  bad[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(clip_global_norm(nan, 1.0), InvalidValueError);
}

TEST_CASE("property: clipped norm never exceeds the bound and direction is kept") {
  testing::for_all(61, 500, [](Gen& g) {
    std::vector<Tensor> ts;
    const std::size_t k = g.size(1, 4);
    const double scale = std::pow(10.0, g.uniform(-3.0, 3.0));
    for (std::size_t i = 0; i < k; ++i) ts.push_back(g.tensor({g.size(1, 6)}, -scale, scale));
    const std::vector<Tensor> before = ts;
    std::vector<Tensor*> ptrs;
    for (auto& t : ts) ptrs.push_back(&t);
    const double max_norm = g.uniform(0.1, 2.0);
    const double pre = clip_global_norm(ptrs, max_norm);
    CHECK(norm(ptrs) <= max_norm * (1.0 + 1e-12));
    const double ratio = pre > max_norm ? max_norm / pre : 1.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < ts[i].size(); ++j) CHECK(ts[i][j] == doctest::Approx(before[i][j] * ratio));
  });
}

TEST_CASE("clip skips frozen parameters") {
  Parameter a = make("W", Tensor({1})), b = make("b", Tensor({1}));
  a.grad[0] = 3.0;
  b.grad[0] = 100.0;
  b.frozen = true;
  Parameter* ps[] = {&a, &b};
  CHECK(clip_global_norm(ps, 1.0) == 3.0);
  CHECK(a.grad[0] == 1.0);
  CHECK(b.grad[0] == 100.0);
}

// -------------------------------------------------------------------- Adam

TEST_CASE("adam first step moves each entry by the learning rate") {
  Parameter w = make("W", Tensor::vector({1.0, -2.0, 0.5}));
  Parameter p = make("p", Tensor::vector({1.0}), ParamGroupTag::novel);
  w.grad = Tensor::vector({0.3, -7.0, 1e-3});
  p.grad = Tensor::vector({-0.2});
  Parameter* ps[] = {&w, &p};
  Adam adam(make_param_groups(ps, 1e-3, 1e-2));
  adam.step();
  // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
  CHECK(w.value[0] == doctest::Approx(1.0 - 1e-3 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  CHECK(w.value[1] == doctest::Approx(-2.0 + 1e-3 * 7.0 / (7.0 + 1e-8)).epsilon(1e-14));
  CHECK(std::abs(std::abs(w.value[2] - 0.5) - 1e-3) < 1e-8);
  CHECK(p.value[0] == doctest::Approx(1.0 + 1e-2 * 0.2 / (0.2 + 1e-8)).epsilon(1e-14));
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam novel group moves ten times further on the same gradient") {
  testing::for_all(62, 50, [](Gen& g) {
    const Tensor start = g.tensor({4});
    Parameter w = make("W", start), p = make("p", start, ParamGroupTag::novel);
    Parameter* ps[] = {&w, &p};
    Adam adam(make_param_groups(ps, 1e-3, 1e-2));
    for (int s = 0; s < 3; ++s) {
      const Tensor grad = g.tensor({4});
      w.grad = grad;
      p.grad = grad;
      adam.step();
    }
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(p.value[i] - start[i] == doctest::Approx(10.0 * (w.value[i] - start[i])).epsilon(1e-9));
  });
}

TEST_CASE("adam leaves parameters with zero gradients and frozen parameters alone") {
  Parameter w = make("W", Tensor::vector({0.25, -1.0}));
  Parameter f = make("b", Tensor::vector({3.0}));
  f.frozen = true;
  f.grad[0] = 1.0;
  Parameter* ps[] = {&w, &f};
  Adam adam(make_param_groups(ps, 0.1, 0.1));
  for (int s = 0; s < 5; ++s) adam.step();
  CHECK(w.value == Tensor::vector({0.25, -1.0}));
  CHECK(f.value[0] == 3.0);
}

TEST_CASE("adam is bitwise reproducible") {
  auto run = [] {
    Gen g(63);
    Parameter w = make("W", g.tensor({3, 3})), a = make("alpha_raw", g.tensor({3}), ParamGroupTag::novel);
    Parameter* ps[] = {&w, &a};
    Adam adam(make_param_groups(ps, 1e-3, 1e-2));
    for (int s = 0; s < 20; ++s) {
      w.grad = g.tensor({3, 3});
      a.grad = g.tensor({3});
      adam.step();
    }
    return std::pair{w.value, a.value};
  };
  CHECK(run() == run());
}

TEST_CASE("param groups validate membership") {
  Parameter w = make("W", Tensor({2})), p = make("p", Tensor({2}), ParamGroupTag::novel);
  Parameter* dup[] = {&w, &p, &w};
  CHECK_THROWS_AS(make_param_groups(dup, 1e-3, 1e-2), StateError);
  Parameter wrong = make("log_sigma", Tensor({2}));
  Parameter* mis[] = {&w, &wrong};
  CHECK_THROWS_AS(make_param_groups(mis, 1e-3, 1e-2), StateError);
  Parameter stray = make("W", Tensor({2}), ParamGroupTag::novel);
  Parameter* mis2[] = {&stray};
  CHECK_THROWS_AS(make_param_groups(mis2, 1e-3, 1e-2), StateError);
  Parameter* ok[] = {&w, &p};
  const auto groups = make_param_groups(ok, 1e-3, 1e-2);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].members == std::vector<Parameter*>{&w});
  CHECK(groups[1].members == std::vector<Parameter*>{&p});
  CHECK(groups[1].learning_rate == 1e-2);
}

// --------------------------------------------------------------- scheduler

TEST_CASE("plateau scheduler halves after six flat epochs") {
  Parameter w = make("W", Tensor({1})), p = make("p", Tensor({1}), ParamGroupTag::novel);
  Parameter* ps[] = {&w, &p};
  auto groups = make_param_groups(ps, 1e-3, 1e-2);
  PlateauScheduler sched;
  std::vector<std::size_t> reductions;
  for (std::size_t epoch = 1; epoch <= 14; ++epoch)
    if (sched.step(1.0, groups)) reductions.push_back(epoch);
  // Epoch 1 sets the best; epochs 2-7 are the six non-improving epochs.
  CHECK(reductions == std::vector<std::size_t>{7, 13});
  CHECK(groups[0].learning_rate == doctest::Approx(2.5e-4));
  CHECK(groups[1].learning_rate == doctest::Approx(2.5e-3));
}

TEST_CASE("plateau scheduler respects the threshold and the floor") {
  Parameter w = make("W", Tensor({1}));
  Parameter* ps[] = {&w};
  auto groups = make_param_groups(ps, 3e-6, 1.0);
  PlateauScheduler sched;
  // Dips smaller than the threshold below the best do not count as improvement.
  for (int epoch = 1; epoch <= 7; ++epoch) sched.step(epoch % 2 ? 1.0 : 1.0 - 5e-5, groups);
  CHECK(groups[0].learning_rate == 1.5e-6);
  for (int epoch = 0; epoch < 30; ++epoch) sched.step(1.0, groups);
  CHECK(groups[0].learning_rate == 1e-6);
  CHECK_THROWS_AS(sched.step(std::numeric_limits<double>::quiet_NaN(), groups), InvalidValueError);
}

TEST_CASE("property: scheduler never raises a rate") {
  testing::for_all(64, 100, [](Gen& g) {
    Parameter w = make("W", Tensor({1})), p = make("p", Tensor({1}), ParamGroupTag::novel);
    Parameter* ps[] = {&w, &p};
    auto groups = make_param_groups(ps, g.uniform(1e-5, 1e-1), g.uniform(1e-5, 1e-1));
    PlateauScheduler sched;
    double metric = 2.0;
    for (int e = 0; e < 60; ++e) {
      const double before0 = groups[0].learning_rate, before1 = groups[1].learning_rate;
      metric += g.uniform(-0.05, 0.05);
      sched.step(metric, groups);
      CHECK(groups[0].learning_rate <= before0);
      CHECK(groups[1].learning_rate <= before1);
      CHECK(groups[0].learning_rate >= std::min(before0, 1e-6));
    }
  });
}

// ---------------------------------------------------------- early stopping

TEST_CASE("early stopping on a flat trace stops at epoch 11") {
  EarlyStopping stop;
  std::size_t stopped = 0;
  for (std::size_t epoch = 1; epoch <= 30 && !stopped; ++epoch)
    if (stop.step(0.7).stop) stopped = epoch;
  CHECK(stopped == 11);
  CHECK(stop.best_epoch() == 1);
}

TEST_CASE("an improvement resets the patience counter") {
  EarlyStopping stop;
  std::size_t stopped = 0;
  for (std::size_t epoch = 1; epoch <= 40 && !stopped; ++epoch) {
    const double loss = epoch < 10 ? 1.0 : 0.9;
    const auto d = stop.step(loss);
    if (epoch == 10) CHECK(d.improved);
    if (d.stop) stopped = epoch;
  }
  CHECK(stopped == 20);
  CHECK(stop.best_epoch() == 10);
  CHECK(stop.best() == 0.9);
}

TEST_CASE("early stopping min_delta") {
  EarlyStopping stop(3, 0.1);
  CHECK(stop.step(1.0).improved);
  CHECK_FALSE(stop.step(0.95).improved);
  CHECK(stop.step(0.85).improved);
  CHECK_THROWS_AS(stop.step(std::numeric_limits<double>::infinity()), InvalidValueError);
}
