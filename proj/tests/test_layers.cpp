#include <cmath>
#include <numeric>

#include "aggnn/error.hpp"
#include "aggnn/layers.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aggnn;
using testing::Gen;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("linear forward examples") {
  LinearLayer id(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}));
  const Tensor x = Tensor::matrix({{3, -4}});
  CHECK(id.forward(x) == x);

  LinearLayer sum(Tensor::matrix({{1, 1, 1}}), Tensor::vector({0}));
  CHECK(sum.forward(Tensor::matrix({{1, 2, 3}}))[0] == 6.0);
  CHECK_THROWS_AS(sum.forward(Tensor::matrix({{1, 2}})), ShapeError);
  CHECK_THROWS_AS(LinearLayer(Tensor::matrix({{1, 1}}), Tensor::vector({0, 0})), ShapeError);
}

TEST_CASE("linear matches a loop oracle") {
  testing::for_all(31, 30, [](Gen& g) {
    const std::size_t in = g.size(1, 8), out = g.size(1, 8), batch = g.size(1, 5);
    LinearLayer layer(g.tensor({out, in}), g.tensor({out}));
    const Tensor x = g.tensor({batch, in});
    const Tensor y = layer.forward(x);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t j = 0; j < out; ++j) {
        double s = layer.parameter("b").value[j];
        for (std::size_t i = 0; i < in; ++i) s += layer.parameter("W").value.at(j, i) * x.at(r, i);
        CHECK(std::abs(y.at(r, j) - s) < 1e-12);
      }
  });
}

TEST_CASE("linear backward") {
  LinearLayer layer(Tensor::matrix({{2.5}}), Tensor::vector({1}));
  layer.forward(Tensor::matrix({{-3}}));
  const Tensor dx = layer.backward(Tensor::matrix({{0.5}}));
  CHECK(layer.parameter("W").grad[0] == 0.5 * -3.0);
  CHECK(layer.parameter("b").grad[0] == 0.5);
  CHECK(dx[0] == 0.5 * 2.5);

  Gen g(32);
  LinearLayer zero(g.tensor({3, 4}), g.tensor({3}));
  zero.forward(g.tensor({2, 4}));
  const Tensor dz = zero.backward(Tensor({2, 3}));
  for (const auto& p : zero.parameters())
    for (double v : p.grad.data()) CHECK(v == 0.0);
  for (double v : dz.data()) CHECK(v == 0.0);
}

TEST_CASE("backward without a cached forward throws") {
  LinearLayer layer(2, 2);
  CHECK_THROWS_AS(layer.backward(Tensor({1, 2})), StateError);
  layer.forward(Tensor({1, 2}));
  layer.backward(Tensor({1, 2}));
  CHECK_THROWS_AS(layer.backward(Tensor({1, 2})), StateError);
  ReluLayer relu;
  CHECK_THROWS_AS(relu.backward(Tensor({1, 2})), StateError);
}

TEST_CASE("linear gradients match finite differences") {
  testing::for_all(33, 20, [](Gen& g) {
    const std::size_t in = g.size(1, 6), out = g.size(1, 6);
    LinearLayer layer(g.tensor({out, in}), g.tensor({out}));
    Tensor x = g.tensor({g.size(1, 4), in});
    const Tensor up = g.tensor({x.dim(0), out});
    layer.forward(x);
    const Tensor dx = layer.backward(up);
    auto f = [&] { return dot(up, layer.infer(x)); };
    CHECK(testing::rel_error(dx.data(), testing::numeric_grad(x, f).data()) < 1e-6);
    for (auto& p : layer.parameters()) {
      const Tensor analytic = p.grad;
      CHECK(testing::rel_error(analytic.data(), testing::numeric_grad(p.value, f).data()) < 1e-6);
    }
  });
}

TEST_CASE("conv keeps spatial size and an identity kernel reproduces the input") {
  Conv2dLayer conv(1, 1);
  conv.parameter("W").value[4] = 1.0;  // centre tap
  Gen g(34);
  const Tensor x = g.tensor({2, 1, 5, 7});
  const Tensor y = conv.forward(x);
  CHECK(y.shape() == x.shape());
  CHECK(y == x);
}

TEST_CASE("conv backward matches finite differences on 1x3x6x6") {
  Gen g(35);
  Conv2dLayer conv(3, 2);
  conv.parameter("W").value = g.tensor({2, 3, 3, 3});
  conv.parameter("b").value = g.tensor({2});
  Tensor x = g.tensor({1, 3, 6, 6});
  const Tensor up = g.tensor({1, 2, 6, 6});
  conv.forward(x);
  const Tensor dx = conv.backward(up);
  auto f = [&] { return dot(up, conv.infer(x)); };
  CHECK(testing::rel_error(dx.data(), testing::numeric_grad(x, f).data()) < 1e-6);
  for (auto& p : conv.parameters()) {
    const Tensor analytic = p.grad;
    CHECK(testing::rel_error(analytic.data(), testing::numeric_grad(p.value, f).data()) < 1e-6);
  }
}

TEST_CASE("relu lets NaN through") {
  ReluLayer relu;
  CHECK(std::isnan(relu.infer(Tensor::matrix({{std::nan("")}}))[0]));
}

TEST_CASE("relu forward and backward") {
  ReluLayer relu;
  const Tensor y = relu.forward(Tensor::vector({-1, 0, 2}).reshaped({1, 3}));
  CHECK(y == Tensor::matrix({{0, 0, 2}}));
  const Tensor dx = relu.backward(Tensor::matrix({{5, 5, 5}}));
  CHECK(dx == Tensor::matrix({{0, 0, 5}}));
}

TEST_CASE("maxpool routes gradient to the argmax and conserves mass") {
  MaxPool2x2Layer pool;
  const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 3, 3, 0});
  CHECK(pool.forward(x)[0] == 3.0);
  const Tensor dx = pool.backward(Tensor({1, 1, 1, 1}, 2.0));
  CHECK(dx == Tensor({1, 1, 2, 2}, std::vector<double>{0, 2, 0, 0}));

  testing::for_all(36, 30, [](Gen& g) {
    MaxPool2x2Layer p;
    const Tensor in = g.tensor({g.size(1, 2), g.size(1, 3), 2 * g.size(1, 4), 2 * g.size(1, 4)});
    const Tensor out = p.forward(in);
    const Tensor up = g.tensor(out.shape());
    const Tensor d = p.backward(up);
    const double s_up = std::accumulate(up.data().begin(), up.data().end(), 0.0);
    const double s_dx = std::accumulate(d.data().begin(), d.data().end(), 0.0);
    CHECK(s_dx == doctest::Approx(s_up).epsilon(1e-12));
  });
}

TEST_CASE("flatten round trip") {
  FlattenLayer flat;
  Gen g(37);
  const Tensor x = g.tensor({2, 3, 2, 2});
  const Tensor y = flat.forward(x);
  CHECK(y.shape() == Shape{2, 12});
  CHECK(flat.backward(y) == x);
}

TEST_CASE("softmax cross-entropy") {
  const std::vector<int> labels{3, 7};
  const auto uniform = softmax_xent(Tensor({2, 10}), labels);
  CHECK(uniform.loss == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  CHECK(uniform.dlogits.at(0, 3) == doctest::Approx((0.1 - 1.0) / 2.0));
  CHECK(uniform.dlogits.at(1, 0) == doctest::Approx(0.1 / 2.0));

  Tensor sure({1, 3});
  sure[1] = 60.0;
  const std::vector<int> one{1};
  CHECK(softmax_xent(sure, one).loss < 1e-20);

  const std::vector<int> bad{3};
  CHECK_THROWS_AS(softmax_xent(Tensor({1, 3}), bad), InvalidValueError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(softmax_xent(Tensor({1, 3}), negative), InvalidValueError);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  testing::for_all(38, 30, [](Gen& g) {
    const std::size_t batch = g.size(1, 5), classes = g.size(2, 8);
    Tensor logits = g.tensor({batch, classes}, -4.0, 4.0);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = g.label(static_cast<int>(classes));
    const Tensor analytic = softmax_xent(logits, labels).dlogits;
    const Tensor numeric = testing::numeric_grad(logits, [&] { return softmax_xent(logits, labels).loss; });
    CHECK(testing::rel_error(analytic.data(), numeric.data()) < 1e-6);
  });
}

TEST_CASE("forward is deterministic") {
  Gen g(39);
  Conv2dLayer conv(2, 3);
  std::mt19937_64 rng(5);
  conv.initialize(rng);
  const Tensor x = g.tensor({2, 2, 8, 8});
  CHECK(conv.forward(x) == conv.forward(x));
  CHECK(conv.infer(x) == conv.forward(x));
}

TEST_CASE("kaiming uniform bound and zero bias") {
  LinearLayer layer(50, 40);
  std::mt19937_64 rng(1);
  layer.initialize(rng);
  const double bound = std::sqrt(6.0 / 50.0);
  double lo = 0, hi = 0;
  for (double v : layer.parameter("W").value.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi > 0.9 * bound);
  for (double v : layer.parameter("b").value.data()) CHECK(v == 0.0);
}
