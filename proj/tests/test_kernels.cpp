// The OpenMP kernels against their serial references.
#include <cmath>
#include <vector>

#include "aggnn/kernels.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aggnn;
using testing::Gen;
namespace k = aggnn::kernels;

namespace {

std::vector<double> rand_vec(Gen& g, std::size_t n) { return g.vec(n, -1.0, 1.0); }

}  // namespace

TEST_CASE("gemm variants agree with serial") {
  testing::for_all(21, 40, [](Gen& g) {
    const std::size_t m = g.size(1, 20), kk = g.size(1, 20), n = g.size(1, 20);
    const auto a = rand_vec(g, m * kk), b = rand_vec(g, kk * n), bt = rand_vec(g, n * kk), at = rand_vec(g, kk * m);
    std::vector<double> c1 = rand_vec(g, m * n), c2 = c1;
    const bool acc = g.size(0, 1) == 1;

    k::gemm_nn(a, b, c1, m, kk, n, acc);
    k::serial::gemm_nn(a, b, c2, m, kk, n, acc);
    CHECK(testing::max_abs_diff(c1, c2) < 1e-12);

    k::gemm_nt(a, bt, c1, m, kk, n, acc);
    k::serial::gemm_nt(a, bt, c2, m, kk, n, acc);
    CHECK(testing::max_abs_diff(c1, c2) < 1e-12);

    k::gemm_tn(at, b, c1, m, kk, n, acc);
    k::serial::gemm_tn(at, b, c2, m, kk, n, acc);
    CHECK(testing::max_abs_diff(c1, c2) < 1e-12);
  });
}

TEST_CASE("gemm propagates NaN through zero multiplicands") {
  const double nan = std::nan("");
  const std::vector<double> a{0.0, 1.0}, b{nan, 2.0};  // 1x2 times 2x1
  std::vector<double> c(1);
  k::gemm_nn(a, b, c, 1, 2, 1);
  CHECK(std::isnan(c[0]));
  k::gemm_tn(a, b, c, 1, 2, 1);
  CHECK(std::isnan(c[0]));
  k::gemm_nt(a, b, c, 1, 2, 1);
  CHECK(std::isnan(c[0]));
}

TEST_CASE("conv3x3 agrees with the direct loop") {
  testing::for_all(22, 25, [](Gen& g) {
    const k::ConvDims d{g.size(1, 3), g.size(1, 4), g.size(1, 4), g.size(1, 7), g.size(1, 7)};
    const std::size_t xin = d.batch * d.in_channels * d.height * d.width;
    const std::size_t yout = d.batch * d.out_channels * d.height * d.width;
    const auto x = rand_vec(g, xin), w = rand_vec(g, d.out_channels * d.in_channels * 9),
               b = rand_vec(g, d.out_channels), dy = rand_vec(g, yout);
    std::vector<double> y1(yout), y2(yout);
    k::conv3x3_forward(d, x, w, b, y1);
    k::serial::conv3x3_forward(d, x, w, b, y2);
    CHECK(testing::max_abs_diff(y1, y2) < 1e-12);

    std::vector<double> dx1(xin), dx2(xin), dw1(w.size()), dw2(w.size()), db1(b.size()), db2(b.size());
    k::conv3x3_backward(d, x, w, dy, dx1, dw1, db1);
    k::serial::conv3x3_backward(d, x, w, dy, dx2, dw2, db2);
    CHECK(testing::max_abs_diff(dx1, dx2) < 1e-12);
    CHECK(testing::max_abs_diff(dw1, dw2) < 1e-12);
    CHECK(testing::max_abs_diff(db1, db2) < 1e-12);
  });
}

TEST_CASE("maxpool agrees with serial and breaks ties to the first element") {
  testing::for_all(23, 25, [](Gen& g) {
    const k::PoolDims d{g.size(1, 3), g.size(1, 3), g.size(1, 9), g.size(1, 9)};
    const std::size_t oh = d.height / 2, ow = d.width / 2;
    if (oh == 0 || ow == 0) return;
    std::vector<double> x(d.batch * d.channels * d.height * d.width);
    // Coarse values force frequent ties.
    for (auto& v : x) v = static_cast<double>(g.size(0, 2));
    const std::size_t n = d.batch * d.channels * oh * ow;
    std::vector<double> y1(n), y2(n), dy = rand_vec(g, n);
    std::vector<std::size_t> a1(n), a2(n);
    k::maxpool2x2_forward(d, x, y1, a1);
    k::serial::maxpool2x2_forward(d, x, y2, a2);
    CHECK(y1 == y2);
    CHECK(a1 == a2);
    for (std::size_t o = 0; o < n; ++o) {
      // No earlier element of the window (in row-major order) holds the max.
      const std::size_t plane = o / (oh * ow), r = (o % (oh * ow)) / ow, c = o % ow;
      const std::size_t base = plane * d.height * d.width;
      const std::size_t win[4] = {base + 2 * r * d.width + 2 * c, base + 2 * r * d.width + 2 * c + 1,
                                  base + (2 * r + 1) * d.width + 2 * c, base + (2 * r + 1) * d.width + 2 * c + 1};
      for (std::size_t w : win) {
        if (w == a1[o]) break;
        CHECK(x[w] < y1[o]);
      }
    }
    std::vector<double> dx1(x.size()), dx2(x.size());
    k::maxpool2x2_backward(d, dy, a1, dx1);
    k::serial::maxpool2x2_backward(d, dy, a2, dx2);
    CHECK(dx1 == dx2);
  });
}

TEST_CASE("aggregation kernels agree with the full-matrix serial version") {
  testing::for_all(24, 40, [](Gen& g) {
    const std::size_t batch = g.size(1, 4), in = g.size(1, 12), out = g.size(1, 6);
    const auto x = g.vec(batch * in, -2.0, 2.0), w = g.vec(out * in, -1.5, 1.5), b = rand_vec(g, out);
    const auto p = g.vec(out, -2.0, 4.0), ls = g.vec(out, -1.0, 1.0);
    std::vector<double> mix(out * 3);
    for (std::size_t j = 0; j < out; ++j) {
      double a = g.uniform(0, 1), c = g.uniform(0, 1), e = g.uniform(0, 1), s = a + c + e;
      mix[j * 3] = a / s, mix[j * 3 + 1] = c / s, mix[j * 3 + 2] = e / s;
    }
    const int which = static_cast<int>(g.size(0, 2));  // 0: both paths, 1: F-Mean only, 2: Gaussian only
    const k::AggregationArgs args{batch, in, out, x, w, b, which == 2 ? std::span<const double>{} : p,
                                  which == 1 ? std::span<const double>{} : ls, mix};

    std::vector<double> y1(batch * out), y2(batch * out), paths1(batch * out * 3), paths2(batch * out * 3);
    k::aggregate_forward(args, y1, paths1);
    k::serial::aggregate_forward(args, y2, paths2);
    CHECK(testing::max_abs_diff(y1, y2) < 1e-10);
    CHECK(testing::max_abs_diff(paths1, paths2) < 1e-10);

    auto dy = rand_vec(g, batch * out);
    dy[0] = 0.0;  // exercises the zero-upstream shortcut
    struct Buf {
      std::vector<double> x, w, b, p, ls, mix;
    } g1{std::vector<double>(x.size()), std::vector<double>(w.size()), std::vector<double>(out),
         std::vector<double>(out), std::vector<double>(out), std::vector<double>(out * 3)},
        g2 = g1;
    auto grads = [&](Buf& s) {
      return k::AggregationGrads{s.x, s.w, s.b, which == 2 ? std::span<double>{} : std::span<double>(s.p),
                                 which == 1 ? std::span<double>{} : std::span<double>(s.ls), s.mix};
    };
    k::aggregate_backward(args, dy, grads(g1));
    k::serial::aggregate_backward(args, dy, grads(g2));
    CHECK(testing::max_abs_diff(g1.x, g2.x) < 1e-10);
    CHECK(testing::max_abs_diff(g1.w, g2.w) < 1e-10);
    CHECK(testing::max_abs_diff(g1.b, g2.b) < 1e-12);
    CHECK(testing::max_abs_diff(g1.p, g2.p) < 1e-10);
    CHECK(testing::max_abs_diff(g1.ls, g2.ls) < 1e-10);
    CHECK(testing::max_abs_diff(g1.mix, g2.mix) < 1e-10);
  });
}

TEST_CASE("parallel kernels are deterministic run to run") {
  Gen g(25);
  const std::size_t batch = 8, in = 64, out = 32;
  const auto x = rand_vec(g, batch * in), w = rand_vec(g, out * in), b = rand_vec(g, out);
  const std::vector<double> p(out, 0.7), ls(out, 0.2), mix(out * 3, 1.0 / 3.0);
  const k::AggregationArgs args{batch, in, out, x, w, b, p, ls, mix};
  std::vector<double> y1(batch * out), y2(batch * out);
  k::aggregate_forward(args, y1);
  k::aggregate_forward(args, y2);
  CHECK(y1 == y2);
}
