#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lkaseg/errors.hpp"
#include "lkaseg/instrument.hpp"
#include "lkaseg/kernels.hpp"
#include "lkaseg/ops.hpp"
#include "support.hpp"

using namespace lkaseg;
using testing::grad_check;
using testing::reference_conv;

namespace {

std::mt19937_64 rng_for(std::uint64_t s) { return std::mt19937_64(s); }

ConvSpec spec_of(int kh, int kw, int sh, int sw, int ph, int pw, int dh, int dw, int g) {
  ConvSpec s;
  s.kernel = {kh, kw};
  s.stride = {sh, sw};
  s.padding = {ph, pw};
  s.dilation = {dh, dw};
  s.groups = g;
  return s;
}

// Phi(x) by composite Simpson on the Gaussian density, long double.
double normal_cdf_quadrature(double x) {
  const int n = 20000;
  const long double h = static_cast<long double>(x) / n;
  auto pdf = [](long double t) { return std::exp(-t * t / 2) / std::sqrt(2 * std::numbers::pi_v<long double>); };
  long double s = pdf(0) + pdf(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  return static_cast<double>(0.5L + s * h / 3);
}

}  // namespace

TEST_CASE("conv2d scalar and identity kernels") {
  Tensor x({1, 1, 1, 1}, {2.0});
  Tensor w({1, 1, 1, 1}, {3.0});
  CHECK(conv2d(x, w, nullptr, ConvSpec{})[0] == 6.0);

  auto rng = rng_for(3);
  Tensor img = random_normal({2, 3, 5, 6}, rng);
  Tensor delta({3, 1, 3, 3});
  for (int c = 0; c < 3; ++c) delta.at(c, 0, 1, 1) = 1.0;
  CHECK(max_abs_diff(depthwise(img, delta, nullptr, ConvSpec::square(3, 1, 1, 1, 3)), img) == 0.0);
}

TEST_CASE("conv2d equals the direct loop oracle over random geometry") {
  auto rng = rng_for(11);
  std::uniform_int_distribution<int> k(1, 4), s(1, 2), d(1, 3), p(0, 3), sp(6, 11);
  for (int trial = 0; trial < 40; ++trial) {
    const int groups = trial % 3 == 0 ? 2 : 1;
    const int cin = 2 * groups, cout = 2 * groups;
    const ConvSpec spec = spec_of(k(rng), k(rng), s(rng), s(rng), p(rng), p(rng), d(rng), d(rng), groups);
    Tensor x = random_normal({2, cin, sp(rng), sp(rng)}, rng);
    if (x.shape().h + 2 * spec.padding.h < spec.extent_h() || x.shape().w + 2 * spec.padding.w < spec.extent_w()) {
      --trial;
      continue;
    }
    Tensor w = random_normal({cout, cin / groups, spec.kernel.h, spec.kernel.w}, rng);
    Tensor b = random_normal({1, cout, 1, 1}, rng);
    Tensor got = conv2d(x, w, &b, spec);
    Tensor want = reference_conv(x, w, &b, spec.stride.h, spec.stride.w, spec.padding.h, spec.padding.w,
                                 spec.dilation.h, spec.dilation.w, groups);
    REQUIRE(got.shape() == want.shape());
    CHECK(testing::max_rel_diff(got, want, 1e-12) < 1e-12);
  }
}

TEST_CASE("dilated strip equals the zero-expanded dense kernel") {
  auto rng = rng_for(5);
  Tensor x = random_normal({1, 2, 8, 8}, rng);
  Tensor w = random_normal({1, 2, 1, 3}, rng);
  Tensor dilated = conv2d(x, w, nullptr, spec_of(1, 3, 1, 1, 0, 3, 1, 3, 1));
  Tensor dense_w = testing::expand_dilation(w, 1, 3);
  CHECK(dense_w.shape() == Shape{1, 2, 1, 7});
  Tensor dense = reference_conv(x, dense_w, nullptr, 1, 1, 0, 3, 1, 1, 1);
  CHECK(testing::max_rel_diff(dilated, dense, 1e-12) < 1e-12);
}

TEST_CASE("depthwise matches block-diagonal dense convolution") {
  auto rng = rng_for(7);
  Tensor x = random_normal({2, 4, 9, 9}, rng);
  Tensor w = random_normal({4, 1, 5, 5}, rng);
  Tensor got = depthwise(x, w, nullptr, ConvSpec::square(5, 1, 2, 1, 4));
  Tensor want = reference_conv(x, testing::depthwise_as_dense(w), nullptr, 1, 1, 2, 2, 1, 1, 1);
  CHECK(testing::max_rel_diff(got, want, 1e-12) < 1e-12);

  Tensor two({1, 2, 2, 2}, {1, 2, 3, 4, 1, 2, 3, 4});
  Tensor scale({2, 1, 1, 1}, {2.0, 5.0});
  Tensor y = depthwise(two, scale, nullptr, ConvSpec::square(1, 1, 0, 1, 2));
  CHECK(y.at(0, 0, 1, 1) == 8.0);
  CHECK(y.at(0, 1, 1, 1) == 20.0);
  Tensor zero = depthwise(x, Tensor({4, 1, 5, 5}), nullptr, ConvSpec::square(5, 1, 2, 1, 4));
  for (double v : zero.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(depthwise(x, w, nullptr, ConvSpec::square(5, 1, 2, 1, 2)), std::exception);
}

TEST_CASE("conv2d is linear without bias") {
  auto rng = rng_for(8);
  Tensor a = random_normal({1, 3, 7, 7}, rng), b = random_normal({1, 3, 7, 7}, rng);
  Tensor w = random_normal({2, 3, 3, 3}, rng);
  const ConvSpec spec = spec_of(3, 3, 1, 1, 1, 1, 2, 2, 1);
  Tensor mix(a.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3 * a[i] - 1.7 * b[i];
  Tensor lhs = conv2d(mix, w, nullptr, spec);
  Tensor ca = conv2d(a, w, nullptr, spec), cb = conv2d(b, w, nullptr, spec);
  Tensor rhs(lhs.shape());
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = 0.3 * ca[i] - 1.7 * cb[i];
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("conv2d shape errors name the axis") {
  Tensor x({1, 2, 4, 4});
  Tensor w({1, 2, 7, 1});
  try {
    conv2d(x, w, nullptr, spec_of(7, 1, 1, 1, 0, 0, 1, 1, 1));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 1, 1}), nullptr, ConvSpec{}), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 3, 4, 4}), Tensor({2, 1, 1, 1}), nullptr, spec_of(1, 1, 1, 1, 0, 0, 1, 1, 2)),
                  ShapeError);
}

TEST_CASE("average pooling excludes padding from the divisor") {
  Tensor c({1, 2, 6, 6}, 3.25);
  PoolSpec p{{5, 5}, {2, 2}, {2, 2}};
  const Tensor pooled = avg_pool(c, p);
  for (double v : pooled.data()) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(global_avg_pool(Tensor({1, 1, 2, 2}, {1, 3, 5, 7}))[0] == 4.0);

  auto rng = rng_for(9);
  Tensor x = random_normal({1, 1, 16, 16}, rng);
  PoolSpec q{{5, 5}, {2, 2}, {2, 2}};
  Tensor y = avg_pool(x, q);
  for (int oy = 0; oy < y.shape().h; ++oy) {
    for (int ox = 0; ox < y.shape().w; ++ox) {
      double s = 0.0;
      int n = 0;
      for (int ky = 0; ky < 5; ++ky) {
        for (int kx = 0; kx < 5; ++kx) {
          const int iy = oy * 2 - 2 + ky, ix = ox * 2 - 2 + kx;
          if (iy < 0 || iy >= 16 || ix < 0 || ix >= 16) continue;
          s += x.at(0, 0, iy, ix);
          ++n;
        }
      }
      CHECK(std::abs(y.at(0, 0, oy, ox) - s / n) < 1e-14);
    }
  }
  CHECK_THROWS_AS(avg_pool(Tensor({1, 1, 2, 2}), PoolSpec{{5, 5}, {1, 1}, {0, 0}}), ShapeError);
}

TEST_CASE("batch norm moments and running statistics") {
  auto rng = rng_for(10);
  Tensor x = random_normal({4, 3, 5, 5}, rng, 2.0, 3.0);
  Tensor gamma({1, 3, 1, 1}, 1.0), beta({1, 3, 1, 1}, 0.0);
  Tensor rm({1, 3, 1, 1}, 0.5), rv({1, 3, 1, 1}, 2.0);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, NormMode::kTrain, 0.1, 1e-12);
  const int m = 4 * 25;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0, xm = 0, xv = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        mean += y.at(n, c, i / 5, i % 5);
        xm += x.at(n, c, i / 5, i % 5);
      }
    mean /= m;
    xm /= m;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        var += std::pow(y.at(n, c, i / 5, i % 5) - mean, 2);
        xv += std::pow(x.at(n, c, i / 5, i % 5) - xm, 2);
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-8);
    CHECK(rm[static_cast<std::size_t>(c)] == doctest::Approx(0.9 * 0.5 + 0.1 * xm).epsilon(1e-12));
    CHECK(rv[static_cast<std::size_t>(c)] == doctest::Approx(0.9 * 2.0 + 0.1 * xv / (m - 1)).epsilon(1e-12));
  }

  // Eval mode uses the running statistics, eps inside the root.
  Tensor g2({1, 3, 1, 1}, {1.5, -2.0, 0.5}), b2({1, 3, 1, 1}, {0.1, 0.2, 0.3});
  Tensor ye = batch_norm(x, g2, b2, rm, rv, NormMode::kEval, 0.1, 1e-5);
  for (int c = 0; c < 3; ++c) {
    const double want = (x.at(1, c, 2, 3) - rm[static_cast<std::size_t>(c)]) /
                            std::sqrt(rv[static_cast<std::size_t>(c)] + 1e-5) * g2[static_cast<std::size_t>(c)] +
                        b2[static_cast<std::size_t>(c)];
    CHECK(ye.at(1, c, 2, 3) == doctest::Approx(want).epsilon(1e-13));
  }

  Tensor constant({2, 3, 4, 4}, 5.0);
  Tensor yc = batch_norm(constant, gamma, beta, rm, rv, NormMode::kTrain, 0.1, 1e-5);
  for (double v : yc.data()) CHECK(std::abs(v) < 1e-12);
  Tensor zero_gamma({1, 3, 1, 1}, 0.0), seven({1, 3, 1, 1}, 7.0);
  const Tensor sevens = batch_norm(x, zero_gamma, seven, rm, rv, NormMode::kTrain, 0.1, 1e-5);
  for (double v : sevens.data()) CHECK(v == 7.0);
  CHECK_THROWS_AS(batch_norm(x, Tensor({1, 2, 1, 1}), Tensor({1, 2, 1, 1}), rm, rv, NormMode::kTrain, 0.1, 1e-5),
                  ShapeError);
}

TEST_CASE("activations") {
  CHECK(sigmoid_scalar(0.0) == 0.5);
  Tensor z({1, 3, 1, 1}, 0.0);
  Tensor s = softmax(z, 1);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  for (int i = 0; i < 100; ++i) {
    const double x = -5.0 + 10.0 * i / 99.0;
    CHECK(std::abs(gelu_scalar(x) - x * normal_cdf_quadrature(x)) < 1e-12);
  }

  auto rng = rng_for(12);
  Tensor a = random_normal({2, 4, 3, 3}, rng, 0.0, 5.0);
  for (int axis = 0; axis < 4; ++axis) {
    Tensor shifted = a;
    for (double& v : shifted.data()) v += 123.0;
    CHECK(max_abs_diff(softmax(a, axis), softmax(shifted, axis)) < 1e-12);
  }
  Tensor sm = softmax(a, 1);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        double t = 0;
        for (int c = 0; c < 4; ++c) t += sm.at(n, c, y, x);
        CHECK(std::abs(t - 1.0) < 1e-14);
      }
  Tensor big({1, 2, 1, 1}, {1000.0, 0.0});
  CHECK(softmax(big, 1).all_finite());
}

TEST_CASE("bilinear resize uses half-pixel centres") {
  Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  // Per axis, 2 -> 4 samples source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25.
  const double a[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
  Tensor y = bilinear_resize(x, 4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double want = 0;
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) want += a[i][p] * a[j][q] * x.at(0, 0, p, q);
      CHECK(std::abs(y.at(0, 0, i, j) - want) < 1e-15);
    }
  auto rng = rng_for(13);
  Tensor r = random_normal({2, 3, 5, 7}, rng);
  CHECK(max_abs_diff(bilinear_resize(r, 5, 7), r) == 0.0);
  const Tensor up = bilinear_resize(Tensor({1, 1, 3, 3}, 2.5), 8, 5);
  for (double v : up.data()) CHECK(std::abs(v - 2.5) < 1e-15);
  CHECK_THROWS(bilinear_resize(r, 4, 4, true));
}

TEST_CASE("backward basics") {
  Graph g;
  auto rng = rng_for(14);
  Tensor xv = random_normal({1, 2, 3, 3}, rng);
  ParamStore store;
  Parameter& w = store.add("w", random_normal({1, 2, 3, 3}, rng));
  Parameter& unused = store.add("unused", Tensor({1, 1, 1, 1}, 4.0));
  Var loss = sum(mul(g.param(w), g.input(xv)));
  (void)g.param(unused);
  g.backward(loss);
  CHECK(max_abs_diff(w.grad, xv) == 0.0);
  CHECK(unused.grad.shape() == unused.value.shape());
  CHECK(unused.grad[0] == 0.0);
  CHECK_THROWS(g.backward(loss));

  Graph g2;
  Var v = g2.variable(xv);
  CHECK_THROWS_AS(g2.backward(relu(v)), ShapeError);
  Graph g3(NormMode::kEval, false);
  Var s = sum(g3.input(xv));
  CHECK_THROWS(g3.backward(s));
}

TEST_CASE("non-finite values are rejected at op boundaries") {
  Graph g;
  Tensor bad({1, 1, 1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(g.input(bad), NumericalError);
  Var a = g.input(Tensor({1, 1, 1, 2}, 1e308));
  CHECK_THROWS_AS(add(a, a), NumericalError);
}

TEST_CASE("forward kernels report flops to the instrument counter") {
  Tensor x({1, 1, 4, 4}, 1.0);
  Tensor w({1, 1, 3, 3}, 1.0);
  instrument::FlopScope scope;
  (void)conv2d(x, w, nullptr, ConvSpec::square(3, 1, 1));
  CHECK(scope.total() == 288);
}

TEST_CASE("finite-difference gradients of primitive ops") {
  auto rng = rng_for(21);
  auto rn = [&](Shape s) { return random_normal(s, rng); };
  const double tol = 1e-6;

  SUBCASE("conv2d dense, strided, dilated, grouped, biased") {
    const ConvSpec specs[] = {spec_of(3, 3, 1, 1, 1, 1, 1, 1, 1), spec_of(3, 2, 2, 1, 1, 0, 1, 2, 1),
                              spec_of(1, 3, 1, 1, 0, 3, 1, 3, 2), spec_of(3, 3, 2, 2, 2, 2, 2, 2, 4)};
    for (const ConvSpec& sp : specs) {
      const Tensor w = rn({4, 4 / sp.groups, sp.kernel.h, sp.kernel.w});
      auto r = grad_check(
          [&](Graph&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], sp); },
          {rn({2, 4, 7, 6}), w, rn({1, 4, 1, 1})}, nullptr);
      CHECK_MESSAGE(r.worst < tol, r.where << " " << r.worst);
    }
  }
  SUBCASE("depthwise") {
    auto r = grad_check(
        [&](Graph&, const std::vector<Var>& v) { return depthwise(v[0], v[1], v[2], ConvSpec::square(5, 1, 2, 1, 3)); },
        {rn({2, 3, 6, 6}), rn({3, 1, 5, 5}), rn({1, 3, 1, 1})}, nullptr);
    CHECK(r.worst < tol);
  }
  SUBCASE("pooling") {
    auto r = grad_check([&](Graph&, const std::vector<Var>& v) { return avg_pool(v[0], PoolSpec{{5, 5}, {2, 2}, {2, 2}}); },
                        {rn({1, 2, 8, 7})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check([&](Graph&, const std::vector<Var>& v) { return global_avg_pool(v[0]); }, {rn({2, 3, 4, 5})}, nullptr);
    CHECK(r.worst < tol);
  }
  SUBCASE("batch norm train and eval") {
    for (NormMode mode : {NormMode::kTrain, NormMode::kEval}) {
      Tensor rm({1, 3, 1, 1}, 0.1), rv({1, 3, 1, 1}, 1.3);
      auto r = grad_check(
          [&](Graph&, const std::vector<Var>& v) { return batch_norm(v[0], v[1], v[2], rm, rv, 0.1, 1e-5); },
          {rn({2, 3, 4, 4}), rn({1, 3, 1, 1}), rn({1, 3, 1, 1})}, nullptr, 1, 1e-5, 48, mode);
      CHECK(r.worst < tol);
    }
  }
  SUBCASE("activations and softmax") {
    using Unary = Var (*)(Var);
    const Unary unary[] = {&relu, &gelu, &sigmoid};
    for (Unary fn : unary) {
      auto r = grad_check([&](Graph&, const std::vector<Var>& v) { return fn(v[0]); }, {rn({1, 3, 4, 4})}, nullptr);
      CHECK(r.worst < tol);
    }
    for (int axis = 0; axis < 4; ++axis) {
      auto r = grad_check([&](Graph&, const std::vector<Var>& v) { return softmax(v[0], axis); }, {rn({2, 3, 3, 2})}, nullptr);
      CHECK(r.worst < tol);
    }
  }
  SUBCASE("resize, reductions, structure ops") {
    auto r = grad_check([&](Graph&, const std::vector<Var>& v) { return bilinear_resize(v[0], 8, 5); }, {rn({1, 2, 3, 4})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check([&](Graph&, const std::vector<Var>& v) { return bilinear_resize(v[0], 3, 2); }, {rn({1, 2, 7, 5})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check([&](Graph&, const std::vector<Var>& v) { return channel_mean(v[0]); }, {rn({2, 4, 3, 3})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check([&](Graph&, const std::vector<Var>& v) { return channel_max(v[0]); }, {rn({2, 4, 3, 3})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check(
        [&](Graph&, const std::vector<Var>& v) {
          return slice_channels(concat_channels({v[0], v[1]}), 1, 4);
        },
        {rn({1, 2, 3, 3}), rn({1, 3, 3, 3})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check([&](Graph&, const std::vector<Var>& v) { return reshape(v[0], {1, 2, 9, 2}); }, {rn({1, 4, 3, 3})}, nullptr);
    CHECK(r.worst < tol);
  }
  SUBCASE("broadcasting arithmetic") {
    using Binary = Var (*)(Var, Var);
    const Binary binary_ops[] = {&add, &sub, &mul};
    for (Binary fn : binary_ops) {
      auto r = grad_check([&](Graph&, const std::vector<Var>& v) { return fn(v[0], v[1]); },
                          {rn({2, 3, 4, 4}), rn({2, 3, 1, 1})}, nullptr);
      CHECK(r.worst < tol);
      r = grad_check([&](Graph&, const std::vector<Var>& v) { return fn(v[0], v[1]); },
                     {rn({2, 1, 4, 4}), rn({2, 3, 4, 4})}, nullptr);
      CHECK(r.worst < tol);
    }
    auto r = grad_check([&](Graph&, const std::vector<Var>& v) { return affine(v[0], -1.5, 0.25); }, {rn({1, 2, 2, 2})}, nullptr);
    CHECK(r.worst < tol);
    r = grad_check([&](Graph&, const std::vector<Var>& v) { return mean(v[0]); }, {rn({1, 2, 2, 2})}, nullptr);
    CHECK(r.worst < tol);
  }
}
