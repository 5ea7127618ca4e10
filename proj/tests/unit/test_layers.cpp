#include "helpers.hpp"

#include "msnn/layers.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>

using namespace msnn;
using msnn::test::max_abs_diff;
using msnn::test::random_tensor;
using msnn::test::randomize;

namespace {

TemporalConvParams temporal_params(std::size_t F, std::size_t L, Rng& rng) {
  TemporalConvParams p{Param::zeros("k", {F, L}, ParamRole::Weight), Param::zeros("b", {F}, ParamRole::Bias)};
  randomize(p.kernel.value, rng);
  randomize(p.bias.value, rng);
  return p;
}

SeparableConvParams separable_params(std::size_t F_in, std::size_t F_out, std::size_t L, Rng& rng) {
  SeparableConvParams p{Param::zeros("d", {F_in, L}, ParamRole::Weight),
                        Param::zeros("p", {F_out, F_in}, ParamRole::Weight),
                        Param::zeros("b", {F_out}, ParamRole::Bias)};
  randomize(p.depthwise.value, rng);
  randomize(p.pointwise.value, rng);
  randomize(p.bias.value, rng);
  return p;
}

SpatialConvParams spatial_params(std::size_t n_c, std::size_t F_in, std::size_t F_out, Rng& rng) {
  SpatialConvParams p{Param::zeros("s", {n_c, F_in, F_out}, ParamRole::Weight),
                      Param::zeros("sb", {F_out}, ParamRole::Bias)};
  randomize(p.kernel.value, rng);
  randomize(p.bias.value, rng);
  return p;
}

BatchNormParams bn_params(std::size_t F) {
  BatchNormParams p{Param::zeros("g", {F}, ParamRole::BnGamma), Param::zeros("be", {F}, ParamRole::BnBeta),
                    std::vector<double>(F, 0.0), std::vector<double>(F, 1.0)};
  for (double& g : p.gamma.value) g = 1.0;
  return p;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central differences of f over every entry of `v`.
std::vector<double> numeric_grad(std::vector<double>& v, const std::function<double()>& f, double h = 1e-6) {
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double rel_err(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::max(std::abs(a[i]), std::abs(b[i])));
  }
  return num / den;
}

// Direct full 1-D conv (zero padded, centred like the layer) then channel mixing.
Tensor separable_oracle(const Tensor& x, const SeparableConvParams& p) {
  const std::size_t L = p.length(), pad = (L - 1) / 2;
  Tensor y(x.channels(), x.time(), p.out_maps());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t t = 0; t < x.time(); ++t) {
      for (std::size_t o = 0; o < p.out_maps(); ++o) {
        double acc = p.bias.value[o];
        for (std::size_t f = 0; f < p.in_maps(); ++f) {
          for (std::size_t k = 0; k < L; ++k) {
            const auto src = static_cast<long>(t + k) - static_cast<long>(pad);
            if (src < 0 || src >= static_cast<long>(x.time())) continue;
            // rank-1 full kernel W[o, f, k] = P[o, f] * D[f, k]
            const double w = p.pointwise.value[o * p.in_maps() + f] * p.depthwise.value[f * L + k];
            acc += w * x(c, static_cast<std::size_t>(src), f);
          }
        }
        y(c, t, o) = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("temporal conv matches a direct loop") {
  Rng rng(1);
  const Tensor x = random_tensor(2, 16, 1, rng);
  const auto p = temporal_params(2, 4, rng);
  const Tensor y = nn::temporal_conv_forward(x, p);
  REQUIRE(y.channels() == 2);
  REQUIRE(y.time() == 13);
  REQUIRE(y.maps() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < 13; ++t) {
      for (std::size_t f = 0; f < 2; ++f) {
        double acc = p.bias.value[f];
        for (std::size_t k = 0; k < 4; ++k) acc += p.kernel.value[f * 4 + k] * x(c, t + k, 0);
        CHECK(y(c, t, f) == doctest::Approx(acc).epsilon(1e-14));
      }
    }
  }
  const Tensor nb = nn::temporal_conv_forward(x, p, false);
  CHECK(nb(1, 5, 1) == doctest::Approx(y(1, 5, 1) - p.bias.value[1]).epsilon(1e-14));
}

TEST_CASE("temporal conv with a unit impulse kernel picks out a shifted input") {
  Rng rng(2);
  const Tensor x = random_tensor(3, 20, 1, rng);
  TemporalConvParams p{Param::zeros("k", {1, 5}, ParamRole::Weight), Param::zeros("b", {1}, ParamRole::Bias)};
  p.kernel.value[2] = 1.0;
  const Tensor y = nn::temporal_conv_forward(x, p);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < 16; ++t) CHECK(y(c, t, 0) == x(c, t + 2, 0));
  }
}

TEST_CASE("temporal conv output length and errors") {
  Rng rng(3);
  const auto p = temporal_params(16, 64, rng);
  CHECK(nn::temporal_conv_forward(Tensor(8, 832, 1), p).time() == 769);
  CHECK_THROWS(nn::temporal_conv_forward(Tensor(8, 63, 1), p));
  CHECK_THROWS(nn::temporal_conv_forward(Tensor(8, 100, 2), p));
}

TEST_CASE("separable conv with impulse depthwise and identity pointwise is the identity") {
  Rng rng(4);
  for (std::size_t L : {1u, 2u, 5u, 8u, 33u}) {
    const std::size_t F = 3;
    SeparableConvParams p{Param::zeros("d", {F, L}, ParamRole::Weight), Param::zeros("p", {F, F}, ParamRole::Weight),
                          Param::zeros("b", {F}, ParamRole::Bias)};
    for (std::size_t f = 0; f < F; ++f) {
      p.depthwise.value[f * L + nn::same_pad_left(L)] = 1.0;
      p.pointwise.value[f * F + f] = 1.0;
    }
    const Tensor x = random_tensor(2, 40, F, rng);
    const Tensor y = nn::separable_conv_forward(x, p);
    CHECK(y.same_shape(x));
    CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
  }
}

TEST_CASE("separable conv equals depthwise then pointwise loops") {
  Rng rng(5);
  const std::size_t n_c = 3, T = 20, F_in = 4, F_out = 8, L = 5;
  const Tensor x = random_tensor(n_c, T, F_in, rng);
  const auto p = separable_params(F_in, F_out, L, rng);
  Tensor u(n_c, T, F_in);
  for (std::size_t c = 0; c < n_c; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F_in; ++f) {
        double acc = 0.0;
        for (std::size_t k = 0; k < L; ++k) {
          const long s = static_cast<long>(t + k) - 2;
          if (s >= 0 && s < static_cast<long>(T)) acc += p.depthwise.value[f * L + k] * x(c, s, f);
        }
        u(c, t, f) = acc;
      }
    }
  }
  CHECK(max_abs_diff(nn::depthwise_forward(x, p.depthwise).values(), u.values()) < 1e-13);
  Tensor y(n_c, T, F_out);
  for (std::size_t c = 0; c < n_c; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t o = 0; o < F_out; ++o) {
        double acc = p.bias.value[o];
        for (std::size_t f = 0; f < F_in; ++f) acc += p.pointwise.value[o * F_in + f] * u(c, t, f);
        y(c, t, o) = acc;
      }
    }
  }
  CHECK(max_abs_diff(nn::separable_conv_forward(x, p).values(), y.values()) < 1e-12);
}

TEST_CASE("separable conv equals a rank-one full convolution on random shapes") {
  Rng rng(6);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t n_c = 1 + rng.index(4), T = 4 + rng.index(40), F_in = 1 + rng.index(6),
                      F_out = 1 + rng.index(9), L = 1 + rng.index(T + 3);
    const Tensor x = random_tensor(n_c, T, F_in, rng);
    const auto p = separable_params(F_in, F_out, L, rng);
    const Tensor y = nn::separable_conv_forward(x, p);
    const Tensor ref = separable_oracle(x, p);
    INFO("n_c=" << n_c << " T=" << T << " F_in=" << F_in << " F_out=" << F_out << " L=" << L);
    CHECK(y.same_shape(ref));
    CHECK(max_abs_diff(y.values(), ref.values()) < 1e-12);
  }
}

TEST_CASE("separable conv rejects a map mismatch") {
  Rng rng(7);
  const auto p = separable_params(4, 8, 3, rng);
  CHECK_THROWS(nn::separable_conv_forward(Tensor(2, 10, 5), p));
}

TEST_CASE("spatial conv with averaging kernel gives the channel mean") {
  const std::size_t n_c = 4;
  SpatialConvParams p{Param::zeros("s", {n_c, 1, 1}, ParamRole::Weight), Param::zeros("sb", {1}, ParamRole::Bias)};
  for (double& w : p.kernel.value) w = 1.0 / n_c;
  Tensor x(n_c, 3, 1);
  for (std::size_t c = 0; c < n_c; ++c) {
    for (std::size_t t = 0; t < 3; ++t) x(c, t, 0) = static_cast<double>(c + 1) * static_cast<double>(t + 1);
  }
  const Tensor y = nn::spatial_conv_forward(x, p);
  REQUIRE(y.channels() == 1);
  for (std::size_t t = 0; t < 3; ++t) CHECK(y(0, t, 0) == doctest::Approx(2.5 * static_cast<double>(t + 1)));
}

TEST_CASE("spatial conv matches a direct loop") {
  Rng rng(8);
  const std::size_t n_c = 4, T = 10, F = 3, F_out = 5;
  const Tensor x = random_tensor(n_c, T, F, rng);
  const auto p = spatial_params(n_c, F, F_out, rng);
  const Tensor y = nn::spatial_conv_forward(x, p);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t o = 0; o < F_out; ++o) {
      double acc = p.bias.value[o];
      for (std::size_t c = 0; c < n_c; ++c) {
        for (std::size_t f = 0; f < F; ++f) acc += p.kernel.value[(c * F + f) * F_out + o] * x(c, t, f);
      }
      CHECK(y(0, t, o) == doctest::Approx(acc).epsilon(1e-13));
    }
  }
  Rng r2(9);
  const auto big = spatial_params(8, 16, 16, r2);
  const Tensor out = nn::spatial_conv_forward(Tensor(8, 100, 16, 0.5), big);
  CHECK(out.channels() == 1);
  CHECK(out.time() == 100);
  CHECK(out.maps() == 16);
  CHECK_THROWS(nn::spatial_conv_forward(Tensor(7, 100, 16), big));
}

TEST_CASE("batch norm standardizes each map over batch, channel and time") {
  Rng rng(10);
  Batch xs;
  for (int i = 0; i < 6; ++i) {
    Tensor x = random_tensor(1, 30, 3, rng);
    for (std::size_t t = 0; t < 30; ++t) {
      x(0, t, 1) = 4.0 * x(0, t, 1) + 7.0;
      x(0, t, 2) = 0.1 * x(0, t, 2) - 3.0;
    }
    xs.push_back(x);
  }
  auto p = bn_params(3);
  p.eps = 0.0;
  const Batch ys = nn::batch_norm_forward(xs, p, Mode::Train, false);
  for (std::size_t f = 0; f < 3; ++f) {
    double s = 0, ss = 0, n = 0;
    for (const auto& y : ys) {
      for (std::size_t t = 0; t < 30; ++t) {
        s += y(0, t, f);
        ss += y(0, t, f) * y(0, t, f);
        n += 1;
      }
    }
    CHECK(std::abs(s / n) < 1e-12);
    CHECK(ss / n == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_FALSE(p.ready);
}

TEST_CASE("batch norm of a constant map is the shift") {
  auto p = bn_params(2);
  p.beta.value = {0.25, -1.0};
  const Batch xs{Tensor(2, 5, 2, 3.0), Tensor(2, 5, 2, 3.0)};
  const Batch ys = nn::batch_norm_forward(xs, p, Mode::Train, true);
  for (const auto& y : ys) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t t = 0; t < 5; ++t) {
        CHECK(y(c, t, 0) == doctest::Approx(0.25));
        CHECK(y(c, t, 1) == doctest::Approx(-1.0));
      }
    }
  }
}

TEST_CASE("batch norm running statistics and eval mode") {
  auto p = bn_params(1);
  CHECK_THROWS_AS(nn::batch_norm_forward({Tensor(1, 4, 1, 1.0)}, p, Mode::Eval, false), std::logic_error);
  Tensor a(1, 4, 1, std::vector<double>{1, 2, 3, 4});
  nn::batch_norm_forward({a}, p, Mode::Train, true);
  REQUIRE(p.ready);
  // mean 2.5, unbiased variance 5/3
  CHECK(p.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5));
  CHECK(p.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 5.0 / 3.0));
  const Batch y = nn::batch_norm_forward({a}, p, Mode::Eval, false);
  std::vector<double> scale, shift;
  nn::batch_norm_affine(p, scale, shift);
  for (std::size_t t = 0; t < 4; ++t) {
    const double expect = (a(0, t, 0) - p.running_mean[0]) / std::sqrt(p.running_var[0] + p.eps);
    CHECK(y[0](0, t, 0) == doctest::Approx(expect).epsilon(1e-13));
    CHECK(y[0](0, t, 0) == doctest::Approx(scale[0] * a(0, t, 0) + shift[0]).epsilon(1e-13));
  }
}

TEST_CASE("leaky relu values") {
  const Tensor x(1, 4, 1, std::vector<double>{-2.0, -0.0, 0.5, 3.0});
  const Tensor y = nn::leaky_relu_forward(x, 0.01);
  CHECK(y(0, 0, 0) == doctest::Approx(-0.02));
  CHECK(y(0, 1, 0) == 0.0);
  CHECK(y(0, 2, 0) == 0.5);
  CHECK(y(0, 3, 0) == 3.0);
  const Tensor g = nn::leaky_relu_backward(x, Tensor(1, 4, 1, 1.0), 0.01);
  CHECK(g(0, 0, 0) == doctest::Approx(0.01));
  CHECK(g(0, 3, 0) == 1.0);
}

TEST_CASE("global average pooling") {
  const Tensor x(1, 4, 2, std::vector<double>{1, 10, 2, 20, 3, 30, 6, 40});
  const Tensor y = nn::gap_forward(x);
  REQUIRE(y.size() == 2);
  CHECK(y(0, 0, 0) == doctest::Approx(3.0));
  CHECK(y(0, 0, 1) == doctest::Approx(25.0));
  const Tensor g = nn::gap_backward(x, Tensor(1, 1, 2, std::vector<double>{1.0, -2.0}));
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(g(0, t, 0) == doctest::Approx(0.25));
    CHECK(g(0, t, 1) == doctest::Approx(-0.5));
  }
  CHECK_THROWS(nn::gap_forward(Tensor(2, 4, 1)));
}

TEST_CASE("concat and split feature maps") {
  Rng rng(11);
  const std::vector<Tensor> parts{random_tensor(1, 1, 16, rng), random_tensor(1, 1, 32, rng),
                                  random_tensor(1, 1, 64, rng)};
  const Tensor z = nn::concat_featuremaps(parts);
  REQUIRE(z.maps() == 112);
  CHECK(z(0, 0, 0) == parts[0](0, 0, 0));
  CHECK(z(0, 0, 16) == parts[1](0, 0, 0));
  CHECK(z(0, 0, 111) == parts[2](0, 0, 63));
  const std::vector<std::size_t> widths{16, 32, 64};
  const auto back = nn::split_featuremaps(z, widths);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == parts[i]);
  const std::vector<std::size_t> bad{16, 32};
  CHECK_THROWS(nn::split_featuremaps(z, bad));
  const std::vector<Tensor> mismatch{Tensor(1, 2, 3), Tensor(1, 3, 3)};
  CHECK_THROWS(nn::concat_featuremaps(mismatch));
}

TEST_CASE("softmax values") {
  auto p = nn::softmax(std::vector<double>{0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.5));
  p = nn::softmax(std::vector<double>{std::log(1.0), std::log(3.0)});
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));
  const auto shifted = nn::softmax(std::vector<double>{100.0 + std::log(1.0), 100.0 + std::log(3.0)});
  CHECK(shifted[1] == doctest::Approx(0.75).epsilon(1e-14));
  const auto big = nn::softmax(std::vector<double>{1000.0, 0.0, -1000.0});
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(big[2]));
}

TEST_CASE("dense layer") {
  DenseParams d{Param::zeros("w", {3, 2}, ParamRole::Weight), Param::zeros("wb", {2}, ParamRole::Bias)};
  d.weight.value = {1, 0, 0, 1, 1, 1};
  d.bias.value = {0.5, -0.5};
  const Tensor x(1, 1, 3, std::vector<double>{1, 2, 3});
  const auto z = nn::dense_forward(x, d);
  CHECK(z[0] == doctest::Approx(4.5));
  CHECK(z[1] == doctest::Approx(4.5));
  const auto p = nn::dense_softmax_forward(x, d);
  CHECK(p[0] == doctest::Approx(0.5));
}

TEST_CASE("layer backward passes agree with finite differences") {
  Rng rng(12);
  SUBCASE("temporal conv") {
    Tensor x = random_tensor(2, 12, 1, rng);
    auto p = temporal_params(3, 4, rng);
    const Tensor r = random_tensor(2, 9, 3, rng);
    auto loss = [&] { return dot(nn::temporal_conv_forward(x, p).values(), r.values()); };
    Gradients g;
    const Tensor gx = nn::temporal_conv_backward(x, r, p, &g);
    CHECK(rel_err(g.get(p.kernel), numeric_grad(p.kernel.value, loss)) < 1e-7);
    CHECK(rel_err(g.get(p.bias), numeric_grad(p.bias.value, loss)) < 1e-7);
    CHECK(rel_err(gx.values(), numeric_grad(x.storage(), loss)) < 1e-7);
  }
  SUBCASE("separable conv") {
    Tensor x = random_tensor(2, 11, 3, rng);
    auto p = separable_params(3, 4, 4, rng);
    const Tensor r = random_tensor(2, 11, 4, rng);
    auto loss = [&] { return dot(nn::separable_conv_forward(x, p).values(), r.values()); };
    const Tensor u = nn::depthwise_forward(x, p.depthwise);
    std::vector<double> gd(p.depthwise.size()), gp(p.pointwise.size()), gb(p.bias.size());
    const Tensor gu = nn::pointwise_backward(u, r, p.pointwise, &gp, &gb);
    const Tensor gx = nn::depthwise_backward(x, gu, p.depthwise, &gd);
    CHECK(rel_err(gd, numeric_grad(p.depthwise.value, loss)) < 1e-7);
    CHECK(rel_err(gp, numeric_grad(p.pointwise.value, loss)) < 1e-7);
    CHECK(rel_err(gb, numeric_grad(p.bias.value, loss)) < 1e-7);
    CHECK(rel_err(gx.values(), numeric_grad(x.storage(), loss)) < 1e-7);
  }
  SUBCASE("spatial conv") {
    Tensor x = random_tensor(3, 7, 2, rng);
    auto p = spatial_params(3, 2, 4, rng);
    const Tensor r = random_tensor(1, 7, 4, rng);
    auto loss = [&] { return dot(nn::spatial_conv_forward(x, p).values(), r.values()); };
    Gradients g;
    const Tensor gx = nn::spatial_conv_backward(x, r, p, &g);
    CHECK(rel_err(g.get(p.kernel), numeric_grad(p.kernel.value, loss)) < 1e-7);
    CHECK(rel_err(g.get(p.bias), numeric_grad(p.bias.value, loss)) < 1e-7);
    CHECK(rel_err(gx.values(), numeric_grad(x.storage(), loss)) < 1e-7);
  }
  SUBCASE("batch norm in training mode") {
    Batch xs{random_tensor(2, 6, 3, rng), random_tensor(2, 6, 3, rng), random_tensor(2, 6, 3, rng)};
    auto p = bn_params(3);
    randomize(p.gamma.value, rng);
    randomize(p.beta.value, rng);
    const Batch rs{random_tensor(2, 6, 3, rng), random_tensor(2, 6, 3, rng), random_tensor(2, 6, 3, rng)};
    auto loss = [&] {
      const Batch ys = nn::batch_norm_forward(xs, p, Mode::Train, false);
      double s = 0.0;
      for (std::size_t i = 0; i < ys.size(); ++i) s += dot(ys[i].values(), rs[i].values());
      return s;
    };
    nn::BatchNormCache cache;
    nn::batch_norm_forward(xs, p, Mode::Train, false, &cache);
    Gradients g;
    const Batch gx = nn::batch_norm_backward(xs, rs, p, cache, &g);
    CHECK(rel_err(g.get(p.gamma), numeric_grad(p.gamma.value, loss)) < 1e-7);
    CHECK(rel_err(g.get(p.beta), numeric_grad(p.beta.value, loss)) < 1e-7);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      CHECK(rel_err(gx[i].values(), numeric_grad(xs[i].storage(), loss)) < 1e-6);
    }
  }
  SUBCASE("dense") {
    Tensor x = random_tensor(1, 1, 5, rng);
    DenseParams d{Param::zeros("w", {5, 3}, ParamRole::Weight), Param::zeros("wb", {3}, ParamRole::Bias)};
    randomize(d.weight.value, rng);
    randomize(d.bias.value, rng);
    const std::vector<double> r{0.3, -1.2, 0.7};
    auto loss = [&] { return dot(nn::dense_forward(x, d), r); };
    Gradients g;
    const Tensor gx = nn::dense_backward(x, r, d, &g);
    CHECK(rel_err(g.get(d.weight), numeric_grad(d.weight.value, loss)) < 1e-7);
    CHECK(rel_err(g.get(d.bias), numeric_grad(d.bias.value, loss)) < 1e-7);
    CHECK(rel_err(gx.values(), numeric_grad(x.storage(), loss)) < 1e-7);
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Rng rng(13);
  const Tensor x = random_tensor(3, 7, 2, rng);
  const auto p = spatial_params(3, 2, 4, rng);
  Gradients g;
  const Tensor gx = nn::spatial_conv_backward(x, Tensor(1, 7, 4), p, &g);
  for (double v : g.get(p.kernel)) CHECK(v == 0.0);
  for (double v : gx.values()) CHECK(v == 0.0);
  CHECK(g.all_finite());
}

}  // TEST_SUITE
