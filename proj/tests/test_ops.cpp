#include "doctest.h"

#include <cmath>

#include "core/ops.hpp"

using namespace efcn;

namespace {

TensorD randn(Rng& rng, Shape s, double scale = 1.0, bool grad = false) {
  TensorD t = TensorD::zeros(s, grad);
  for (i64 i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
  return t;
}

// independent half-pixel bilinear, written from the definition
double naive_bilinear_at(const TensorD& x, int n, int c, int oy, int ox, int oh, int ow) {
  const Shape& s = x.shape();
  auto sample = [&](double sy, double sx) {
    sy = std::min(std::max(sy, 0.0), double(s.h - 1));
    sx = std::min(std::max(sx, 0.0), double(s.w - 1));
    int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
    int y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
    double fy = sy - y0, fx = sx - x0;
    double v00 = x.at(n, c, y0, x0), v01 = x.at(n, c, y0, x1);
    double v10 = x.at(n, c, y1, x0), v11 = x.at(n, c, y1, x1);
    return (1 - fy) * (1 - fx) * v00 + (1 - fy) * fx * v01 + fy * (1 - fx) * v10 + fy * fx * v11;
  };
  return sample((oy + 0.5) * double(s.h) / oh - 0.5, (ox + 0.5) * double(s.w) / ow - 0.5);
}

}  // namespace

TEST_CASE("conv1x1 computes per-position dot products") {
  TensorD x = TensorD::from_data({1, 2, 1, 1}, {1.0, 2.0});
  TensorD w = TensorD::from_data({1, 2, 1, 1}, {2.0, 3.0});
  TensorD out = conv1x1(x, w);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.data()[0] == doctest::Approx(8.0));
}

TEST_CASE("conv1x1 maps channels without touching the grid") {
  Rng rng(1);
  TensorD x = randn(rng, {2, 6, 5, 7});
  TensorD w = randn(rng, {3, 6, 1, 1});
  TensorD b = TensorD::from_data({1, 3, 1, 1}, {0.5, -1.0, 2.0});
  TensorD out = conv1x1(x, w, b);
  CHECK(out.shape() == Shape{2, 3, 5, 7});
  // spot check one position against a hand dot product
  double acc = 0.5;
  for (int i = 0; i < 6; ++i) acc += w.at(0, i, 0, 0) * x.at(1, i, 3, 2);
  CHECK(out.at(1, 0, 3, 2) == doctest::Approx(acc));
}

TEST_CASE("conv1x1 shape errors name both operands") {
  TensorD x = TensorD::zeros({1, 4, 2, 2});
  TensorD w = TensorD::zeros({2, 3, 1, 1});
  CHECK_THROWS_WITH_AS(conv1x1(x, w), doctest::Contains("(1,4,2,2)"), ShapeError);
}

TEST_CASE("conv2d with an identity kernel reproduces the input") {
  Rng rng(2);
  TensorD x = randn(rng, {1, 2, 6, 6});
  TensorD w = TensorD::zeros({2, 2, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  w.at(1, 1, 1, 1) = 1.0;
  TensorD out = conv2d(x, w, {}, 1, 1);
  REQUIRE(out.shape() == x.shape());
  for (i64 i = 0; i < x.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d output geometry follows stride and dilation") {
  TensorD x = TensorD::zeros({1, 1, 64, 64});
  TensorD w = TensorD::zeros({1, 1, 3, 3});
  CHECK(conv2d(x, w, {}, 2, 1).shape() == Shape{1, 1, 32, 32});
  CHECK(conv2d(x, w, {}, 1, 2, 2).shape() == Shape{1, 1, 64, 64});
  TensorD w7 = TensorD::zeros({1, 1, 7, 7});
  CHECK(conv2d(x, w7, {}, 2, 3).shape() == Shape{1, 1, 32, 32});
}

TEST_CASE("conv2d matches a direct summation") {
  Rng rng(3);
  TensorD x = randn(rng, {2, 3, 5, 6});
  TensorD w = randn(rng, {4, 3, 3, 3});
  TensorD b = randn(rng, {1, 4, 1, 1});
  TensorD out = conv2d(x, w, b, 2, 1, 1);
  REQUIRE(out.shape() == Shape{2, 4, 3, 3});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = b.at(0, o, 0, 0);
          for (int i = 0; i < 3; ++i)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                acc += w.at(o, i, ky, kx) * x.at(n, i, iy, ix);
              }
          CHECK(out.at(n, o, oy, ox) == doctest::Approx(acc));
        }
}

TEST_CASE("batch_norm standardizes per channel in training mode") {
  Rng rng(4);
  TensorD x = randn(rng, {3, 2, 4, 4}, 2.5);
  for (i64 i = 0; i < x.numel(); ++i) x.data()[i] += 1.5;
  TensorD gamma = TensorD::full({1, 2, 1, 1}, 1.0);
  TensorD beta = TensorD::zeros({1, 2, 1, 1});
  TensorD rm = TensorD::zeros({1, 2, 1, 1});
  TensorD rv = TensorD::full({1, 2, 1, 1}, 1.0);
  TensorD y = batch_norm(x, gamma, beta, rm, rv, true);
  for (int c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < 3; ++n)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) mean += y.at(n, c, h, w);
    mean /= 48.0;
    for (int n = 0; n < 3; ++n)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) {
          double d = y.at(n, c, h, w) - mean;
          var += d * d;
        }
    var /= 48.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  // running stats moved one momentum step toward the batch stats
  CHECK(rm.data()[0] != 0.0);
  double batch_mean = 0;
  for (int n = 0; n < 3; ++n)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) batch_mean += x.at(n, 0, h, w);
  batch_mean /= 48.0;
  CHECK(rm.data()[0] == doctest::Approx(0.1 * batch_mean));
}

TEST_CASE("batch_norm eval mode uses running estimates") {
  TensorD x = TensorD::from_data({1, 1, 1, 2}, {3.0, 5.0});
  TensorD gamma = TensorD::full({1, 1, 1, 1}, 2.0);
  TensorD beta = TensorD::full({1, 1, 1, 1}, 1.0);
  TensorD rm = TensorD::full({1, 1, 1, 1}, 3.0);
  TensorD rv = TensorD::full({1, 1, 1, 1}, 4.0);
  TensorD y = batch_norm(x, gamma, beta, rm, rv, false);
  CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(1.0 + 2.0 * 2.0 / std::sqrt(4.0 + 1e-5)).epsilon(1e-6));
  // eval must not move the estimates
  CHECK(rm.data()[0] == 3.0);
  CHECK(rv.data()[0] == 4.0);
}

TEST_CASE("bilinear resize at equal size is the identity, bitwise") {
  Rng rng(5);
  TensorF x = TensorF::zeros({2, 3, 7, 9});
  for (i64 i = 0; i < x.numel(); ++i) x.data()[i] = float(rng.normal());
  TensorF y = bilinear_resize(x, 7, 9);
  for (i64 i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("bilinear resize maps constants to constants exactly") {
  TensorD x = TensorD::full({1, 2, 3, 5}, 0.37);
  TensorD up = bilinear_resize(x, 12, 20);
  TensorD down = bilinear_resize(x, 2, 2);
  for (i64 i = 0; i < up.numel(); ++i) CHECK(up.data()[i] == 0.37);
  for (i64 i = 0; i < down.numel(); ++i) CHECK(down.data()[i] == 0.37);
}

TEST_CASE("bilinear resize matches the naive half-pixel definition") {
  Rng rng(6);
  TensorD x = randn(rng, {1, 2, 2, 2});
  TensorD y = bilinear_resize(x, 4, 4);
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox)
        CHECK(y.at(0, c, oy, ox) ==
              doctest::Approx(naive_bilinear_at(x, 0, c, oy, ox, 4, 4)).epsilon(1e-12));

  TensorD big = randn(rng, {2, 3, 9, 5});
  TensorD down = bilinear_resize(big, 3, 4);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 4; ++ox)
          CHECK(down.at(n, c, oy, ox) ==
                doctest::Approx(naive_bilinear_at(big, n, c, oy, ox, 3, 4)).epsilon(1e-12));
}

TEST_CASE("softmax_spatial recovers hand-computed weights") {
  TensorD x = TensorD::from_data({1, 1, 1, 2}, {0.0, std::log(3.0)});
  TensorD y = softmax_spatial(x);
  CHECK(y.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax_spatial slices sum to one and shrug off shifts") {
  Rng rng(7);
  TensorD x = randn(rng, {2, 4, 3, 5}, 3.0);
  TensorD y = softmax_spatial(x);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c) {
      double sum = 0;
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 5; ++w) {
          CHECK(y.at(n, c, h, w) >= 0.0);
          sum += y.at(n, c, h, w);
        }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  TensorD shifted = TensorD::zeros(x.shape());
  for (i64 i = 0; i < x.numel(); ++i) shifted.data()[i] = x.data()[i] + 123.25;
  TensorD y2 = softmax_spatial(shifted);
  for (i64 i = 0; i < y.numel(); ++i)
    CHECK(std::abs(y.data()[i] - y2.data()[i]) < 1e-6);
}

TEST_CASE("softmax_channel normalizes class scores per position") {
  Rng rng(8);
  TensorD x = randn(rng, {1, 5, 2, 3}, 2.0);
  TensorD y = softmax_channel(x);
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 3; ++w) {
      double sum = 0;
      for (int c = 0; c < 5; ++c) sum += y.at(0, c, h, w);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("concat_channels stacks in argument order") {
  TensorD a = TensorD::full({1, 2, 2, 2}, 1.0);
  TensorD b = TensorD::full({1, 3, 2, 2}, 2.0);
  TensorD c = TensorD::full({1, 1, 2, 2}, 3.0);
  TensorD out = concat_channels<double>({a, b, c});
  CHECK(out.shape() == Shape{1, 6, 2, 2});
  CHECK(out.at(0, 0, 0, 0) == 1.0);
  CHECK(out.at(0, 2, 1, 1) == 2.0);
  CHECK(out.at(0, 5, 0, 1) == 3.0);
  TensorD bad = TensorD::zeros({1, 1, 3, 2});
  CHECK_THROWS_AS(concat_channels<double>({a, bad}), ShapeError);
}

TEST_CASE("weighted_pool with uniform weights is the spatial mean") {
  Rng rng(9);
  TensorD basis = randn(rng, {2, 3, 2, 4});
  TensorD wts = TensorD::full({2, 2, 2, 4}, 1.0 / 8.0);
  TensorD cw = weighted_pool(basis, wts);
  CHECK(cw.shape() == Shape{2, 3, 2, 1});
  for (int n = 0; n < 2; ++n)
    for (int d = 0; d < 3; ++d) {
      double mean = 0;
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 4; ++w) mean += basis.at(n, d, h, w);
      mean /= 8.0;
      CHECK(cw.at(n, d, 0, 0) == doctest::Approx(mean));
      CHECK(cw.at(n, d, 1, 0) == doctest::Approx(mean));
    }
}

TEST_CASE("weighted_pool with a one-hot map picks out one position") {
  Rng rng(10);
  TensorD basis = randn(rng, {1, 4, 3, 3});
  TensorD wts = TensorD::zeros({1, 1, 3, 3});
  wts.at(0, 0, 2, 1) = 1.0;
  TensorD cw = weighted_pool(basis, wts);
  for (int d = 0; d < 4; ++d)
    CHECK(cw.at(0, d, 0, 0) == doctest::Approx(basis.at(0, d, 2, 1)));
}

TEST_CASE("assemble with a single all-ones coefficient map broadcasts the codeword") {
  Rng rng(11);
  TensorD cw = randn(rng, {1, 5, 1, 1});
  TensorD coeff = TensorD::full({1, 1, 3, 2}, 1.0);
  TensorD out = assemble(coeff, cw);
  CHECK(out.shape() == Shape{1, 5, 3, 2});
  for (int d = 0; d < 5; ++d)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 2; ++w)
        CHECK(out.at(0, d, h, w) == doctest::Approx(cw.at(0, d, 0, 0)));
}

TEST_CASE("assemble forms per-position combinations") {
  TensorD cw = TensorD::from_data({1, 2, 2, 1}, {1.0, 10.0, 2.0, 20.0});
  TensorD coeff = TensorD::from_data({1, 2, 1, 2}, {0.5, 1.0, 0.25, -1.0});
  TensorD out = assemble(coeff, cw);
  // position 0: 0.5*c0 + 0.25*c1 ; position 1: 1.0*c0 - 1.0*c1
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(0.5 * 1.0 + 0.25 * 10.0));
  CHECK(out.at(0, 1, 0, 0) == doctest::Approx(0.5 * 2.0 + 0.25 * 20.0));
  CHECK(out.at(0, 0, 0, 1) == doctest::Approx(1.0 - 10.0));
  CHECK(out.at(0, 1, 0, 1) == doctest::Approx(2.0 - 20.0));
}

TEST_CASE("global_avg of a constant map is that constant") {
  TensorD x = TensorD::full({2, 3, 4, 4}, -1.25);
  TensorD y = global_avg(x);
  CHECK(y.shape() == Shape{2, 3, 1, 1});
  for (i64 i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(-1.25));
}

TEST_CASE("add_broadcast adds one scalar per (n,c) plane") {
  TensorD x = TensorD::full({2, 2, 2, 2}, 1.0);
  TensorD v = TensorD::from_data({2, 2, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  TensorD y = add_broadcast(x, v);
  CHECK(y.at(0, 0, 1, 1) == 2.0);
  CHECK(y.at(0, 1, 0, 0) == 3.0);
  CHECK(y.at(1, 0, 0, 1) == 4.0);
  CHECK(y.at(1, 1, 1, 0) == 5.0);
  TensorD bad = TensorD::zeros({2, 2, 2, 1});
  CHECK_THROWS_AS(add_broadcast(x, bad), ShapeError);
}

TEST_CASE("cross entropy is tiny for confident correct logits and ln K for uniform") {
  const int K = 7;
  TensorD peaked = TensorD::zeros({1, K, 1, 1});
  peaked.at(0, 3, 0, 0) = 50.0;
  LabelMap lab = LabelMap::filled(1, 1, 1, 3);
  TensorD l1 = cross_entropy_mask(peaked, lab, 255);
  CHECK(l1.data()[0] == doctest::Approx(0.0).epsilon(1e-12));

  TensorD uniform = TensorD::zeros({1, K, 1, 1});
  TensorD l2 = cross_entropy_mask(uniform, lab, 255);
  CHECK(l2.data()[0] == doctest::Approx(std::log(double(K))).epsilon(1e-12));
}

TEST_CASE("cross entropy averages over non-ignored pixels only") {
  TensorD z = TensorD::zeros({1, 2, 1, 3});
  z.at(0, 0, 0, 0) = 2.0;  // pixel 0 favors class 0
  z.at(0, 1, 0, 1) = 2.0;  // pixel 1 favors class 1
  LabelMap lab = LabelMap::filled(1, 1, 3, 255);
  lab.at(0, 0, 0) = 0;
  lab.at(0, 0, 1) = 1;
  // pixel 2 stays ignored
  TensorD loss = cross_entropy_mask(z, lab, 255);
  double per_pixel = std::log(1.0 + std::exp(-2.0));
  CHECK(loss.data()[0] == doctest::Approx(per_pixel).epsilon(1e-12));
}

TEST_CASE("cross entropy edge cases") {
  TensorD z = TensorD::zeros({1, 3, 2, 2});
  LabelMap all_ignored = LabelMap::filled(1, 2, 2, 255);
  CHECK(cross_entropy_mask(z, all_ignored, 255).data()[0] == 0.0);

  LabelMap bad = LabelMap::filled(1, 2, 2, 3);  // class 3 of 3 is out of range
  CHECK_THROWS_AS(cross_entropy_mask(z, bad, 255), ValidationError);

  LabelMap wrong_size = LabelMap::filled(1, 2, 3, 0);
  CHECK_THROWS_AS(cross_entropy_mask(z, wrong_size, 255), ShapeError);
}

TEST_CASE("relu and flip behave") {
  TensorD x = TensorD::from_data({1, 1, 1, 4}, {-2.0, -0.5, 0.5, 3.0});
  TensorD y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 0.5);
  CHECK(y.data()[3] == 3.0);

  TensorD f = flip_w(x);
  CHECK(f.data()[0] == 3.0);
  CHECK(f.data()[3] == -2.0);
  TensorD ff = flip_w(f);
  for (int i = 0; i < 4; ++i) CHECK(ff.data()[i] == x.data()[i]);
}

TEST_CASE("forward ops leave finite values on finite inputs") {
  Rng rng(12);
  TensorD x = randn(rng, {2, 6, 8, 8}, 4.0);
  TensorD w = randn(rng, {4, 6, 1, 1});
  CHECK(conv1x1(x, w).all_finite());
  CHECK(softmax_spatial(x).all_finite());
  CHECK(bilinear_resize(x, 13, 3).all_finite());
  CHECK(global_avg(x).all_finite());
}
