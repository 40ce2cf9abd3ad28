#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "y12/ops.hpp"

using namespace y12;

namespace {

Tensor<double> random_tensor(Shape shape, SplitMix64& rng, double lo = -1, double hi = 1) {
  return rand_uniform<double>(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("tensor shape bookkeeping", "[tensor]") {
  Tensor<double> t({2, 3, 4}, 0.5);
  REQUIRE(t.numel() == 24);
  REQUIRE(t.dim(1) == 3);
  REQUIRE(t.at(1, 2, 3) == 0.5);
  REQUIRE_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
  REQUIRE_THROWS_AS(t.at(2, 0, 0), ShapeError);
  REQUIRE_THROWS_AS(t.item(), UsageError);
}

TEST_CASE("conv2d identity over channels with 1x1 kernel", "[tensor][conv]") {
  SplitMix64 rng(1);
  const std::size_t c = 4;
  Tensor<double> x = random_tensor({2, c, 5, 5}, rng);
  Tensor<double> w({c, c, 1, 1}, 0.0);
  for (std::size_t i = 0; i < c; ++i) w.values_mut()[i * c + i] = 1.0;
  Tensor<double> y = conv2d(x, w, 1, 0, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y[i] == x[i]);
}

TEST_CASE("conv2d downsampling shape: 640 -> 320 with k3 s2 p1", "[tensor][conv]") {
  Tensor<double> x({1, 1, 640, 640}, 1.0);
  Tensor<double> w({1, 1, 3, 3}, 0.1);
  Tensor<double> y = conv2d(x, w, 2, 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 320, 320});
}

TEST_CASE("conv2d matches the direct loop oracle", "[tensor][conv][oracle]") {
  SplitMix64 rng(7);
  Tensor<double> x = random_tensor({1, 2, 5, 5}, rng);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      Tensor<double> got = conv2d(x, w, stride, pad, 1, &b);
      Tensor<double> want = oracle::conv2d_loops(x, w, stride, pad, 1, &b);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.numel(); ++i)
        REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-12));
    }
}

TEST_CASE("conv2d loop-oracle fuzz incl. groups, dims <= 6", "[tensor][conv][oracle]") {
  SplitMix64 rng(99);
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t g = 1 + rng.below(3);
    const std::size_t cin = g * (1 + rng.below(2));
    const std::size_t cout = g * (1 + rng.below(2));
    const std::size_t k = 1 + rng.below(3);
    const std::size_t h = k + rng.below(4);
    const std::size_t w = k + rng.below(4);
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    Tensor<double> x = random_tensor({1 + rng.below(2), cin, h, w}, rng);
    Tensor<double> wt = random_tensor({cout, cin / g, k, k}, rng);
    Tensor<double> got = conv2d(x, wt, stride, pad, static_cast<int>(g));
    Tensor<double> want = oracle::conv2d_loops(x, wt, stride, pad, static_cast<int>(g));
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i)
      REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-12));
  }
}

TEST_CASE("conv2d structured errors", "[tensor][conv][errors]") {
  SplitMix64 rng(3);
  Tensor<double> x = random_tensor({1, 4, 6, 6}, rng);
  Tensor<double> w = random_tensor({4, 4, 3, 3}, rng);
  REQUIRE_THROWS_AS(conv2d(x, w, 1, 0, 3), ConfigError);  // 4 % 3 != 0
  Tensor<double> wbad = random_tensor({4, 2, 3, 3}, rng);
  REQUIRE_THROWS_AS(conv2d(x, wbad, 1, 0, 1), ShapeError);
  REQUIRE_THROWS_AS(conv2d(x, w, 0, 0, 1), ConfigError);
  Tensor<double> tiny = random_tensor({1, 4, 2, 2}, rng);
  REQUIRE_THROWS_AS(conv2d(tiny, w, 1, 0, 1), ShapeError);
}

TEST_CASE("output shapes are pure functions of input shapes: fuzz", "[tensor][shapes]") {
  SplitMix64 rng(2024);
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t k = 1 + rng.below(4);
    const std::size_t h = k + rng.below(6);
    const std::size_t w = k + rng.below(6);
    const std::size_t cin = 1 + rng.below(4);
    const std::size_t cout = 1 + rng.below(4);
    const int stride = 1 + static_cast<int>(rng.below(3));
    const int pad = static_cast<int>(rng.below(3));
    Tensor<double> x({1, cin, h, w}, 0.25);
    Tensor<double> wt({cout, cin, k, k}, 0.5);
    Tensor<double> y = conv2d(x, wt, stride, pad, 1);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (w + 2 * pad - k) / stride + 1;
    REQUIRE(y.shape() == Shape{1, cout, ho, wo});

    const int f = 1 + static_cast<int>(rng.below(3));
    Tensor<double> up = upsample_nearest(x, f);
    REQUIRE(up.shape() == Shape{1, cin, h * static_cast<std::size_t>(f),
                                w * static_cast<std::size_t>(f)});

    Tensor<double> c2 = concat<double>({x, x}, 1);
    REQUIRE(c2.shape() == Shape{1, 2 * cin, h, w});
  }
}

TEST_CASE("batch_norm identity and constant-channel cases", "[tensor][bn]") {
  SplitMix64 rng(5);
  const std::size_t c = 3;
  Tensor<double> x = random_tensor({2, c, 4, 4}, rng);
  Tensor<double> gamma({c}, 1.0), beta({c}, 0.0), mean({c}, 0.0), var({c}, 1.0);

  Tensor<double> y = batch_norm(x, gamma, beta, mean, var, 1e-12, false);
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(y[i] == Catch::Approx(x[i]).margin(1e-9));

  // Constant channel in training mode: zero variance, output settles at beta.
  Tensor<double> xc({1, 1, 3, 3}, 7.5);
  Tensor<double> g1({1}, 2.0), b1({1}, -0.25), m1({1}, 0.0), v1({1}, 1.0);
  Tensor<double> yc = batch_norm(xc, g1, b1, m1, v1, 1e-3, true);
  for (std::size_t i = 0; i < yc.numel(); ++i)
    REQUIRE(yc[i] == Catch::Approx(-0.25).margin(1e-12));
}

TEST_CASE("batch_norm inference matches the elementwise oracle", "[tensor][bn][oracle]") {
  SplitMix64 rng(11);
  const std::size_t c = 5;
  Tensor<double> x = random_tensor({2, c, 3, 4}, rng);
  Tensor<double> gamma = random_tensor({c}, rng, 0.5, 1.5);
  Tensor<double> beta = random_tensor({c}, rng);
  Tensor<double> mean = random_tensor({c}, rng);
  Tensor<double> var = random_tensor({c}, rng, 0.2, 2.0);
  Tensor<double> got = batch_norm(x, gamma, beta, mean, var, 1e-3, false);
  Tensor<double> want = oracle::batch_norm_eval(x, gamma, beta, mean, var, 1e-3);
  for (std::size_t i = 0; i < got.numel(); ++i)
    REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("batch_norm rejects bad inputs", "[tensor][bn][errors]") {
  Tensor<double> x({1, 2, 2, 2}, 1.0);
  Tensor<double> p2({2}, 1.0);
  Tensor<double> p3({3}, 1.0);
  Tensor<double> negvar({2}, -0.5);
  REQUIRE_THROWS_AS(batch_norm(x, p3, p2, p2, p2, 1e-3, false), ShapeError);
  REQUIRE_THROWS_AS(batch_norm(x, p2, p2, p2, p2, 0.0, false), ConfigError);
  REQUIRE_THROWS_AS(batch_norm(x, p2, p2, p2, negvar, 1e-3, false), DataError);
}

TEST_CASE("silu closed-form values", "[tensor][silu]") {
  Tensor<double> x({3}, std::vector<double>{0.0, 1.0, -1.0});
  Tensor<double> y = silu(x);
  REQUIRE(y[0] == 0.0);
  REQUIRE(y[1] == Catch::Approx(0.7310585786300049).epsilon(1e-12));
  REQUIRE(y[2] == Catch::Approx(-0.2689414213699951).epsilon(1e-12));
  // Large inputs stay finite (stable sigmoid).
  Tensor<double> big({2}, std::vector<double>{1000.0, -1000.0});
  Tensor<double> yb = silu(big);
  REQUIRE(std::isfinite(yb[0]));
  REQUIRE(std::isfinite(yb[1]));
}

TEST_CASE("upsample_nearest replication and conservation", "[tensor][upsample]") {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> y1 = upsample_nearest(x, 1);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(y1[i] == x[i]);

  Tensor<double> y = upsample_nearest(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  REQUIRE(y.at(0, 0, 0, 0) == 1.0);
  REQUIRE(y.at(0, 0, 0, 1) == 1.0);
  REQUIRE(y.at(0, 0, 1, 1) == 1.0);
  REQUIRE(y.at(0, 0, 0, 2) == 2.0);
  REQUIRE(y.at(0, 0, 3, 3) == 4.0);

  SplitMix64 rng(8);
  Tensor<double> r = random_tensor({2, 3, 4, 5}, rng);
  for (int f : {2, 3}) {
    Tensor<double> u = upsample_nearest(r, f);
    double s_in = 0, s_out = 0;
    for (double v : r.values()) s_in += v;
    for (double v : u.values()) s_out += v;
    REQUIRE(s_out == Catch::Approx(f * f * s_in).epsilon(1e-10));
  }
  REQUIRE_THROWS_AS(upsample_nearest(x, 0), ConfigError);
}

TEST_CASE("concat preserves values and round-trips through slice", "[tensor][concat]") {
  SplitMix64 rng(21);
  Tensor<double> a = random_tensor({1, 2, 3, 4}, rng);
  Tensor<double> b = random_tensor({1, 5, 3, 4}, rng);

  Tensor<double> single = concat<double>({a}, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(single[i] == a[i]);

  Tensor<double> c = concat<double>({a, b}, 1);
  REQUIRE(c.shape() == Shape{1, 7, 3, 4});
  Tensor<double> a2 = slice(c, 1, 0, 2);
  Tensor<double> b2 = slice(c, 1, 2, 5);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a2[i] == a[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE(b2[i] == b[i]);

  Tensor<double> bad({1, 2, 3, 5}, 0.0);
  REQUIRE_THROWS_WITH(concat<double>({a, bad}, 1), Catch::Matchers::ContainsSubstring("axis 3"));
}

TEST_CASE("channel concat of two C=128 maps gives C=256", "[tensor][concat]") {
  Tensor<double> a({1, 128, 2, 2}, 1.0);
  Tensor<double> b({1, 128, 2, 2}, 2.0);
  REQUIRE(concat<double>({a, b}, 1).dim(1) == 256);
}

TEST_CASE("matmul identity and mismatch errors", "[tensor][matmul]") {
  SplitMix64 rng(31);
  Tensor<double> a = random_tensor({3, 3}, rng);
  Tensor<double> eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye.values_mut()[i * 3 + i] = 1.0;
  Tensor<double> y = matmul(a, eye);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(y[i] == Catch::Approx(a[i]));

  Tensor<double> b = random_tensor({4, 2}, rng);
  REQUIRE_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax: uniform, shift invariance, overflow safety", "[tensor][softmax]") {
  Tensor<double> c({1, 5}, 3.25);
  Tensor<double> u = softmax(c, 1);
  for (std::size_t i = 0; i < 5; ++i) REQUIRE(u[i] == Catch::Approx(0.2).epsilon(1e-12));

  Tensor<double> big({2}, std::vector<double>{1000.0, 1001.0});
  Tensor<double> sb = softmax(big, 0);
  REQUIRE(std::isfinite(sb[0]));
  REQUIRE(sb[0] == Catch::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-9));
  REQUIRE(sb[1] == Catch::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-9));

  SplitMix64 rng(17);
  for (int iter = 0; iter < 50; ++iter) {
    Tensor<double> x = random_tensor({4, 7}, rng, -5, 5);
    Tensor<double> s1 = softmax(x, 1);
    double rowsum = 0;
    for (std::size_t j = 0; j < 7; ++j) rowsum += s1.at(0, j);
    REQUIRE(rowsum == Catch::Approx(1.0).margin(1e-6));
    Tensor<double> shifted = add_scalar(x, 123.456);
    Tensor<double> s2 = softmax(shifted, 1);
    for (std::size_t i = 0; i < s1.numel(); ++i)
      REQUIRE(s2[i] == Catch::Approx(s1[i]).margin(1e-6));
  }
}

TEST_CASE("reshape shares storage and validates element count", "[tensor][reshape]") {
  Tensor<double> x({2, 6}, 1.5);
  Tensor<double> y = reshape(x, {3, 4});
  REQUIRE(y.storage().get() == x.storage().get());
  REQUIRE_THROWS_AS(reshape(x, {5, 2}), ShapeError);
}

TEST_CASE("permute and transpose", "[tensor][permute]") {
  SplitMix64 rng(41);
  Tensor<double> x = random_tensor({2, 3, 4}, rng);
  Tensor<double> p = permute(x, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) REQUIRE(p.at(k, i, j) == x.at(i, j, k));
  Tensor<double> t = transpose_last2(x);
  REQUIRE(t.shape() == Shape{2, 4, 3});
  REQUIRE(t.at(1, 2, 0) == x.at(1, 0, 2));
}

TEST_CASE("deterministic kernels: identical runs produce identical bits", "[tensor][determinism]") {
  SplitMix64 rng1(123), rng2(123);
  Tensor<double> x1 = random_tensor({2, 3, 8, 8}, rng1);
  Tensor<double> x2 = random_tensor({2, 3, 8, 8}, rng2);
  Tensor<double> w1 = random_tensor({4, 3, 3, 3}, rng1);
  Tensor<double> w2 = random_tensor({4, 3, 3, 3}, rng2);
  Tensor<double> y1 = conv2d(x1, w1, 1, 1, 1);
  Tensor<double> y2 = conv2d(x2, w2, 1, 1, 1);
  REQUIRE(y1.values() == y2.values());
  Tensor<double> s1 = softmax(x1, 3), s2 = softmax(x2, 3);
  REQUIRE(s1.values() == s2.values());
}

TEST_CASE("non-finite op outputs raise NumericError", "[tensor][errors]") {
  Tensor<double> a({2}, std::vector<double>{1.0, 1.0});
  Tensor<double> z({2}, std::vector<double>{0.0, 1.0});
  REQUIRE_THROWS_AS(div(a, z), NumericError);
}
