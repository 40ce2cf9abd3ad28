#include <catch2/catch_amalgamated.hpp>

#include "y12/gradcheck.hpp"
#include "y12/layers.hpp"

using namespace y12;

TEST_CASE("backward of sum gives all-ones", "[autograd]") {
  Tensor<double> x({2, 3}, 0.75, true);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  Tensor<double> y = sum(x);
  y.backward();
  REQUIRE(x.grad() != nullptr);
  for (double g : *x.grad()) REQUIRE(g == 1.0);
}

TEST_CASE("backward of sum(x*x) at [1,2,3] gives [2,4,6]", "[autograd]") {
  Tensor<double> x({3}, std::vector<double>{1, 2, 3}, true);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  Tensor<double> y = sum(mul(x, x));
  y.backward();
  const auto& g = *x.grad();
  REQUIRE(g[0] == Catch::Approx(2.0));
  REQUIRE(g[1] == Catch::Approx(4.0));
  REQUIRE(g[2] == Catch::Approx(6.0));
}

TEST_CASE("tape misuse is reported", "[autograd][errors]") {
  Tensor<double> x({2}, 1.0, true);
  REQUIRE_THROWS_AS(x.backward(), UsageError);  // not on any tape

  Tape<double> tape;
  Tensor<double> y;
  {
    Tape<double>::Scope scope(tape);
    y = sum(silu(x));
  }
  y.backward();
  REQUIRE_THROWS_AS(y.backward(), UsageError);  // tape consumed

  // Non-scalar backward needs a seed.
  Tensor<double> x2({3}, 1.0, true);
  Tape<double> tape2;
  Tensor<double> y2;
  {
    Tape<double>::Scope scope(tape2);
    y2 = silu(x2);
  }
  REQUIRE_THROWS_AS(y2.backward(), UsageError);
  y2.backward(Tensor<double>({3}, 1.0));
  REQUIRE(x2.grad() != nullptr);
}

TEST_CASE("mixing tapes in one op is an error", "[autograd][errors]") {
  Tensor<double> a({2}, 1.0, true);
  Tensor<double> b({2}, 2.0, true);
  Tape<double> t1, t2;
  Tensor<double> ra;
  {
    Tape<double>::Scope s1(t1);
    ra = silu(a);
  }
  Tape<double>::Scope s2(t2);
  REQUIRE_THROWS_AS(add(ra, b), UsageError);
}

TEST_CASE("silu gradient at zero is one half", "[autograd][silu]") {
  Tensor<double> x({1}, 0.0, true);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  sum(silu(x)).backward();
  REQUIRE((*x.grad())[0] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("gradcheck is tiny for a linear map", "[autograd][gradcheck]") {
  SplitMix64 rng(5);
  Tensor<double> x = rand_uniform<double>({6}, rng);
  const double err = gradcheck(
      [](const std::vector<Tensor<double>>& in) { return mul_scalar(in[0], 3.5); }, {x});
  REQUIRE(err < 1e-10);
}

TEST_CASE("gradcheck covers every elementwise and structural op", "[autograd][gradcheck]") {
  SplitMix64 rng(12);
  Tensor<double> a = rand_uniform<double>({2, 3, 4, 4}, rng, 0.2, 1.2);
  Tensor<double> b = rand_uniform<double>({2, 3, 4, 4}, rng, 0.3, 1.4);

  const GradCheckOptions opt;
  auto check2 = [&](auto fn) {
    return gradcheck([&](const std::vector<Tensor<double>>& in) { return fn(in[0], in[1]); },
                     {a, b}, opt);
  };
  REQUIRE(check2([](auto& x, auto& y) { return add(x, y); }) < 1e-7);
  REQUIRE(check2([](auto& x, auto& y) { return sub(x, y); }) < 1e-7);
  REQUIRE(check2([](auto& x, auto& y) { return mul(x, y); }) < 1e-7);
  REQUIRE(check2([](auto& x, auto& y) { return div(x, y); }) < 1e-7);
  REQUIRE(check2([](auto& x, auto& y) { return minimum(x, y); }) < 1e-7);
  REQUIRE(check2([](auto& x, auto& y) { return maximum(x, y); }) < 1e-7);

  auto check1 = [&](auto fn) {
    return gradcheck([&](const std::vector<Tensor<double>>& in) { return fn(in[0]); }, {a},
                     opt);
  };
  REQUIRE(check1([](auto& x) { return silu(x); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return sigmoid(x); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return relu(add_scalar(x, -0.7)); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return clamp_min(x, 0.5); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return add_scalar(x, 2.0); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return mul_scalar(x, -1.3); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return mean(x); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return softmax(x, 1); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return reshape(x, Shape{6, 16}); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return permute(x, {3, 1, 0, 2}); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return upsample_nearest(x, 2); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return slice(x, 1, 1, 2); }) < 1e-7);
  REQUIRE(check1([](auto& x) { return concat<double>({x, x}, 2); }) < 1e-7);

  Tensor<double> targets = rand_uniform<double>({2, 3, 4, 4}, rng, 0.0, 1.0);
  REQUIRE(gradcheck(
              [&](const std::vector<Tensor<double>>& in) {
                return bce_with_logits(in[0], targets);
              },
              {a}, opt) < 1e-7);
}

TEST_CASE("gradcheck: matmul and conv2d including weights and bias", "[autograd][gradcheck]") {
  SplitMix64 rng(13);
  Tensor<double> a = rand_uniform<double>({2, 3, 4}, rng);
  Tensor<double> b = rand_uniform<double>({2, 4, 5}, rng);
  REQUIRE(gradcheck([](const std::vector<Tensor<double>>& in) { return matmul(in[0], in[1]); },
                    {a, b}) < 1e-8);

  Tensor<double> x = rand_uniform<double>({2, 4, 5, 5}, rng);
  Tensor<double> w = rand_uniform<double>({6, 2, 3, 3}, rng);
  Tensor<double> bias = rand_uniform<double>({6}, rng);
  REQUIRE(gradcheck(
              [](const std::vector<Tensor<double>>& in) {
                return conv2d(in[0], in[1], 2, 1, 2, &in[2]);
              },
              {x, w, bias}) < 1e-7);
}

TEST_CASE("gradcheck: batch_norm in both modes", "[autograd][gradcheck][bn]") {
  SplitMix64 rng(14);
  Tensor<double> x = rand_uniform<double>({3, 2, 3, 3}, rng);
  Tensor<double> gamma = rand_uniform<double>({2}, rng, 0.5, 1.5);
  Tensor<double> beta = rand_uniform<double>({2}, rng);
  Tensor<double> mean = rand_uniform<double>({2}, rng);
  Tensor<double> var = rand_uniform<double>({2}, rng, 0.5, 1.5);
  for (bool training : {false, true}) {
    const double err = gradcheck(
        [&](const std::vector<Tensor<double>>& in) {
          return batch_norm(in[0], in[1], in[2], mean, var, 1e-5, training);
        },
        {x, gamma, beta});
    REQUIRE(err < 1e-6);
  }
}

TEST_CASE("gradcheck: silu network of depth 3", "[autograd][gradcheck]") {
  SplitMix64 rng(15);
  Tensor<double> x = rand_uniform<double>({1, 2, 6, 6}, rng);
  SplitMix64 wrng(16);
  Conv2dLayer<double> c1(2, 3, 3, 1, 1, 1, true, wrng);
  Conv2dLayer<double> c2(3, 3, 3, 1, 1, 1, true, wrng);
  Conv2dLayer<double> c3(3, 2, 1, 1, 0, 1, true, wrng);
  const double err = gradcheck(
      [&](const std::vector<Tensor<double>>& in) {
        return silu(c3.forward(silu(c2.forward(silu(c1.forward(in[0]))))));
      },
      {x});
  REQUIRE(err < 1e-7);
}

TEST_CASE("gradients accumulate across two backward passes", "[autograd]") {
  Tensor<double> x({2}, std::vector<double>{1, 2}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    sum(mul(x, x)).backward();
  }
  REQUIRE((*x.grad())[0] == Catch::Approx(4.0));
  REQUIRE((*x.grad())[1] == Catch::Approx(8.0));
  x.zero_grad();
  REQUIRE((*x.grad())[0] == 0.0);
}

TEST_CASE("same leaf used twice funnels both contributions", "[autograd]") {
  Tensor<double> x({2}, std::vector<double>{3, 4}, true);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  Tensor<double> y = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  y.backward();
  REQUIRE((*x.grad())[0] == Catch::Approx(7.0));
  REQUIRE((*x.grad())[1] == Catch::Approx(9.0));
}
