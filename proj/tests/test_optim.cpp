#include "support.hpp"

#include "pumfa/optim.hpp"

#include <doctest.h>

#include <cmath>

using namespace pumfa;

TEST_CASE("zero gradient on a fresh state leaves parameters unchanged") {
  std::vector<Tensor> params{Tensor::from({3}, {1.5, -2, 0.25}, true)};
  AdamState state(params, {.lr = 0.1});
  params[0].grad_buffer();  // allocated, all zeros
  adam_step(params, state);
  CHECK(params[0].at(0) == 1.5);
  CHECK(params[0].at(1) == -2.0);
  CHECK(params[0].at(2) == 0.25);
  CHECK(state.step == 1);
}

TEST_CASE("first step moves by lr in the gradient's direction") {
  std::vector<Tensor> params{Tensor::from({2}, {1, 1}, true)};
  AdamState state(params, {.lr = 0.1});
  auto g = params[0].grad_buffer();
  g[0] = 1.0;
  g[1] = -1.0;
  adam_step(params, state);
  // m̂ = g, v̂ = g², so the update is lr·g/(|g| + ε).
  CHECK(params[0].at(0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(params[0].at(1) == doctest::Approx(1.0 + 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("two identical steps follow the moment recurrences") {
  std::vector<Tensor> params{Tensor::from({1}, {0.0}, true)};
  AdamState state(params, {.lr = 0.01});
  const double g = 0.5;
  params[0].grad_buffer()[0] = g;
  adam_step(params, state);
  adam_step(params, state);  // gradient still accumulated from before: same value
  CHECK(state.step == 2);
  const double m1 = 0.1 * g, v1 = 0.001 * g * g;
  const double m2 = 0.9 * m1 + 0.1 * g, v2 = 0.999 * v1 + 0.001 * g * g;
  CHECK(state.m[0][0] == doctest::Approx(m2).epsilon(1e-14));
  CHECK(state.v[0][0] == doctest::Approx(v2).epsilon(1e-14));
  const double step1 = 0.01 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + 1e-8);
  const double step2 = 0.01 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(params[0].at(0) == doctest::Approx(-step1 - step2).epsilon(1e-12));
}

TEST_CASE("parameters without gradient buffers count as zero gradient") {
  std::vector<Tensor> params{Tensor::from({2}, {3, 4}, true)};
  AdamState state(params, {});
  adam_step(params, state);
  CHECK(params[0].at(0) == 3.0);
  CHECK(params[0].at(1) == 4.0);
}

TEST_CASE("mismatched state is rejected") {
  std::vector<Tensor> params{Tensor::zeros({2}, true)};
  AdamState state(params, {});
  std::vector<Tensor> other{Tensor::zeros({3}, true)};
  CHECK_THROWS_AS(adam_step(other, state), DimensionError);
  std::vector<Tensor> more{Tensor::zeros({2}, true), Tensor::zeros({2}, true)};
  CHECK_THROWS_AS(adam_step(more, state), DimensionError);
}

TEST_CASE("adam minimises a quadratic") {
  std::vector<Tensor> params{Tensor::from({2}, {3, -2}, true)};
  AdamState state(params, {.lr = 0.05});
  const Tensor target = Tensor::from({2}, {0.5, 1.0});
  for (int i = 0; i < 2000; ++i) {
    zero_grads(params);
    const Tensor d = sub(params[0], target);
    sum(mul(d, d)).backward();
    adam_step(params, state);
  }
  CHECK(params[0].at(0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(params[0].at(1) == doctest::Approx(1.0).epsilon(1e-3));
}
