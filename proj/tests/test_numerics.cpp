#include <cmath>
#include <random>

#include "doctest.h"
#include "dcvh/error.hpp"
#include "dcvh/ops.hpp"
#include "dcvh/optim.hpp"
#include "test_support.hpp"

using namespace dcvh;
using dcvh::testing::weighted_sum;

namespace {

constexpr double kEps = 1e-5;

// Gradient check of y = op(params...) under the loss sum(r ⊙ y).
template <class Fn>
double check_op(ParamSet& params, Fn&& forward_backward) {
  return grad_check(forward_backward, params, kEps).max_rel_error;
}

double linear_grad_error(std::uint64_t seed, std::size_t b, std::size_t n, std::size_t m) {
  std::mt19937_64 rng(seed);
  ParamSet ps;
  const auto ix = ps.add("x", Tensor::uniform({b, n}, -1, 1, rng));
  const auto iw = ps.add("w", Tensor::uniform({n, m}, -1, 1, rng));
  const Tensor r = Tensor::uniform({b, m}, -1, 1, rng);
  return check_op(ps, [&](ParamSet& p) {
    auto y = linear(p.value(ix), p.value(iw));
    auto g = y.backward(r);
    p.accumulate(ix, g.input);
    p.accumulate(iw, g.weights);
    return weighted_sum(y.value, r);
  });
}

double conv_grad_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(1, 4);
  const std::size_t width = pick(rng) + 1, stride = pick(rng), count = pick(rng);
  const std::size_t length = width + stride * pick(rng) + pick(rng) - 1;
  ParamSet ps;
  const auto ix = ps.add("x", Tensor::uniform({3, length}, -1, 1, rng));
  const auto ik = ps.add("k", Tensor::uniform({count, width}, -1, 1, rng));
  const Tensor r = Tensor::uniform({3, count, conv1d_positions(length, width, stride)}, -1, 1, rng);
  return check_op(ps, [&](ParamSet& p) {
    auto y = conv1d(p.value(ix), p.value(ik), stride);
    auto g = y.backward(r);
    p.accumulate(ix, g.input);
    p.accumulate(ik, g.kernels);
    return weighted_sum(y.value, r);
  });
}

double batchnorm_grad_error(std::uint64_t seed, Mode mode) {
  std::mt19937_64 rng(seed);
  ParamSet ps;
  const auto ix = ps.add("x", Tensor::uniform({8, 4}, -2, 2, rng));
  const auto ig = ps.add("gamma", Tensor::uniform({4}, 0.5, 1.5, rng));
  const auto ib = ps.add("beta", Tensor::uniform({4}, -1, 1, rng));
  const Tensor r = Tensor::uniform({8, 4}, -1, 1, rng);
  BatchNormState state(4);
  state.running_mean = Tensor::uniform({4}, -0.5, 0.5, rng);
  state.running_var = Tensor::uniform({4}, 0.5, 2.0, rng);
  const BatchNormState frozen = state;
  return check_op(ps, [&](ParamSet& p) {
    state = frozen;
    auto y = batchnorm(p.value(ix), p.value(ig), p.value(ib), mode, state);
    auto g = y.backward(r);
    p.accumulate(ix, g.input);
    p.accumulate(ig, g.gamma);
    p.accumulate(ib, g.beta);
    return weighted_sum(y.value, r);
  });
}

double activation_grad_error(std::uint64_t seed, Activation kind) {
  std::mt19937_64 rng(seed);
  ParamSet ps;
  const auto ix = ps.add("x", Tensor::uniform({5, 6}, -3, 3, rng));
  const Tensor r = Tensor::uniform({5, 6}, -1, 1, rng);
  return check_op(ps, [&](ParamSet& p) {
    auto y = activation(p.value(ix), kind);
    p.accumulate(ix, y.backward(r));
    return weighted_sum(y.value, r);
  });
}

}  // namespace

TEST_CASE("linear forward examples") {
  CHECK(linear(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 0}, {0, 1}})).value ==
        Tensor::matrix({{1, 2}}));
  CHECK(linear(Tensor::matrix({{1, 1}}), Tensor::matrix({{2}, {3}})).value ==
        Tensor::matrix({{5}}));
  CHECK_THROWS_AS(linear(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("linear gradients match central differences") {
  CHECK(linear_grad_error(11, 4, 3, 2) <= 1e-6);
}

TEST_CASE("conv1d forward examples") {
  CHECK(conv1d_positions(6000, 300, 300) == 20);
  auto y = conv1d(Tensor::matrix({{1, 2, 3, 4}}), Tensor::matrix({{1, 1}}), 2).value;
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 7.0);
  CHECK_THROWS_AS(conv1d(Tensor({1, 3}), Tensor({1, 4}), 1), DimensionError);
  CHECK_THROWS_AS(conv1d(Tensor({1, 3}), Tensor({1, 2}), 0), DimensionError);
}

TEST_CASE("conv1d gradients match central differences") {
  CHECK(conv_grad_error(5) <= 1e-6);
}

TEST_CASE("conv1d with stride equal to width is a blockwise linear map") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t batch = 3, width = 5, count = 4, blocks = 6;
    const std::size_t length = width * blocks + seed % 3;  // tail shorter than a block is ignored
    Tensor x = Tensor::uniform({batch, length}, -1, 1, rng);
    Tensor k = Tensor::uniform({count, width}, -1, 1, rng);
    Tensor y = conv1d(x, k, width).value;

    Tensor blocked({batch * blocks, width});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < blocks; ++p)
        for (std::size_t j = 0; j < width; ++j) blocked.at(b * blocks + p, j) = x.at(b, p * width + j);
    Tensor kt({width, count});
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t j = 0; j < width; ++j) kt.at(j, c) = k.at(c, j);
    Tensor lin = linear(blocked, kt, false).value;

    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t p = 0; p < blocks; ++p)
          REQUIRE(y[(b * count + c) * blocks + p] == lin.at(b * blocks + p, c));
  }
}

TEST_CASE("batchnorm examples") {
  BatchNormState state(1);
  Tensor gamma = Tensor::vector({3.7});
  auto constant = batchnorm(Tensor::matrix({{2}, {2}, {2}}), gamma, Tensor::vector({0.5}),
                            Mode::kTrain, state);
  for (double v : constant.value.data()) CHECK(v == 0.5);

  BatchNormState s2(1);
  auto pm = batchnorm(Tensor::matrix({{-1}, {1}}), Tensor::vector({1}), Tensor::vector({0}),
                      Mode::kTrain, s2);
  CHECK(pm.value[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  CHECK(pm.value[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  // running statistics: 0.9 * old + 0.1 * batch
  CHECK(s2.running_mean[0] == doctest::Approx(0.0));
  CHECK(s2.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("batchnorm errors") {
  BatchNormState state(2);
  CHECK_THROWS_AS(batchnorm(Tensor({1, 2}), Tensor({2}, 1.0), Tensor({2}), Mode::kTrain, state),
                  DimensionError);
  BatchNormState empty;
  CHECK_THROWS_AS(batchnorm(Tensor({3, 2}), Tensor({2}, 1.0), Tensor({2}), Mode::kInfer, empty),
                  ContractError);
  // infer mode accepts a single row
  CHECK_NOTHROW(batchnorm(Tensor({1, 2}), Tensor({2}, 1.0), Tensor({2}), Mode::kInfer, state));
}

TEST_CASE("batchnorm gradients match central differences") {
  CHECK(batchnorm_grad_error(3, Mode::kTrain) <= 1e-5);
  CHECK(batchnorm_grad_error(4, Mode::kInfer) <= 1e-5);
}

TEST_CASE("batchnorm train output is standardised") {
  // eps = 1e-5 biases the variance by eps / var, so inputs are drawn wide
  // enough that the bias stays under 1e-6.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = Tensor::uniform({16, 5}, -100, 100, rng);
    BatchNormState state(5);
    Tensor y = batchnorm(x, Tensor({5}, 1.0), Tensor({5}, 0.0), Mode::kTrain, state).value;
    for (std::size_t c = 0; c < 5; ++c) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < 16; ++i) mean += y.at(i, c);
      mean /= 16;
      for (std::size_t i = 0; i < 16; ++i) var += (y.at(i, c) - mean) * (y.at(i, c) - mean);
      var /= 16;
      CHECK(std::abs(mean) <= 1e-9);
      CHECK(std::abs(var - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("activation examples") {
  auto relu = activation(Tensor::vector({-2, 3}), Activation::kRelu);
  CHECK(relu.value == Tensor::vector({0, 3}));
  auto th = activation(Tensor::vector({0}), Activation::kTanh);
  CHECK(th.value[0] == 0.0);
  CHECK(th.backward(Tensor::vector({1}))[0] == 1.0);
  CHECK(activation(Tensor::vector({0}), Activation::kSigmoid).value[0] == 0.5);
  CHECK(sigmoid(-800) == 0.0);
  CHECK(sigmoid(800) == 1.0);
}

TEST_CASE("every op passes gradient checks over 20 seeds") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    CAPTURE(seed);
    CHECK(linear_grad_error(seed, 4, 3, 2) <= 1e-5);
    CHECK(conv_grad_error(seed) <= 1e-5);
    CHECK(batchnorm_grad_error(seed, Mode::kTrain) <= 1e-5);
    CHECK(batchnorm_grad_error(seed, Mode::kInfer) <= 1e-5);
    CHECK(activation_grad_error(seed, Activation::kRelu) <= 1e-5);
    CHECK(activation_grad_error(seed, Activation::kTanh) <= 1e-5);
    CHECK(activation_grad_error(seed, Activation::kSigmoid) <= 1e-5);
  }
}

TEST_CASE("learning-rate schedule") {
  LrSchedule s{0.0001, 0.5, 10};
  CHECK(s.rate(25) == doctest::Approx(0.000025).epsilon(1e-12));
  CHECK(s.rate(0) == 0.0001);
  CHECK(s.rate(9) == 0.0001);
  CHECK_THROWS_AS((LrSchedule{0.1, 0.0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((LrSchedule{0.1, 0.5, 0}.validate()), ConfigError);
  CHECK_THROWS_AS((LrSchedule{-1, 0.5, 1}.validate()), ConfigError);
}

TEST_CASE("sgd_step") {
  LrSchedule s{0.1, 1.0, 1000};
  ParamSet ps;
  const auto i = ps.add("p", Tensor::vector({1.0}));
  ps.accumulate(i, Tensor::vector({2.0}));
  sgd_step(ps, s, 0, 1.0);
  CHECK(ps.value(i)[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(ps.grad(i)[0] == 0.0);

  SUBCASE("zero scale leaves parameters untouched") {
    std::mt19937_64 rng(1);
    ParamSet q;
    const auto j = q.add("w", Tensor::uniform({3, 3}, -1, 1, rng));
    const Tensor before = q.value(j);
    q.accumulate(j, Tensor::uniform({3, 3}, -5, 5, rng));
    sgd_step(q, s, 7, 0.0);
    CHECK(q.value(j) == before);
  }

  SUBCASE("non-finite gradient names the parameter") {
    ParamSet q;
    q.add("a", Tensor::vector({1.0}));
    const auto j = q.add("bad", Tensor::vector({1.0}));
    q.grad(j)[0] = std::nan("");
    try {
      sgd_step(q, s, 0, 1.0);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
    CHECK(q.value(0)[0] == 1.0);
  }
}

TEST_CASE("sgd_step is linear in the scale") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor start = Tensor::uniform({4, 3}, -1, 1, rng);
    const Tensor grad = Tensor::uniform({4, 3}, -1, 1, rng);
    const double a = std::uniform_real_distribution<double>(0, 2)(rng);
    const double b = std::uniform_real_distribution<double>(0, 2)(rng);
    LrSchedule sched{0.05, 1.0, 1000};

    ParamSet two;
    two.add("w", start);
    two.accumulate(0, grad);
    sgd_step(two, sched, 3, a);
    two.accumulate(0, grad);
    sgd_step(two, sched, 3, b);

    ParamSet one;
    one.add("w", start);
    one.accumulate(0, grad);
    sgd_step(one, sched, 3, a + b);
    for (std::size_t i = 0; i < start.size(); ++i)
      CHECK(two.value(0)[i] == doctest::Approx(one.value(0)[i]).epsilon(1e-12));
  }
}

TEST_CASE("grad_check on scalar functions") {
  ParamSet sq;
  sq.add("theta", Tensor::vector({3.0}));
  auto r = grad_check([](ParamSet& p) {
    const double t = p.value(0)[0];
    p.grad(0)[0] += 2 * t;
    return t * t;
  }, sq);
  CHECK(r.max_rel_error < 1e-9);

  ParamSet th;
  th.add("theta", Tensor::vector({0.0}));
  auto r2 = grad_check([](ParamSet& p) {
    const double t = p.value(0)[0];
    p.grad(0)[0] += 1 - std::tanh(t) * std::tanh(t);
    return std::tanh(t);
  }, th);
  CHECK(r2.analytic == doctest::Approx(1.0));
  CHECK(r2.max_rel_error < 1e-9);

  SUBCASE("a wrong gradient is reported") {
    ParamSet w;
    w.add("theta", Tensor::vector({1.0}));
    auto bad = grad_check([](ParamSet& p) {
      p.grad(0)[0] += 3.0;
      return p.value(0)[0] * p.value(0)[0];
    }, w);
    CHECK(bad.max_rel_error > 0.1);
    CHECK(bad.worst_param == "theta");
  }
}

TEST_CASE("grad_check on a two-layer perceptron with batchnorm") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamSet ps;
    const auto ix = ps.add("x", Tensor::uniform({6, 5}, -1, 1, rng));
    const auto iw1 = ps.add("w1", Tensor::uniform({5, 4}, -1, 1, rng));
    const auto ig = ps.add("gamma", Tensor::uniform({4}, 0.5, 1.5, rng));
    const auto ib = ps.add("beta", Tensor::uniform({4}, -0.5, 0.5, rng));
    const auto iw2 = ps.add("w2", Tensor::uniform({4, 3}, -1, 1, rng));
    const Tensor r = Tensor::uniform({6, 3}, -1, 1, rng);
    auto err = grad_check([&](ParamSet& p) {
      BatchNormState st(4);
      auto h = linear(p.value(ix), p.value(iw1));
      auto n = batchnorm(h.value, p.value(ig), p.value(ib), Mode::kTrain, st);
      auto a = activation(n.value, Activation::kTanh);
      auto y = linear(a.value, p.value(iw2));
      auto gy = y.backward(r);
      p.accumulate(iw2, gy.weights);
      auto gn = n.backward(a.backward(gy.input));
      p.accumulate(ig, gn.gamma);
      p.accumulate(ib, gn.beta);
      auto gh = h.backward(gn.input);
      p.accumulate(iw1, gh.weights);
      p.accumulate(ix, gh.input);
      return weighted_sum(y.value, r);
    }, ps);
    CHECK(err.max_rel_error <= 1e-5);
  }
}
