#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sdda/autodiff.hpp"

using namespace sdda;
using doctest::Approx;

TEST_CASE("matmul with the identity") {
  Graph<double> g;
  auto a = g.input("A");
  auto b = g.input("B");
  auto out = ops::matmul(a, b);
  const auto& v = g.forward(out, {{"A", Tensor<double>::from({2, 2}, {1, 0, 0, 1})},
                                  {"B", Tensor<double>::from({2, 2}, {1, 2, 3, 4})}});
  CHECK(v == Tensor<double>::from({2, 2}, {1, 2, 3, 4}));
}

TEST_CASE("softmax of equal logits is uniform") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({1, 3}, 0.0));
  const auto& v = g.forward(ops::softmax(x));
  for (double p : v.data()) CHECK(p == Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("mean of squares") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>::from({3}, {1, 2, 3}));
  CHECK(g.forward(ops::mean(ops::square(x))).item() == Approx(14.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("gradient of a sum is all ones") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>({2, 3, 2}, 0.7));
  g.forward(ops::sum(x));
  auto grads = g.backward();
  for (double v : grads.at("x").data()) CHECK(v == 1.0);
}

TEST_CASE("gradient of dot(x, x) is 2x") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>::from({2}, {1, -2}));
  g.forward(ops::dot(x, x));
  auto grads = g.backward();
  CHECK(grads.at("x") == Tensor<double>::from({2}, {2, -4}));
}

TEST_CASE("leaves off the root path get exactly zero gradient") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>::from({2}, {1, 2}));
  auto unused = g.parameter("unused", Tensor<double>::from({3}, {4, 5, 6}));
  auto side = ops::exp(unused);
  (void)side;
  g.forward(ops::sum(ops::square(x)));
  auto grads = g.backward();
  for (double v : grads.at("unused").data()) CHECK(v == 0.0);
}

TEST_CASE("backward preconditions") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(g.backward(), GraphError);
  g.forward(ops::square(x));
  CHECK_THROWS_AS(g.backward(), GraphError);  // non-scalar root
}

TEST_CASE("shape errors name the node and both shapes") {
  Graph<double> g;
  auto a = g.input("a");
  auto b = g.input("b");
  auto out = ops::matmul(a, b);
  try {
    g.forward(out, {{"a", Tensor<double>({2, 3})}, {"b", Tensor<double>({2, 3})}});
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("unbound inputs and unknown bindings are errors") {
  Graph<double> g;
  auto a = g.input("a");
  CHECK_THROWS_AS(g.forward(ops::sum(a)), GraphError);
  CHECK_THROWS_AS(g.forward(ops::sum(a), {{"a", Tensor<double>({1})}, {"zz", Tensor<double>({1})}}), GraphError);
  CHECK_THROWS_AS(g.input("a"), GraphError);
}

TEST_CASE("parameter bindings override the default and must keep its shape") {
  Graph<double> g;
  auto w = g.parameter("w", Tensor<double>({2}, 1.0));
  auto root = ops::sum(w);
  CHECK(g.forward(root).item() == 2.0);
  CHECK(g.forward(root, {{"w", Tensor<double>({2}, 3.0)}}).item() == 6.0);
  CHECK_THROWS_AS(g.forward(root, {{"w", Tensor<double>({3}, 1.0)}}), ShapeError);
}

TEST_CASE("broadcasting binary ops reduce gradients onto the smaller operand") {
  Graph<double> g;
  auto a = g.parameter("a", Tensor<double>({3, 4}, 1.0));
  auto b = g.parameter("b", Tensor<double>({1, 4}, 2.0));
  g.forward(ops::sum(ops::mul(a, b)));
  auto grads = g.backward();
  CHECK(grads.at("b").shape() == Shape{1, 4});
  for (double v : grads.at("b").data()) CHECK(v == 3.0);
  for (double v : grads.at("a").data()) CHECK(v == 2.0);
}

TEST_CASE("dropout is seeded, inverted, and the identity in eval mode") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>({1000}, 1.0));
  auto a = ops::dropout(x, 0.25, 7, Mode::Train);
  auto b = ops::dropout(x, 0.25, 7, Mode::Train);
  auto e = ops::dropout(x, 0.25, 7, Mode::Eval);
  const auto va = g.forward(a);
  CHECK(g.forward(b) == va);
  std::size_t kept = 0;
  for (double v : va.data()) {
    CHECK((v == 0.0 || v == Approx(1.0 / 0.75)));
    kept += v != 0.0;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  CHECK(g.forward(e) == Tensor<double>({1000}, 1.0));
  CHECK_THROWS_AS(ops::dropout(x, 1.0, 7, Mode::Train), GraphError);
}

TEST_CASE("batch norm: train mode normalizes, eval mode uses running statistics") {
  Graph<double> g;
  auto x = g.input("x");
  auto gamma = g.parameter("gamma", Tensor<double>({2}, 1.0));
  auto beta = g.parameter("beta", Tensor<double>({2}, 0.0));
  BatchNormStats<double> stats{Tensor<double>({2}, 0.0), Tensor<double>({2}, 1.0)};
  auto train = ops::batch_norm(x, gamma, beta, &stats, Mode::Train);
  const auto input = Tensor<double>::from({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  const auto& y = g.forward(train, {{"x", input}});
  double m0 = 0, m1 = 0;
  for (int i = 0; i < 4; ++i) {
    m0 += y(i, 0);
    m1 += y(i, 1);
  }
  CHECK(m0 == Approx(0.0).scale(1.0));
  CHECK(m1 == Approx(0.0).scale(1.0));
  // momentum 0.1 update toward batch mean (2.5, 25) and unbiased variance
  CHECK(stats.running_mean[0] == Approx(0.25));
  CHECK(stats.running_mean[1] == Approx(2.5));
  CHECK(stats.running_var[0] == Approx(0.9 + 0.1 * (5.0 / 3.0)));

  Graph<double> h;
  auto xe = h.input("x");
  auto ge = h.parameter("gamma", Tensor<double>({2}, 2.0));
  auto be = h.parameter("beta", Tensor<double>({2}, 1.0));
  BatchNormStats<double> fixed{Tensor<double>::from({2}, {1, 0}), Tensor<double>::from({2}, {4, 1})};
  const auto& ye = h.forward(ops::batch_norm(xe, ge, be, &fixed, Mode::Eval), {{"x", input}});
  CHECK(ye(0, 0) == Approx(1.0));                                     // 2 * (1-1)/2 + 1
  CHECK(ye(1, 0) == Approx(2.0 * (2.0 - 1.0) / std::sqrt(4.0 + 1e-5) + 1.0));
  CHECK(fixed.running_mean[0] == 1.0);  // eval leaves statistics alone
}

TEST_CASE("same-padded convolution keeps the spatial extent") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>({2, 1, 3, 9}, 1.0));
  auto w = g.parameter("w", Tensor<double>({4, 1, 1, 4}, 0.5));
  CHECK(g.forward(ops::conv2d(x, w, Padding::Same)).shape() == Shape{2, 4, 3, 9});
  CHECK(g.forward(ops::conv2d(x, w, Padding::Valid)).shape() == Shape{2, 4, 3, 6});
}

TEST_CASE("average pooling drops the trailing remainder") {
  Graph<double> g;
  auto x = g.parameter("x", Tensor<double>::from({1, 1, 1, 5}, {1, 3, 5, 7, 100}));
  const auto& y = g.forward(ops::avg_pool2d(x, 1, 2));
  CHECK(y == Tensor<double>::from({1, 1, 1, 2}, {2, 6}));
}

TEST_CASE("float and double graphs agree on a small network fragment") {
  auto run = [](auto zero) {
    using T = decltype(zero);
    Graph<T> g;
    auto x = g.parameter("x", Tensor<double>::from({1, 1, 2, 4}, {0.1, -0.3, 0.5, 0.2, -0.7, 0.4, 0.9, -0.1}).cast<T>());
    auto w = g.parameter("w", Tensor<double>::from({2, 1, 2, 1}, {0.3, -0.2, 0.6, 0.1}).cast<T>());
    return static_cast<double>(g.forward(ops::mean(ops::elu(ops::conv2d(x, w, Padding::Valid)))).item());
  };
  CHECK(run(0.0f) == Approx(run(0.0)).epsilon(1e-6));
}
