#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fxf/error.hpp"
#include "test_util.hpp"

using namespace fxf;
using namespace fxf::testing;

TEST_CASE("matmul examples") {
  auto eye = make({2, 2}, {1, 0, 0, 1});
  auto a = make({2, 2}, {1, 2, 3, 4});
  check_close(matmul(eye, a).data(), {1, 2, 3, 4}, 0.0);

  auto b = make({2, 2}, {5, 6, 7, 8});
  check_close(matmul(a, b).data(), {19, 22, 43, 50}, 0.0);

  auto x = TensorD::zeros({2, 3});
  auto y = TensorD::zeros({4, 5});
  try {
    matmul(x, y);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("matmul broadcasts batch dimensions") {
  Rng rng(1);
  auto a = random_tensor({2, 3, 4}, rng, -1, 1, false);
  auto b = random_tensor({4, 5}, rng, -1, 1, false);
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 3, 5});
  // second batch entry equals a standalone product
  auto a1 = slice(a, 0, 1, 1);
  auto ref = matmul(reshape(a1, {3, 4}), b);
  check_close(slice(c, 0, 1, 1).data(), std::vector<double>(ref.data().begin(), ref.data().end()), 1e-12);
}

TEST_CASE("softmax examples and invariants") {
  check_close(softmax(make({3}, {0, 0, 0}), 0).data(), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  check_close(softmax(make({2}, {1000, 1000}), 0).data(), {0.5, 0.5}, 0.0);
  check_close(softmax(make({2}, {0, std::log(3.0)}), 0).data(), {0.25, 0.75}, 1e-12);
  CHECK_THROWS_AS(softmax(make({2}, {0, 1}), 1), ShapeError);

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({4, 6}, rng, -30, 30, false);
    auto y = softmax(x, -1);
    auto shifted = softmax(add_scalar(x, rng.uniform(-100, 100)), -1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        CHECK(y[r * 6 + c] > 0.0);
        total += y[r * 6 + c];
        CHECK(std::abs(y[r * 6 + c] - shifted[r * 6 + c]) < 1e-6);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer_norm examples") {
  auto one = TensorD::ones({3});
  auto zero = TensorD::zeros({3});
  check_close(layer_norm(make({3}, {1, 1, 1}), one, zero, 1e-5).data(), {0, 0, 0}, 0.0);
  check_close(layer_norm(make({2}, {-1, 1}), TensorD::ones({2}), TensorD::zeros({2}), 1e-12).data(),
              {-1, 1}, 1e-9);
  check_close(layer_norm(make({2}, {2, 4}), TensorD::zeros({2}), TensorD::full({2}, 5), 1e-5).data(),
              {5, 5}, 0.0);
  CHECK_THROWS_AS(layer_norm(make({2}, {2, 4}), one, zero, 1e-5), ShapeError);
}

TEST_CASE("elementwise examples") {
  check_close(add(make({2}, {1, 2}), make({2}, {3, 4})).data(), {4, 6}, 0.0);
  check_close(relu(make({3}, {-1, 0, 2})).data(), {0, 0, 2}, 0.0);
  CHECK(sigmoid(TensorD::scalar(0)).item() == 0.5);
  CHECK_THROWS_AS(add(TensorD::zeros({2, 3}), TensorD::zeros({4})), ShapeError);
  CHECK_THROWS_AS(fxf::log(make({2}, {1, 0})), DomainError);
  // trailing-dimension broadcast
  check_close(add(make({2, 2}, {1, 2, 3, 4}), make({2}, {10, 20})).data(), {11, 22, 13, 24}, 0.0);
  check_close(mul(make({2, 1}, {2, 3}), make({1, 2}, {1, 10})).data(), {2, 20, 3, 30}, 0.0);
}

TEST_CASE("reduce examples") {
  CHECK(sum(make({3}, {1, 2, 3})).item() == 6.0);
  check_close(mean(make({2, 2}, {1, 3, 5, 7}), 1).data(), {2, 6}, 0.0);
  CHECK_THROWS_AS(sum(make({3}, {1, 2, 3}), 2), ShapeError);

  auto x = make({3}, {2, 2, 1}, true);
  auto m = fxf::max(x);
  backward(m);
  check_close(x.grad(), {1, 0, 0}, 0.0);

  auto y = make({2, 3}, {5, 1, 5, 0, 7, 7}, true);
  backward(sum(fxf::max(y, 1)));
  check_close(y.grad(), {1, 0, 0, 0, 1, 0}, 0.0);
}

TEST_CASE("conv2d examples") {
  auto img = make({1, 1, 2, 2}, {1, 2, 3, 4});
  check_close(conv2d(img, make({1, 1, 1, 1}, {2}), 1, 0).data(), {2, 4, 6, 8}, 0.0);
  check_close(conv2d(img, TensorD::ones({1, 1, 2, 2}), 1, 0).data(), {10}, 0.0);
  auto big = TensorD::ones({1, 1, 4, 4});
  CHECK(conv2d(big, TensorD::ones({1, 1, 2, 2}), 2, 0).shape() == Shape{1, 1, 2, 2});
  CHECK_THROWS_AS(conv2d(img, TensorD::ones({1, 1, 3, 3}), 1, 0), ShapeError);
  // floor((H + 2p - k) / s) + 1
  CHECK(conv2d(TensorD::ones({2, 3, 7, 9}), TensorD::ones({4, 3, 3, 3}), 2, 1).shape() ==
        Shape{2, 4, 4, 5});
}

TEST_CASE("bilinear_resize examples") {
  auto x = make({1, 1, 2, 2}, {1, 2, 3, 4});
  check_close(bilinear_resize(x, 2, 2).data(), {1, 2, 3, 4}, 0.0);
  auto c = bilinear_resize(TensorD::full({1, 2, 3, 5}, 0.7), 7, 4);
  for (double v : c.data()) CHECK(std::abs(v - 0.7) < 1e-15);
  check_close(bilinear_resize(make({1, 1, 1, 2}, {0, 2}), 1, 4).data(), {0, 0.5, 1.5, 2}, 1e-15);
}

TEST_CASE("backward examples") {
  auto x = make({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  check_close(x.grad(), std::vector<double>(6, 1.0), 0.0);

  auto y = make({1}, {3}, true);
  backward(sum(mul(y, y)));
  check_close(y.grad(), {6}, 0.0);

  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  Tape<double>::current().reset();
}

TEST_CASE("finite_diff_grad examples") {
  std::function<double(const TensorD&)> f_sum = [](const TensorD& t) { return sum(t).item(); };
  auto g = finite_diff_grad(f_sum, make({2, 2}, {1, -2, 3, 0.5}), 1e-5);
  check_close(g.data(), {1, 1, 1, 1}, 1e-9);

  std::function<double(const TensorD&)> f_sq = [](const TensorD& t) { return t[0] * t[0]; };
  CHECK(std::abs(finite_diff_grad(f_sq, TensorD::scalar(2.0), 1e-5).item() - 4.0) < 1e-6);

  Rng rng(3);
  auto a = random_tensor({3, 3}, rng);
  auto b = random_tensor({3, 3}, rng);
  std::function<TensorD(const TensorD&)> chain = [&](const TensorD& a_in) {
    return weighted_sum(softmax(matmul(a_in, b), -1));
  };
  auto loss = chain(a);
  backward(loss);
  std::function<double(const TensorD&)> f = [&](const TensorD& t) { return chain(t).item(); };
  auto fd = finite_diff_grad(f, a, 1e-5);
  std::vector<double> an = a.grad();
  CHECK(max_relative_error(an, std::vector<double>(fd.data().begin(), fd.data().end()), 1e-4) < 1e-4);
}

TEST_CASE("tape is topological and replays in decreasing id order") {
  auto x = make({2}, {0.3, -0.2}, true);
  auto h = gelu(mul(x, x));
  auto loss = sum(exp(h));
  const auto& entries = Tape<double>::current().entries();
  REQUIRE(entries.size() == 4);
  for (const auto& e : entries) {
    for (const auto& in : e.inputs) {
      if (in->node_id) CHECK(*in->node_id < e.id);
    }
  }
  backward(loss);
  auto order = Tape<double>::current().last_visit_order();
  REQUIRE(order.size() == 4);
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  CHECK(Tape<double>::current().size() == 0);
}

TEST_CASE("no-grad guard keeps the tape empty") {
  auto x = make({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape<double>::current().size() == 0);
}

TEST_CASE("requires_grad=false tensors are never differentiable leaves") {
  auto c = make({2}, {1, 2});
  auto x = make({2}, {3, 4}, true);
  backward(sum(mul(c, x)));
  CHECK_FALSE(c.has_grad());
  check_close(x.grad(), {1, 2}, 0.0);
}

TEST_CASE("rng determinism") {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);
  Rng u(5);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.below(7) < 7);
  }
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(11);
  auto a = random_tensor({2, 3, 4}, rng);
  auto b = random_tensor({4, 3}, rng);
  auto c = random_tensor({3, 4}, rng);
  auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
  auto gamma = random_tensor({4}, rng);
  auto beta = random_tensor({4}, rng);
  auto img = random_tensor({2, 2, 5, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);

  SUBCASE("matmul") {
    gradcheck([&] { return weighted_sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
  }
  SUBCASE("broadcast binary ops") {
    gradcheck([&] { return weighted_sum(add(a, c)); }, {{"a", a}, {"c", c}});
    gradcheck([&] { return weighted_sum(sub(c, a)); }, {{"a", a}, {"c", c}});
    gradcheck([&] { return weighted_sum(mul(a, c)); }, {{"a", a}, {"c", c}});
    gradcheck([&] { return weighted_sum(div(a, pos)); }, {{"a", a}, {"pos", pos}});
  }
  SUBCASE("unary ops") {
    gradcheck([&] { return weighted_sum(gelu(a)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(sigmoid(a)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(fxf::exp(a)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(fxf::log(pos)); }, {{"pos", pos}});
    gradcheck([&] { return weighted_sum(fxf::sqrt(pos)); }, {{"pos", pos}});
    gradcheck([&] { return weighted_sum(square(a)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(scale(neg(add_scalar(a, 0.5)), 3.0)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(relu(a)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(fxf::abs(a)); }, {{"a", a}});
  }
  SUBCASE("softmax family") {
    gradcheck([&] { return weighted_sum(softmax(a, 1)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(log_softmax(a, -1)); }, {{"a", a}});
  }
  SUBCASE("layer_norm") {
    gradcheck([&] { return weighted_sum(layer_norm(a, gamma, beta, 1e-5)); },
              {{"a", a}, {"gamma", gamma}, {"beta", beta}});
  }
  SUBCASE("reductions") {
    gradcheck([&] { return weighted_sum(sum(a, 1)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(mean(a, 2)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(fxf::max(a, 0)); }, {{"a", a}});
    gradcheck([&] { return mean(a); }, {{"a", a}});
  }
  SUBCASE("shape ops") {
    gradcheck([&] { return weighted_sum(reshape(a, {4, 6})); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(permute(a, {2, 0, 1})); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(slice(a, 1, 1, 2)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(concat<double>({a, a, slice(a, 2, 0, 1)}, 2)); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(index_select(a, {1, 0, 1})); }, {{"a", a}});
    gradcheck([&] { return weighted_sum(broadcast_to(c, {2, 3, 4})); }, {{"c", c}});
  }
  SUBCASE("conv2d") {
    gradcheck([&] { return weighted_sum(conv2d(img, w, 1, 1)); }, {{"img", img}, {"w", w}});
    gradcheck([&] { return weighted_sum(conv2d(img, w, 2, 1)); }, {{"img", img}, {"w", w}});
  }
  SUBCASE("bilinear_resize") {
    gradcheck([&] { return weighted_sum(bilinear_resize(img, 9, 13)); }, {{"img", img}});
    gradcheck([&] { return weighted_sum(bilinear_resize(img, 3, 2)); }, {{"img", img}});
  }
}
