#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fxf/error.hpp"
#include "fxf/nn.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fxf;
using namespace fxf::testing;


TEST_CASE("linear identity and hand example") {
  auto x = make({1, 2}, {1, 1});
  auto w = make({2, 2}, {1, 2, 3, 4});
  auto b = make({2}, {10, 20});
  check_close(linear(x, w, b).data(), {13, 27}, 1e-12);

  auto eye = make({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto zero = TensorD::zeros({3});
  auto v = make({2, 3}, {0.5, -2, 7, 1, 2, 3});
  check_close(linear(v, eye, zero).data(), {0.5, -2, 7, 1, 2, 3}, 0.0);
}

TEST_CASE("linear batched shape and mismatch") {
  Rng rng(1);
  auto x = random_tensor({5, 7, 3}, rng);
  auto w = random_tensor({4, 3}, rng);
  auto b = random_tensor({4}, rng);
  CHECK(linear(x, w, b).shape() == Shape{5, 7, 4});
  CHECK_THROWS_AS(linear(random_tensor({2, 5}, rng), w, b), ShapeError);
  CHECK_THROWS_AS(linear(x, w, random_tensor({3}, rng)), ShapeError);
}

TEST_CASE("linear gradient") {
  Rng rng(2);
  auto x = random_tensor({2, 3, 5}, rng);
  auto w = random_tensor({4, 5}, rng);
  auto b = random_tensor({4}, rng);
  gradcheck([&] { return weighted_sum(linear(x, w, b)); }, {{"x", x}, {"w", w}, {"b", b}});
}

TEST_CASE("registry keeps insertion order and rejects duplicates") {
  ParamRegistry<double> reg;
  reg.declare("b.weight", {2, 2}, InitScheme::xavier_uniform);
  reg.declare("a.bias", {2}, InitScheme::zeros);
  CHECK(reg.entries()[0].name == "b.weight");
  CHECK(reg.entries()[1].name == "a.bias");
  CHECK(reg.total_elements() == 6);
  CHECK(reg.contains("a.bias"));
  CHECK_THROWS(reg.declare("a.bias", {2}, InitScheme::zeros));
  CHECK_THROWS(reg.get("missing"));
}

TEST_CASE("init_params respects schemes and bounds") {
  ParamRegistry<double> reg;
  Linear<double> lin(reg, "lin", 4, 4);
  LayerNorm<double> ln(reg, "ln", 4);
  ParamRegistry<double> conv_reg;
  auto conv = conv_reg.declare("conv.weight", {8, 2, 3, 3}, InitScheme::xavier_uniform);
  Rng rng(3);
  init_params(reg, rng);
  init_params(conv_reg, rng);

  CHECK(xavier_bound({4, 4}) == doctest::Approx(std::sqrt(6.0 / 8.0)));
  CHECK(xavier_bound({4, 4}) == doctest::Approx(0.866).epsilon(1e-3));
  for (double v : lin.weight.data()) CHECK(std::abs(v) <= std::sqrt(6.0 / 8.0));
  for (double v : lin.bias.data()) CHECK(v == 0.0);
  for (double v : ln.gamma.data()) CHECK(v == 1.0);
  for (double v : ln.beta.data()) CHECK(v == 0.0);
  double conv_bound = std::sqrt(6.0 / (2 * 9 + 8 * 9));
  for (double v : conv.data()) CHECK(std::abs(v) <= conv_bound);

  ParamRegistry<double> again;
  Linear<double> lin2(again, "lin", 4, 4);
  LayerNorm<double> ln2(again, "ln", 4);
  Rng rng2(3);
  init_params(again, rng2);
  CHECK(std::equal(lin.weight.data().begin(), lin.weight.data().end(), lin2.weight.data().begin()));
}

TEST_CASE("attention config validation") {
  AttentionConfig ok{8, 2};
  CHECK(ok.head_dim() == 4);
  CHECK_NOTHROW(ok.validate());
  CHECK_THROWS_AS((AttentionConfig{6, 4}.validate()), ShapeError);
  CHECK_THROWS_AS((AttentionConfig{8, 0}.validate()), ShapeError);
}

TEST_CASE("attention over a single key returns its projected value") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {4, 2});
  fill_random(reg, 4);
  Rng rng(5);
  auto q = random_tensor({2, 3, 4}, rng, -1, 1, false);
  auto kv = random_tensor({2, 1, 4}, rng, -1, 1, false);
  auto out = mha(q, kv);
  auto expected = mha.o_proj(mha.v_proj(kv));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(out.data()[(b * 3 + i) * 4 + c] == doctest::Approx(expected.data()[b * 4 + c]).epsilon(1e-12));
}

TEST_CASE("identical keys give uniform weights") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {4, 2});
  fill_random(reg, 6);
  // k_proj ignores its input, so every key row equals the bias.
  TensorD wk = mha.k_proj.weight;
  for (auto& v : wk.mutable_data()) v = 0.0;
  Rng rng(7);
  auto q = random_tensor({1, 2, 4}, rng, -1, 1, false);
  auto kv = random_tensor({1, 5, 4}, rng, -1, 1, false);
  AttentionProbe<double> probe;
  mha(q, kv, &probe);
  CHECK(probe.weights.shape() == Shape{1, 2, 2, 5});
  for (double w : probe.weights.data()) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("single-head attention matches scalar oracle") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {4, 1});
  Rng init(8);
  init_params(reg, init);
  fill_random(reg, 9);
  Rng rng(10);
  auto q = random_tensor({1, 2, 4}, rng, -1, 1, false);
  auto kv = random_tensor({1, 3, 4}, rng, -1, 1, false);
  check_close(mha(q, kv).data(), attention_oracle(mha, flat(q), flat(kv), 1, 2, 3), 1e-6);
}

TEST_CASE("attention rows are distributions") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {8, 2});
  fill_random(reg, 11, -2, 2);
  Rng rng(12);
  auto q = random_tensor({3, 4, 8}, rng, -2, 2, false);
  auto kv = random_tensor({3, 6, 8}, rng, -2, 2, false);
  AttentionProbe<double> probe;
  mha(q, kv, &probe);
  auto w = probe.weights.data();
  for (std::size_t row = 0; row < w.size() / 6; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(w[row * 6 + j] >= 0.0);
      s += w[row * 6 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("attention is invariant to joint key/value permutation") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {8, 2});
  fill_random(reg, 13);
  Rng rng(14);
  auto q = random_tensor({2, 3, 8}, rng, -1, 1, false);
  auto kv = random_tensor({2, 5, 8}, rng, -1, 1, false);
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> shuffled(kv.numel());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t c = 0; c < 8; ++c)
        shuffled[(b * 5 + j) * 8 + c] = kv.data()[(b * 5 + perm[j]) * 8 + c];
  auto kv_perm = make({2, 5, 8}, shuffled);
  auto a = mha(q, kv);
  auto b = mha(q, kv_perm);
  check_close(b.data(), std::vector<double>(a.data().begin(), a.data().end()), 1e-12);
}

TEST_CASE("attention shape errors") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {4, 2});
  Rng rng(15);
  CHECK_THROWS_AS(mha(random_tensor({1, 2, 3}, rng), random_tensor({1, 2, 4}, rng)), ShapeError);
  CHECK_THROWS_AS(mha(random_tensor({1, 2, 4}, rng), random_tensor({2, 2, 4}, rng)), ShapeError);
  CHECK_THROWS_AS(mha(random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)), ShapeError);
}

TEST_CASE("attention gradient") {
  ParamRegistry<double> reg;
  MultiHeadAttention<double> mha(reg, "attn", {4, 2});
  fill_random(reg, 16, -1, 1);
  Rng rng(17);
  auto q = random_tensor({2, 3, 4}, rng);
  auto kv = random_tensor({2, 4, 4}, rng);
  auto inputs = reg.named();
  inputs.emplace_back("q", q);
  inputs.emplace_back("kv", kv);
  gradcheck([&] { return weighted_sum(mha(q, kv)); }, inputs);
}

TEST_CASE("feed-forward examples") {
  ParamRegistry<double> reg;
  FeedForward<double> ffn(reg, "ffn", 2, 2);
  auto x = make({1, 1, 2}, {1, -1});
  check_close(ffn(x).data(), {0, 0}, 0.0);

  std::vector<double> w1 = {1, 0, 0, 1, 1, 1, 1, -1};
  std::vector<double> w2 = {1, 1, 1, 1, 1, 0, 0, -1};
  std::copy(w1.begin(), w1.end(), TensorD(ffn.fc1.weight).mutable_data().begin());
  std::copy(w2.begin(), w2.end(), TensorD(ffn.fc2.weight).mutable_data().begin());
  TensorD(ffn.fc2.bias).mutable_data()[1] = 0.5;
  // hidden = [1, -1, 0, 2]; gelu = [0.841344746, -0.158655254, 0, 1.954499736]
  check_close(ffn(x).data(), {2.637189228, -0.613154990}, 1e-8);

  Rng rng(18);
  CHECK(ffn(random_tensor({3, 7, 2}, rng)).shape() == Shape{3, 7, 2});
  CHECK_THROWS_AS(ffn(random_tensor({1, 2, 3}, rng)), ShapeError);
}

TEST_CASE("feed-forward and layer norm gradients") {
  ParamRegistry<double> reg;
  FeedForward<double> ffn(reg, "ffn", 3, 2);
  LayerNorm<double> ln(reg, "ln", 3);
  fill_random(reg, 19, -1, 1);
  Rng rng(20);
  auto x = random_tensor({2, 4, 3}, rng);
  auto inputs = reg.named();
  inputs.emplace_back("x", x);
  gradcheck([&] { return weighted_sum(ffn(ln(x))); }, inputs);
}
