#include <doctest.h>

#include <numeric>

#include "fxf/encoder.hpp"
#include "fxf/error.hpp"
#include "test_util.hpp"

using namespace fxf;
using namespace fxf::testing;


TEST_CASE("toy encoder output shapes") {
  ParamRegistry<double> reg;
  ToyEncoder<double> enc(reg, "encoder");
  Rng rng(1);
  init_params(reg, rng);
  auto scales = enc.forward(random_tensor({2, 3, 64, 64}, rng, 0, 1, false));
  REQUIRE(scales.size() == 4);
  CHECK(scales[0].shape() == Shape{2, 16, 16, 16});
  CHECK(scales[1].shape() == Shape{2, 32, 8, 8});
  CHECK(scales[2].shape() == Shape{2, 64, 4, 4});
  CHECK(scales[3].shape() == Shape{2, 128, 2, 2});
  CHECK(enc.channels() == ScaleChannels{16, 32, 64, 128});
}

TEST_CASE("toy encoder at 224 pixels") {
  ParamRegistry<float> reg;
  ToyEncoder<float> enc(reg, "encoder", {4, 4, 4, 4});
  Rng rng(2);
  init_params(reg, rng);
  NoGradGuard guard;
  auto scales = enc.forward(Tensor<float>::full({1, 3, 224, 224}, 0.5f));
  std::array<std::size_t, 4> want = {56, 28, 14, 7};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(scales[i].shape()[2] == want[i]);
    CHECK(scales[i].shape()[3] == want[i]);
  }
}

TEST_CASE("image validation") {
  Rng rng(3);
  CHECK_THROWS_AS(validate_image(random_tensor({1, 3, 50, 64}, rng)), ShapeError);
  CHECK_THROWS_AS(validate_image(random_tensor({1, 1, 64, 64}, rng)), ShapeError);
  CHECK_THROWS_AS(validate_image(random_tensor({3, 64, 64}, rng)), ShapeError);
  CHECK_NOTHROW(validate_image(random_tensor({1, 3, 32, 96}, rng)));
}

TEST_CASE("fusion of zero scales is zero") {
  ParamRegistry<double> reg;
  MlpFusion<double> fusion(reg, "fusion", {16, 32, 64, 128}, 8);
  Rng rng(4);
  init_params(reg, rng);
  std::vector<TensorD> scales = {TensorD::zeros({2, 16, 8, 8}), TensorD::zeros({2, 32, 4, 4}),
                                 TensorD::zeros({2, 64, 2, 2}), TensorD::zeros({2, 128, 1, 1})};
  auto f = fusion(scales);
  CHECK(f.shape() == Shape{2, 64, 8});
  for (double v : f.data()) CHECK(v == 0.0);
}

TEST_CASE("fusion hand example") {
  ParamRegistry<double> reg;
  MlpFusion<double> fusion(reg, "fusion", {2, 2, 2, 2}, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    double k = static_cast<double>(i + 1);
    set_values(fusion.proj[i].weight, {k, 0, 0, k});
  }
  set_values(fusion.fuse.weight, {1, 0, 1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1});
  set_values(fusion.fuse.bias, {0.1, -0.1});
  // S1 channel 0 holds 1..4 over the 2x2 grid; coarser scales are single pixels.
  std::vector<TensorD> scales = {make({1, 2, 2, 2}, {1, 2, 3, 4, 0, 0, 0, 0}), make({1, 2, 1, 1}, {1, -1}),
                                 make({1, 2, 1, 1}, {0, 1}), make({1, 2, 1, 1}, {0.5, 0})};
  // F = S1 + 2 S2 + 3 S3 + 4 S4 + bias
  check_close(fusion(scales).data(), {5.1, 0.9, 6.1, 0.9, 7.1, 0.9, 8.1, 0.9}, 1e-12);
}

TEST_CASE("fusion projection commutes with the resize") {
  ParamRegistry<double> reg;
  MlpFusion<double> fusion(reg, "fusion", {3, 4, 5, 6}, 4);
  Rng rng(5);
  for (const auto& e : reg.entries()) set_random(e.tensor, rng, -1, 1);
  std::vector<TensorD> scales = {random_tensor({1, 3, 8, 8}, rng, -1, 1, false),
                                 random_tensor({1, 4, 4, 4}, rng, -1, 1, false),
                                 random_tensor({1, 5, 2, 2}, rng, -1, 1, false),
                                 random_tensor({1, 6, 1, 1}, rng, -1, 1, false)};
  std::vector<TensorD> upsampled;
  for (const auto& s : scales) upsampled.push_back(bilinear_resize(s, 8, 8));
  std::vector<TensorD> parts;
  for (std::size_t i = 0; i < 4; ++i) {
    auto tokens = reshape(permute(upsampled[i], {0, 2, 3, 1}), {1, 64, upsampled[i].shape()[1]});
    parts.push_back(fusion.proj[i](tokens));
  }
  auto reference = fusion.fuse(concat(parts, -1));
  auto got = fusion(scales);
  check_close(got.data(), std::vector<double>(reference.data().begin(), reference.data().end()), 1e-12);
}

TEST_CASE("fusion is equivariant to spatial permutation") {
  ParamRegistry<double> reg;
  MlpFusion<double> fusion(reg, "fusion", {2, 3, 2, 3}, 4);
  Rng rng(6);
  init_params(reg, rng);
  const std::size_t h = 4, w = 4, l = h * w;
  std::vector<std::size_t> perm(l);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<TensorD> scales, permuted;
  for (std::size_t c : {2, 3, 2, 3}) {
    auto s = random_tensor({1, c, h, w}, rng, -1, 1, false);
    std::vector<double> p(s.numel());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < l; ++i) p[ch * l + i] = s.data()[ch * l + perm[i]];
    scales.push_back(s);
    permuted.push_back(make({1, c, h, w}, p));
  }
  auto f = fusion(scales);
  auto fp = fusion(permuted);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(fp.data()[i * 4 + c] == doctest::Approx(f.data()[perm[i] * 4 + c]).epsilon(1e-12));
}

TEST_CASE("fusion rejects bad scale lists") {
  ParamRegistry<double> reg;
  MlpFusion<double> fusion(reg, "fusion", {2, 2, 2, 2}, 2);
  std::vector<TensorD> three = {TensorD::zeros({1, 2, 2, 2}), TensorD::zeros({1, 2, 1, 1}),
                                TensorD::zeros({1, 2, 1, 1})};
  CHECK_THROWS_AS(fusion(three), ShapeError);
  std::vector<TensorD> bad = {TensorD::zeros({1, 2, 2, 2}), TensorD::zeros({1, 3, 1, 1}),
                              TensorD::zeros({1, 2, 1, 1}), TensorD::zeros({1, 2, 1, 1})};
  CHECK_THROWS_AS(fusion(bad), ShapeError);
}

TEST_CASE("fusion parameter count") {
  ParamRegistry<double> reg;
  MlpFusion<double> fusion(reg, "fusion", {3, 4, 5, 6}, 7);
  CHECK(fusion_param_count({3, 4, 5, 6}, 7) == reg.total_elements());
  // widths of a Swin-B style backbone with 256-wide tokens
  CHECK(fusion_param_count({128, 256, 512, 1024}, 256) == 754944);
}

TEST_CASE("encoder and fusion gradient") {
  ParamRegistry<double> reg;
  ToyEncoder<double> enc(reg, "encoder", {3, 4, 4, 5});
  MlpFusion<double> fusion(reg, "fusion", enc.channels(), 4);
  Rng rng(7);
  init_params(reg, rng);
  for (const auto& e : reg.entries())
    if (e.scheme == InitScheme::zeros) set_random(e.tensor, rng, -0.2, 0.2);
  auto img = random_tensor({1, 3, 32, 32}, rng, 0, 1);
  auto inputs = reg.named();
  inputs.emplace_back("pixels", img);
  gradcheck([&] { return weighted_sum(fusion(enc.forward(img))); }, inputs, 12);
}
