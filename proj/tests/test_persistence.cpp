#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>

#include "fxf/checkpoint.hpp"
#include "fxf/config.hpp"
#include "fxf/error.hpp"
#include "model_util.hpp"

using namespace fxf;
using fxf::testing::forward_values;
using fxf::testing::param_values;
using fxf::testing::tiny_model_config;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config documents") {
  SUBCASE("defaults round-trip through text") {
    const RunConfig def;
    CHECK(to_text(parse_config(to_text(def))) == to_text(def));
    CHECK(parse_config("").model.decoder.num_layers == def.model.decoder.num_layers);
  }

  SUBCASE("every key is parsed and written back") {
    const std::string doc =
        "# small run\n"
        "image.height = 32\nimage.width = 32\nencoder.channels = 8, 8, 16, 16\n"
        "model.dim = 16\nmodel.heads = 4\nmodel.layers = 3\nmodel.ffn_mult = 2\n"
        "model.ablation = standard-cross-attn\nmodel.refine = false\n"
        "head.seg_classes = 5\nhead.hidden = 12\nloss.lnd = 50   # heavier\nloss.arc_margin = 0.3\n"
        "train.batch_size = 10\ntrain.max_steps = 7\ntrain.lr = 0.001\ntrain.decay_epochs = \n"
        "train.seed = 9\nmodel.seed = 11\ndata.tasks = parsing, age\ndata.seed = 5\npaths.out_dir = out/x\n";
    const RunConfig c = parse_config(doc);
    CHECK(c.model.height == 32);
    CHECK(c.model.encoder_channels[3] == 16);
    CHECK(c.model.decoder.attention.num_heads == 4);
    CHECK(c.model.decoder.num_layers == 3);
    CHECK(c.model.decoder.mode == Ablation::standard_cross_attn);
    CHECK_FALSE(c.model.refine);
    CHECK(c.model.heads.seg_classes == 5);
    CHECK(c.train.weights.lnd == 50.0);
    CHECK(c.train.margin.margin == 0.3);
    CHECK(c.train.lr == 0.001);
    CHECK(c.train.decay_epochs.empty());
    CHECK(c.train.seed == 9);
    CHECK(c.init_seed == 11);
    CHECK(c.tasks == std::vector<Task>{Task::parsing, Task::age});
    CHECK(c.out_dir == "out/x");
    c.validate();
    CHECK(to_text(parse_config(to_text(c))) == to_text(c));
  }

  SUBCASE("schema lists each key once and to_text covers it") {
    const auto& keys = schema_keys();
    std::set<std::string> unique(keys.begin(), keys.end());
    CHECK(unique.size() == keys.size());
    const std::string text = to_text(RunConfig{});
    for (const auto& k : keys) CHECK(text.find(k + " = ") != std::string::npos);
  }

  SUBCASE("errors name the offending key") {
    CHECK(error_of([] { parse_config("model.dims = 4\n"); }).find("'model.dims'") != std::string::npos);
    CHECK(error_of([] { parse_config("train.lr = fast\n"); }).find("train.lr") != std::string::npos);
    CHECK(error_of([] { parse_config("model.layers = -1\n"); }).find("model.layers") != std::string::npos);
    CHECK(error_of([] { parse_config("model.refine = yes\n"); }).find("model.refine") != std::string::npos);
    CHECK(error_of([] { parse_config("data.tasks = parsing, hair\n"); }).find("hair") != std::string::npos);
    CHECK(error_of([] { parse_config("train.lr = 1\ntrain.lr = 2\n"); }).find("train.lr") != std::string::npos);
    CHECK(error_of([] { parse_config("\n\njust words\n"); }).find("line 3") != std::string::npos);
    CHECK_THROWS_AS(parse_config("model.ablation = sideways\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(parse_config("data.tasks = parsing, age, gender\n").validate(), ConfigError);  // 20 % 3
    CHECK_THROWS_AS(parse_config("augmentation.enabled = true\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("data.tasks = age, age\ntrain.batch_size = 2\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_config("image.height = 48\n").validate(), ConfigError);
    CHECK_NOTHROW(RunConfig{}.validate());
  }
}

TEST_CASE("config digest") {
  // FNV-1a reference vectors
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);

  const ModelConfig base;
  CHECK(config_digest(base) == config_digest(ModelConfig{}));
  CHECK(config_digest(base) == fnv1a64(model_text(base)));
  ModelConfig wider = base;
  wider.decoder.attention.model_dim = 64;
  CHECK(config_digest(wider) != config_digest(base));
  ModelConfig ablated = base;
  ablated.decoder.mode = Ablation::no_cross_attn;
  CHECK(config_digest(ablated) != config_digest(base));

  RunConfig a, b;
  b.train.lr = 0.5;
  b.data_seed = 99;
  CHECK(config_digest(a.model) == config_digest(b.model));
  CHECK(model_text(base).find("train.") == std::string::npos);
}

TEST_CASE("checkpoint encoding") {
  Checkpoint c;
  c.digest = 0x0123456789abcdefULL;
  c.records.push_back({"a.weight", {2, 3}, {1.f, -2.f, 0.5f, 1e-30f, -0.f, 3.25f}});
  c.records.push_back({"b", {1}, {7.f}});
  const auto bytes = encode_checkpoint(c);

  SUBCASE("layout") {
    // header 4+4+8+4, records (4+8+4+16+24) and (4+1+4+8+4), CRC 4
    CHECK(bytes.size() == 20 + 56 + 21 + 4);
    CHECK(std::memcmp(bytes.data(), "FXF1", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 0xef);
    CHECK(bytes[15] == 0x01);
  }

  SUBCASE("decode then encode is byte-identical") {
    const Checkpoint d = decode_checkpoint(bytes);
    CHECK(d.digest == c.digest);
    REQUIRE(d.records.size() == 2);
    CHECK(d.records[0].name == "a.weight");
    CHECK(d.records[0].shape == Shape{2, 3});
    CHECK(std::signbit(d.records[0].values[4]));
    CHECK(encode_checkpoint(d) == bytes);
  }

  SUBCASE("corruption is rejected") {
    auto bad = bytes;
    bad[0] = 'G';
    CHECK(error_of([&] { decode_checkpoint(bad); }).find("magic") != std::string::npos);
    bad = bytes;
    bad[30] ^= 0x10;
    CHECK(error_of([&] { decode_checkpoint(bad); }).find("CRC") != std::string::npos);
    bad = bytes;
    bad.resize(bytes.size() - 9);
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(10)), CheckpointError);

    Checkpoint future = c;
    future.version = 2;
    CHECK(error_of([&] { decode_checkpoint(encode_checkpoint(future)); }).find("version 2") != std::string::npos);

    Checkpoint lying = c;
    lying.records[1].shape = {2};
    CHECK_THROWS_AS(encode_checkpoint(lying), CheckpointError);
  }
}

TEST_CASE("model checkpoints") {
  const ModelConfig cfg = tiny_model_config();
  FaceXFormer<float> model(cfg);
  model.initialize(5);
  const auto ds = fxf::testing::tiny_datasets(cfg, 1, 3);
  TaskBatch batch;
  for (const auto& [t, samples] : ds) batch.samples.push_back(&samples[0]);
  const Tensor<float> pixels = batch.images<float>();

  SUBCASE("round trip through a file gives bitwise-identical outputs") {
    const auto path = (std::filesystem::temp_directory_path() / "fxf_test_roundtrip.ckpt").string();
    save_checkpoint(model, path);
    FaceXFormer<float> other(cfg);
    other.initialize(6);
    CHECK(param_values(other) != param_values(model));
    load_checkpoint(other, path);
    CHECK(param_values(other) == param_values(model));
    CHECK(forward_values(other, pixels) == forward_values(model, pixels));

    const auto bytes = encode_checkpoint(snapshot(other));
    CHECK(bytes == encode_checkpoint(read_checkpoint(path)));
    std::filesystem::remove(path);
  }

  SUBCASE("record names follow the registry") {
    const Checkpoint c = snapshot(model);
    REQUIRE(c.records.size() == model.params().entries().size());
    CHECK(c.records.front().name.rfind("encoder.", 0) == 0);
    CHECK(c.records.back().name == "loss.recognition.weight");
  }

  SUBCASE("f64 models store f32 values") {
    FaceXFormer<double> wide(cfg);
    wide.initialize(5);
    CHECK(encode_checkpoint(snapshot(wide)) == encode_checkpoint(snapshot(model)));
  }

  SUBCASE("mismatches are rejected") {
    ModelConfig other_cfg = cfg;
    other_cfg.heads.hidden = 8;
    FaceXFormer<float> other(other_cfg);
    CHECK(error_of([&] { restore(other, snapshot(model)); }).find("different model configuration") !=
          std::string::npos);

    Checkpoint c = snapshot(model);
    c.records[2].name = "encoder.renamed";
    CHECK(error_of([&] { restore(model, c); }).find("encoder.renamed") != std::string::npos);
    c = snapshot(model);
    c.records.pop_back();
    CHECK_THROWS_AS(restore(model, c), CheckpointError);
    CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.ckpt"), CheckpointError);
  }
}
