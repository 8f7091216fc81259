#include "fxf/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <utility>

#include "fxf/data.hpp"
#include "fxf/decoder.hpp"
#include "fxf/encoder.hpp"
#include "fxf/heads.hpp"
#include "fxf/losses.hpp"
#include "fxf/model.hpp"
#include "fxf/ops.hpp"
#include "fxf/train.hpp"

namespace fxf {

namespace {

using TD = Tensor<double>;
using Inputs = std::vector<std::pair<std::string, TD>>;

TD random(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD(std::move(shape), std::move(v), true);
}

/// Fixed random projection to a scalar so every output entry matters.
TD project(const TD& out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(out, TD(out.shape(), std::move(w))));
}

/// Gives biases and norm parameters non-trivial values.
void perturb_non_weights(const ParamRegistry<double>& reg, Rng& rng) {
  for (const auto& e : reg.entries()) {
    if (e.scheme == InitScheme::xavier_uniform) continue;
    TD t = e.tensor;
    for (auto& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
  }
}

class ModuleRun {
 public:
  ModuleRun(std::string name, const GradCheckSuiteOptions& opts) : opts_(opts) { result_.module = std::move(name); }

  void check(const std::string& label, const std::function<TD()>& loss, const Inputs& inputs, std::size_t elements,
             double h = 1e-5) {
    GradCheckOptions o;
    o.h = h;
    o.max_elements_per_tensor = elements;
    o.seed = opts_.seed;
    const GradCheckReport rep = check_gradients<double>(loss, inputs, o);
    for (auto e : rep.entries) {
      e.name = label + ":" + e.name;
      result_.worst = std::max(result_.worst, e.worst_rel_error);
      result_.checked += e.checked;
      result_.entries.push_back(std::move(e));
    }
  }

  GradCheckModuleResult finish() {
    result_.passed = result_.worst < opts_.rtol;
    return std::move(result_);
  }

 private:
  const GradCheckSuiteOptions& opts_;
  GradCheckModuleResult result_;
};

GradCheckModuleResult ops_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("ops", opts);
  Rng rng(opts.seed + 1);
  TD a = random({2, 3, 4}, rng);
  TD b = random({4, 3}, rng);
  TD c = random({3, 4}, rng);
  TD pos = random({3, 4}, rng, 0.5, 2.0);
  TD gamma = random({4}, rng);
  TD beta = random({4}, rng);
  TD img = random({2, 2, 5, 6}, rng);
  TD w = random({3, 2, 3, 3}, rng);
  auto one = [&](const std::string& label, std::function<TD()> f, Inputs in) { run.check(label, f, in, 0); };
  one("matmul", [&] { return project(matmul(a, b), 1); }, {{"a", a}, {"b", b}});
  one("add", [&] { return project(add(a, c), 2); }, {{"a", a}, {"c", c}});
  one("sub", [&] { return project(sub(c, a), 3); }, {{"a", a}, {"c", c}});
  one("mul", [&] { return project(mul(a, c), 4); }, {{"a", a}, {"c", c}});
  one("div", [&] { return project(div(a, pos), 5); }, {{"a", a}, {"pos", pos}});
  one("gelu", [&] { return project(gelu(a), 6); }, {{"a", a}});
  one("sigmoid", [&] { return project(sigmoid(a), 7); }, {{"a", a}});
  one("exp", [&] { return project(fxf::exp(a), 8); }, {{"a", a}});
  one("log", [&] { return project(fxf::log(pos), 9); }, {{"pos", pos}});
  one("sqrt", [&] { return project(fxf::sqrt(pos), 10); }, {{"pos", pos}});
  one("square", [&] { return project(square(a), 11); }, {{"a", a}});
  one("scale", [&] { return project(scale(neg(add_scalar(a, 0.5)), 3.0), 12); }, {{"a", a}});
  one("relu", [&] { return project(relu(a), 13); }, {{"a", a}});
  one("abs", [&] { return project(fxf::abs(a), 14); }, {{"a", a}});
  one("softmax", [&] { return project(softmax(a, 1), 15); }, {{"a", a}});
  one("log_softmax", [&] { return project(log_softmax(a, -1), 16); }, {{"a", a}});
  one("layer_norm", [&] { return project(layer_norm(a, gamma, beta, 1e-5), 17); },
      {{"a", a}, {"gamma", gamma}, {"beta", beta}});
  one("sum", [&] { return project(sum(a, 1), 18); }, {{"a", a}});
  one("mean", [&] { return project(mean(a, 2), 19); }, {{"a", a}});
  one("max", [&] { return project(fxf::max(a, 0), 20); }, {{"a", a}});
  one("reshape", [&] { return project(reshape(a, {4, 6}), 21); }, {{"a", a}});
  one("permute", [&] { return project(permute(a, {2, 0, 1}), 22); }, {{"a", a}});
  one("transpose", [&] { return project(transpose(a, 1, 2), 23); }, {{"a", a}});
  one("slice", [&] { return project(slice(a, 1, 1, 2), 24); }, {{"a", a}});
  one("concat", [&] { return project(concat<double>({a, slice(a, 2, 0, 1)}, 2), 25); }, {{"a", a}});
  one("index_select", [&] { return project(index_select(a, {1, 0, 1}), 26); }, {{"a", a}});
  one("broadcast_to", [&] { return project(broadcast_to(c, {2, 3, 4}), 27); }, {{"c", c}});
  one("conv2d", [&] { return project(conv2d(img, w, 2, 1), 28); }, {{"img", img}, {"w", w}});
  one("bilinear_resize", [&] { return project(bilinear_resize(img, 9, 13), 29); }, {{"img", img}});
  return run.finish();
}

GradCheckModuleResult nn_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("nn", opts);
  ParamRegistry<double> reg;
  Linear<double> lin(reg, "linear", 5, 3);
  MultiHeadAttention<double> mha(reg, "mha", {8, 2});
  FeedForward<double> ffn(reg, "ffn", 8, 2);
  LayerNorm<double> norm(reg, "norm", 8);
  Rng init(opts.seed + 2);
  init_params(reg, init);
  perturb_non_weights(reg, init);
  Rng rng(opts.seed + 3);
  TD x = random({2, 4, 5}, rng);
  TD q = random({2, 3, 8}, rng);
  TD kv = random({2, 5, 8}, rng);
  Inputs in = reg.named();
  in.emplace_back("x", x);
  in.emplace_back("q", q);
  in.emplace_back("kv", kv);
  run.check("blocks",
            [&] { return add(add(project(lin(x), 1), project(mha(q, kv), 2)), project(ffn(norm(q)), 3)); }, in,
            0);
  return run.finish();
}

GradCheckModuleResult encoder_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("encoder", opts);
  ParamRegistry<double> reg;
  ToyEncoder<double> enc(reg, "encoder", {4, 4, 6, 6});
  MlpFusion<double> fusion(reg, "fusion", {4, 4, 6, 6}, 8);
  Rng init(opts.seed + 4);
  init_params(reg, init);
  perturb_non_weights(reg, init);
  Rng rng(opts.seed + 5);
  TD img = random({1, 3, 32, 32}, rng, 0.0, 1.0);
  Inputs in = reg.named();
  in.emplace_back("pixels", img);
  run.check("encoder+fusion", [&] { return project(fusion(enc.forward(img)), 1); }, in,
            3 * opts.elements_per_tensor);
  return run.finish();
}

GradCheckModuleResult decoder_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("decoder", opts);
  for (Ablation mode : {Ablation::bidirectional, Ablation::standard_cross_attn, Ablation::no_cross_attn}) {
    ParamRegistry<double> reg;
    DecoderConfig cfg;
    cfg.num_layers = 2;
    cfg.attention = {16, 2};
    cfg.mode = mode;
    FaceXDecoder<double> dec(reg, "decoder", cfg);
    Rng init(opts.seed + 6);
    init_params(reg, init);
    perturb_non_weights(reg, init);
    Rng rng(opts.seed + 7);
    TD face = random({1, 16, 16}, rng);
    TD table = random({12, 16}, rng);
    Inputs in = reg.named();
    in.emplace_back("face", face);
    in.emplace_back("tokens", table);
    run.check(std::string(ablation_name(mode)),
              [&] {
                auto s = dec(face, table);
                return add(project(s.tasks, 1), project(s.face, 2));
              },
              in, 3 * opts.elements_per_tensor);
  }
  return run.finish();
}

GradCheckModuleResult heads_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("heads", opts);
  HeadConfig hc;
  hc.seg_classes = 3;
  hc.age_bins = 4;
  hc.races = 3;
  hc.expressions = 3;
  hc.attributes = 5;
  hc.embed_dim = 4;
  hc.heatmap_side = 4;
  hc.hidden = 6;
  ParamRegistry<double> reg;
  UnifiedHead<double> head(reg, "head", hc, {8, 2});
  Rng init(opts.seed + 8);
  init_params(reg, init);
  perturb_non_weights(reg, init);
  Rng rng(opts.seed + 9);
  TD tasks = random({2, head.layout.total(), 8}, rng);
  TD face = random({2, 4, 8}, rng);
  Inputs in = reg.named();
  in.emplace_back("tasks", tasks);
  in.emplace_back("face", face);
  run.check("unified_head",
            [&] {
              auto p = head(tasks, face, 8, 8, select_all(2));
              const std::vector<TD> parts = {project(*p.parsing, 1),      project(*p.landmarks, 2),
                                             project(*p.headpose, 3),     project(*p.attributes, 4),
                                             project(*p.age_expected, 5), project(*p.gender, 6),
                                             project(*p.race, 7),         project(*p.expression, 8),
                                             project(*p.embedding, 9),    project(*p.visibility, 10)};
              TD total = parts[0];
              for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
              return total;
            },
            in, 3 * opts.elements_per_tensor);
  return run.finish();
}

GradCheckModuleResult losses_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("losses", opts);
  Rng rng(opts.seed + 10);
  TD seg = random({2, 3, 4, 4}, rng);
  std::vector<std::size_t> seg_t(2 * 16);
  for (auto& v : seg_t) v = rng.below(3);
  run.check("seg", [&] { return seg_loss(seg, seg_t); }, {{"logits", seg}}, 0);

  TD lnd = random({2, kNumLandmarks, 2}, rng, 0.0, 1.0);
  TD lnd_t = random({2, kNumLandmarks, 2}, rng, 0.0, 1.0);
  run.check("landmarks", [&] { return landmark_loss(lnd, lnd_t); }, {{"pred", lnd}}, 0);

  TD raw = random({2, 3, 3}, rng);
  const auto r0 = euler_to_rotation(0.3, -0.2, 0.1);
  const auto r1 = euler_to_rotation(-0.5, 0.4, 0.2);
  std::vector<double> rt(r0.begin(), r0.end());
  rt.insert(rt.end(), r1.begin(), r1.end());
  TD rot_t({2, 3, 3}, rt);
  run.check("geodesic", [&] { return geodesic_loss(project_to_so3(raw), rot_t); }, {{"raw", raw}}, 0);

  TD emb = random({3, 4}, rng);
  TD cls = random({5, 4}, rng);
  run.check("margin_softmax", [&] { return margin_softmax_loss(l2_normalize(emb), {0, 3, 1}, cls, MarginConfig{}); },
            {{"embeddings", emb}, {"class_weights", cls}}, 0);

  TD bce = random({2, 5}, rng, -3.0, 3.0);
  TD bce_t({2, 5}, {1, 0, 0, 1, 1, 0, 1, 0, 0, 1});
  run.check("bce", [&] { return bce_with_logits(bce, bce_t); }, {{"logits", bce}}, 0);

  TD ce = random({3, 4}, rng, -2.0, 2.0);
  run.check("ce", [&] { return ce_loss(ce, {2, 0, 3}); }, {{"logits", ce}}, 0);

  TD age_logits = random({2, 4}, rng);
  TD centers({4, 1}, {10, 30, 50, 70});
  run.check("age",
            [&] {
              TD expected = reshape(matmul(softmax(age_logits, -1), centers), {2});
              return age_loss(age_logits, expected, {23.0, 61.0}, 80.0);
            },
            {{"logits", age_logits}}, 0);
  return run.finish();
}

GradCheckModuleResult model_module(const GradCheckSuiteOptions& opts) {
  ModuleRun run("model", opts);
  ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.encoder_channels = {4, 4, 8, 8};
  cfg.decoder.attention = {16, 2};
  cfg.decoder.num_layers = 2;
  cfg.heads.hidden = 8;
  cfg.heads.embed_dim = 4;
  cfg.heads.num_identities = 4;
  cfg.heads.heatmap_side = 4;
  FaceXFormer<double> model(cfg);
  model.initialize(opts.seed + 11);
  Rng rng(opts.seed + 12);
  perturb_non_weights(model.params(), rng);

  DatasetMap ds;
  for (Task t : kAllTasks) ds[t] = generate_dataset(cfg.data_spec(), t, 1, opts.seed + 13);
  TaskBatch batch;
  for (const auto& [t, samples] : ds) batch.samples.push_back(&samples[0]);
  const TaskSelection sel = batch.selection();
  TD pixels = batch.images<double>();
  TD input(pixels.shape(), std::vector<double>(pixels.data().begin(), pixels.data().end()), true);

  Inputs in = model.params().named();
  in.emplace_back("pixels", input);
  run.check("joint_loss",
            [&] {
              const auto preds = model.forward(input, sel);
              return joint_loss(task_losses(model, batch, preds, MarginConfig{}), LossWeights{}).total;
            },
            in, opts.model_elements_per_tensor, opts.model_step);
  return run.finish();
}

}  // namespace

std::vector<GradCheckModuleResult> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  std::vector<GradCheckModuleResult> out;
  for (auto* module : {ops_module, nn_module, encoder_module, decoder_module, heads_module, losses_module, model_module}) {
    const auto t0 = std::chrono::steady_clock::now();
    out.push_back(module(options));
    out.back().seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

}  // namespace fxf
