// fxf: train, evaluate, profile, gradient-check and inspect FaceXFormer models.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fxf/checkpoint.hpp"
#include "fxf/config.hpp"
#include "fxf/error.hpp"
#include "fxf/gradcheck_suite.hpp"
#include "fxf/metrics.hpp"
#include "fxf/profile.hpp"
#include "fxf/train.hpp"

namespace fs = std::filesystem;
using namespace fxf;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode = "f32";
  std::string ablation;
  std::string checkpoint;
  std::string split = "eval";
  std::size_t reps = 30;
  std::size_t warmup = 5;
  std::size_t batch = 1;
};

// Eval samples come from a stream disjoint from the training stream.
constexpr std::uint64_t kEvalSeedOffset = 0x9e3779b97f4a7c15ull;

RunConfig resolve(const Options& opt) {
  RunConfig cfg;
  if (!opt.config.empty()) {
    cfg = load_config(opt.config);
  } else if (!opt.checkpoint.empty()) {
    // a run directory holds the resolved config beside the checkpoint
    const fs::path beside = fs::path(opt.checkpoint).parent_path() / "config.txt";
    if (fs::exists(beside)) cfg = load_config(beside.string());
  }
  if (opt.seed) {
    cfg.init_seed = *opt.seed;
    cfg.train.seed = *opt.seed;
  }
  if (!opt.out.empty()) cfg.out_dir = opt.out;
  if (!opt.ablation.empty()) cfg.model.decoder.mode = parse_ablation(opt.ablation);
  cfg.validate();
  return cfg;
}

DatasetMap make_datasets(const RunConfig& cfg, bool eval_split) {
  DatasetMap ds;
  const std::size_t n = eval_split ? cfg.eval_samples : cfg.train_samples;
  const std::uint64_t seed = eval_split ? cfg.data_seed + kEvalSeedOffset : cfg.data_seed;
  for (Task t : cfg.tasks) ds[t] = generate_dataset(cfg.model.data_spec(), t, n, seed);
  return ds;
}

void print_metrics(const std::vector<TaskMetrics>& report) {
  std::printf("%-12s %-18s %12s\n", "task", "metric", "value");
  for (const auto& tm : report)
    for (const auto& [name, value] : tm.values)
      std::printf("%-12s %-18s %12.4f\n", std::string(task_name(tm.task)).c_str(), name.c_str(), value);
}

template <typename T>
int run_train(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);

  FaceXFormer<T> model(cfg.model);
  model.initialize(cfg.init_seed);
  const DatasetMap data = make_datasets(cfg, false);

  std::printf("training %zu tasks x %zu samples, batch %zu, %s\n", cfg.tasks.size(), cfg.train_samples,
              cfg.train.batch_size, opt.mode.c_str());
  const auto t0 = std::chrono::steady_clock::now();
  const auto log = train(model, data, cfg.train, [](const StepRecord& r) {
    if (r.step % 10 == 0) std::printf("step %5zu  epoch %3zu  lr %.2e  loss %.6f\n", r.step, r.epoch, r.lr, r.total);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!log.empty())
    std::printf("done: %zu steps in %.1f s, loss %.6f -> %.6f\n", log.size(), secs, log.front().total, log.back().total);

  save_checkpoint(model, (out / "model.ckpt").string());
  std::ofstream metrics(out / "metrics.log");
  write_metrics_log(metrics, log);
  std::ofstream(out / "config.txt") << to_text(cfg);
  std::printf("wrote %s, %s, %s\n", (out / "model.ckpt").c_str(), (out / "metrics.log").c_str(),
              (out / "config.txt").c_str());
  return 0;
}

template <typename T>
int run_eval(const Options& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const RunConfig cfg = resolve(opt);
  FaceXFormer<T> model(cfg.model);
  load_checkpoint(model, opt.checkpoint);
  print_metrics(evaluate(model, make_datasets(cfg, opt.split == "eval"), cfg.eval_batch));
  return 0;
}

template <typename T>
int run_profile(const Options& opt) {
  const RunConfig cfg = resolve(opt);
  FaceXFormer<T> model(cfg.model);
  if (opt.checkpoint.empty())
    model.initialize(cfg.init_seed);
  else
    load_checkpoint(model, opt.checkpoint);

  const Geometry geo{opt.batch, cfg.model.height, cfg.model.width};
  const FlopsReport flops = count_flops(cfg.model, geo);
  const ParamCounts pc = count_params(model);
  const LatencyReport lat = bench_latency(model, geo, {opt.reps, opt.warmup});

  std::cout << format_flops(flops) << '\n';
  std::printf("params  backbone %zu  decoder %zu  heads %zu  total %zu\n\n", pc.backbone, pc.decoder, pc.heads,
              pc.total());
  std::cout << format_latency(lat);

  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  std::ofstream records(out / "profile.jsonl");
  write_flops_records(records, flops);
  write_latency_records(records, lat);
  std::printf("wrote %s\n", (out / "profile.jsonl").c_str());
  return 0;
}

int run_gradcheck(const Options& opt) {
  GradCheckSuiteOptions gopt;
  if (opt.seed) gopt.seed = *opt.seed;
  bool ok = true;
  std::printf("%-10s %8s %14s %8s  %s\n", "module", "checked", "worst_rel_err", "seconds", "result");
  for (const auto& r : run_gradcheck_suite(gopt)) {
    std::printf("%-10s %8zu %14.3e %8.2f  %s\n", r.module.c_str(), r.checked, r.worst, r.seconds,
                r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("rtol %.0e: %s\n", gopt.rtol, ok ? "all modules pass" : "failed");
  return ok ? 0 : 1;
}

int run_inspect(const Options& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("inspect needs --checkpoint");
  const Checkpoint ckpt = read_checkpoint(opt.checkpoint);
  std::size_t total = 0;
  for (const auto& r : ckpt.records) total += r.values.size();
  std::printf("file     %s\nversion  %u\ndigest   %016llx\nrecords  %zu\nvalues   %zu\n", opt.checkpoint.c_str(),
              ckpt.version, static_cast<unsigned long long>(ckpt.digest), ckpt.records.size(), total);
  if (!opt.config.empty()) {
    const RunConfig cfg = resolve(opt);
    std::printf("config   %s\n", config_digest(cfg.model) == ckpt.digest ? "matches" : "does not match");
  }
  for (const auto& r : ckpt.records) {
    std::ostringstream shape;
    for (std::size_t i = 0; i < r.shape.size(); ++i) shape << (i ? "x" : "") << r.shape[i];
    std::printf("  %-48s %s\n", r.name.c_str(), shape.str().c_str());
  }
  return 0;
}

template <typename Fn32, typename Fn64>
int dispatch(const Options& opt, Fn32 f32, Fn64 f64) {
  return opt.mode == "f64" ? f64(opt) : f32(opt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FaceXFormer multi-task face analysis"};
  app.require_subcommand(1);
  Options opt;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "overrides model.seed and train.seed");
    sub->add_option("--out", opt.out, "output directory (paths.out_dir)");
    sub->add_option("--mode", opt.mode, "arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--ablation", opt.ablation, "decoder variant")
        ->check(CLI::IsMember({"no-cross-attn", "standard-cross-attn", "bidirectional"}));
  };

  auto* train_cmd = app.add_subcommand("train", "train on the synthetic suite, write checkpoint and log");
  add_common(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "print the metrics table of a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", opt.split, "dataset split")->check(CLI::IsMember({"train", "eval"}));

  auto* profile_cmd = app.add_subcommand("profile", "FLOPs and latency report");
  add_common(profile_cmd);
  profile_cmd->add_option("--checkpoint", opt.checkpoint, "weights to load")->check(CLI::ExistingFile);
  profile_cmd->add_option("--reps", opt.reps, "timed repetitions (>= 30)");
  profile_cmd->add_option("--warmup", opt.warmup, "warmup passes (>= 5)");
  profile_cmd->add_option("--batch", opt.batch, "batch size");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite in f64");
  grad_cmd->add_option("--seed", opt.seed, "suite seed");

  auto* inspect_cmd = app.add_subcommand("inspect", "dump checkpoint metadata");
  inspect_cmd->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--config", opt.config, "compare the digest with this config")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return dispatch(opt, run_train<float>, run_train<double>);
    if (*eval_cmd) return dispatch(opt, run_eval<float>, run_eval<double>);
    if (*profile_cmd) return dispatch(opt, run_profile<float>, run_profile<double>);
    if (*grad_cmd) return run_gradcheck(opt);
    if (*inspect_cmd) return run_inspect(opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fxf: error: %s\n", e.what());
    return 2;
  }
  return 0;
}
