#include "fxf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "fxf/error.hpp"

namespace fxf {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("config key " + std::string(key) + ": expected a non-negative integer, got '" + std::string(v) +
                      "'");
  }
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(parse_u64(key, v)); }

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("config key " + std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key " + std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <typename Seq, typename F>
std::string join(const Seq& items, F&& f) {
  std::string out;
  for (const auto& x : items) {
    if (!out.empty()) out += ",";
    out += f(x);
  }
  return out;
}

struct Field {
  std::string key;
  bool model;  // part of the architecture digest
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FXF_SIZE(name, member, is_model)                                                                 \
  Field {                                                                                                \
    name, is_model, [](RunConfig& c, std::string_view v) { c.member = parse_size(name, v); },            \
        [](const RunConfig& c) { return std::to_string(c.member); }                                      \
  }
#define FXF_DOUBLE(name, member, is_model)                                                               \
  Field {                                                                                                \
    name, is_model, [](RunConfig& c, std::string_view v) { c.member = parse_double(name, v); },          \
        [](const RunConfig& c) { return fmt(c.member); }                                                 \
  }
#define FXF_U64(name, member)                                                                            \
  Field {                                                                                                \
    name, false, [](RunConfig& c, std::string_view v) { c.member = parse_u64(name, v); },                \
        [](const RunConfig& c) { return std::to_string(c.member); }                                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      FXF_SIZE("image.height", model.height, true),
      FXF_SIZE("image.width", model.width, true),
      Field{"encoder.channels", true,
            [](RunConfig& c, std::string_view v) {
              auto parts = split_list(v);
              if (parts.size() != kNumScales) throw ConfigError("config key encoder.channels: expected 4 widths");
              for (std::size_t i = 0; i < kNumScales; ++i) c.model.encoder_channels[i] = parse_size("encoder.channels", parts[i]);
            },
            [](const RunConfig& c) { return join(c.model.encoder_channels, [](std::size_t x) { return std::to_string(x); }); }},
      FXF_SIZE("model.dim", model.decoder.attention.model_dim, true),
      FXF_SIZE("model.heads", model.decoder.attention.num_heads, true),
      FXF_SIZE("model.layers", model.decoder.num_layers, true),
      FXF_SIZE("model.ffn_mult", model.decoder.ffn_mult, true),
      Field{"model.ablation", true,
            [](RunConfig& c, std::string_view v) { c.model.decoder.mode = parse_ablation(v); },
            [](const RunConfig& c) { return std::string(ablation_name(c.model.decoder.mode)); }},
      Field{"model.refine", true,
            [](RunConfig& c, std::string_view v) { c.model.refine = parse_bool("model.refine", v); },
            [](const RunConfig& c) { return std::string(c.model.refine ? "true" : "false"); }},
      FXF_SIZE("head.seg_classes", model.heads.seg_classes, true),
      FXF_SIZE("head.age_bins", model.heads.age_bins, true),
      FXF_DOUBLE("head.max_age", model.heads.max_age, true),
      FXF_SIZE("head.races", model.heads.races, true),
      FXF_SIZE("head.expressions", model.heads.expressions, true),
      FXF_SIZE("head.visibility", model.heads.visibility, true),
      FXF_SIZE("head.attributes", model.heads.attributes, true),
      FXF_SIZE("head.embed_dim", model.heads.embed_dim, true),
      FXF_SIZE("head.identities", model.heads.num_identities, true),
      FXF_SIZE("head.heatmap_side", model.heads.heatmap_side, true),
      FXF_SIZE("head.hidden", model.heads.hidden, true),
      FXF_DOUBLE("loss.seg", train.weights.seg, false),
      FXF_DOUBLE("loss.lnd", train.weights.lnd, false),
      FXF_DOUBLE("loss.hpe", train.weights.hpe, false),
      FXF_DOUBLE("loss.attr", train.weights.attr, false),
      FXF_DOUBLE("loss.age", train.weights.age, false),
      FXF_DOUBLE("loss.gender_race", train.weights.gender_race, false),
      FXF_DOUBLE("loss.exp", train.weights.exp, false),
      FXF_DOUBLE("loss.fr", train.weights.fr, false),
      FXF_DOUBLE("loss.vis", train.weights.vis, false),
      FXF_DOUBLE("loss.arc_scale", train.margin.scale, false),
      FXF_DOUBLE("loss.arc_margin", train.margin.margin, false),
      FXF_SIZE("train.batch_size", train.batch_size, false),
      FXF_SIZE("train.epochs", train.epochs, false),
      FXF_SIZE("train.max_steps", train.max_steps, false),
      FXF_DOUBLE("train.lr", train.lr, false),
      Field{"train.decay_epochs", false,
            [](RunConfig& c, std::string_view v) {
              c.train.decay_epochs.clear();
              if (v.empty()) return;
              for (auto p : split_list(v)) c.train.decay_epochs.push_back(parse_size("train.decay_epochs", p));
            },
            [](const RunConfig& c) { return join(c.train.decay_epochs, [](std::size_t x) { return std::to_string(x); }); }},
      FXF_DOUBLE("train.weight_decay", train.optimizer.weight_decay, false),
      FXF_DOUBLE("train.beta1", train.optimizer.beta1, false),
      FXF_DOUBLE("train.beta2", train.optimizer.beta2, false),
      FXF_DOUBLE("train.eps", train.optimizer.eps, false),
      FXF_U64("train.seed", train.seed),
      FXF_U64("model.seed", init_seed),
      Field{"data.tasks", false,
            [](RunConfig& c, std::string_view v) {
              c.tasks.clear();
              for (auto p : split_list(v)) {
                auto t = parse_task(p);
                if (!t) throw ConfigError("config key data.tasks: unknown task '" + std::string(p) + "'");
                c.tasks.push_back(*t);
              }
            },
            [](const RunConfig& c) { return join(c.tasks, [](Task t) { return std::string(task_name(t)); }); }},
      FXF_SIZE("data.train_samples", train_samples, false),
      FXF_SIZE("data.eval_samples", eval_samples, false),
      FXF_U64("data.seed", data_seed),
      FXF_SIZE("eval.batch", eval_batch, false),
      Field{"paths.out_dir", false, [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
            [](const RunConfig& c) { return c.out_dir; }},
      Field{"augmentation.enabled", false,
            [](RunConfig& c, std::string_view v) { c.augmentation = parse_bool("augmentation.enabled", v); },
            [](const RunConfig& c) { return std::string(c.augmentation ? "true" : "false"); }},
  };
  return all;
}

#undef FXF_SIZE
#undef FXF_DOUBLE
#undef FXF_U64

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (tasks.empty()) throw ConfigError("data.tasks must name at least one task");
  std::set<Task> unique(tasks.begin(), tasks.end());
  if (unique.size() != tasks.size()) throw ConfigError("data.tasks lists a task twice");
  if (train_samples == 0 || eval_samples == 0) throw ConfigError("dataset sizes must be positive");
  if (eval_batch == 0) throw ConfigError("eval.batch must be positive");
  if (train.batch_size % tasks.size() != 0) {
    throw ConfigError("train.batch_size " + std::to_string(train.batch_size) + " is not divisible by the " +
                      std::to_string(tasks.size()) + " active tasks");
  }
  if (augmentation) throw ConfigError("augmentation.enabled is reserved and must be false");
}

const std::vector<std::string>& schema_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& all = fields();
    const auto it = std::find_if(all.begin(), all.end(), [&](const Field& f) { return f.key == key; });
    if (it == all.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ConfigError("config key " + std::string(key) + " set twice");
    it->set(cfg, value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string model_text(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::string out;
  for (const auto& f : fields())
    if (f.model) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_digest(const ModelConfig& cfg) { return fnv1a64(model_text(cfg)); }

}  // namespace fxf
