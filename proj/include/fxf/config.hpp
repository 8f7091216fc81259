#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fxf/model.hpp"
#include "fxf/train.hpp"

namespace fxf {

/// Everything a CLI run needs. Read from a plain-text document of
/// `key = value` lines; `#` starts a comment. See schema_keys() for the
/// accepted keys.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::vector<Task> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::size_t train_samples = 64;  // per task
  std::size_t eval_samples = 32;   // per task
  std::size_t eval_batch = 16;
  std::uint64_t data_seed = 1;
  std::uint64_t init_seed = 0;
  std::string out_dir = "run";
  bool augmentation = false;  // reserved; must stay false

  void validate() const;
};

/// Accepted keys in canonical order.
const std::vector<std::string>& schema_keys();

/// Parses a config document over the defaults. Throws ConfigError naming the
/// key (or line) for unknown keys, malformed values and duplicates.
RunConfig parse_config(std::string_view text);

/// Reads and parses a file; ConfigError if it cannot be opened.
RunConfig load_config(const std::string& path);

/// Canonical document listing every key; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

/// Canonical text of the architecture keys only.
std::string model_text(const ModelConfig& cfg);

/// 64-bit FNV-1a of model_text; stored in checkpoints.
std::uint64_t config_digest(const ModelConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace fxf
