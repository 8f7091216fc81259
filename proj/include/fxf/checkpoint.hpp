#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fxf/model.hpp"

namespace fxf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian layout:
///   "FXF1" | u32 version | u64 config digest | u32 record count |
///   per record: u32 name length, name bytes, u32 rank, u64 dims[rank],
///               f32 values[prod(dims)] |
///   u32 CRC32 of every preceding byte
struct Checkpoint {
  struct Record {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };

  std::uint32_t version = kCheckpointVersion;
  std::uint64_t digest = 0;
  std::vector<Record> records;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

/// Throws CheckpointError on wrong magic, unsupported version, truncation,
/// trailing bytes or CRC mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Parameters in registry order, rounded to f32.
template <typename T>
Checkpoint snapshot(const FaceXFormer<T>& model);

/// Copies the records into the model. Throws CheckpointError if the digest
/// differs from the model's config digest or a record name or shape does not
/// match the registry.
template <typename T>
void restore(FaceXFormer<T>& model, const Checkpoint& ckpt);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

template <typename T>
void save_checkpoint(const FaceXFormer<T>& model, const std::string& path) {
  write_checkpoint(path, snapshot(model));
}

template <typename T>
void load_checkpoint(FaceXFormer<T>& model, const std::string& path) {
  restore(model, read_checkpoint(path));
}

}  // namespace fxf
