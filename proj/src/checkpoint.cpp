#include "fxf/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fxf/config.hpp"
#include "fxf/error.hpp"

namespace fxf {

namespace {

constexpr char kMagic[4] = {'F', 'X', 'F', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U le() {
    auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(ckpt.version);
  w.le<std::uint64_t>(ckpt.digest);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    if (r.values.size() != numel(r.shape)) throw CheckpointError("record " + r.name + " size does not match its shape");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.le<std::uint64_t>(d);
    for (float v : r.values) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  w.le<std::uint32_t>(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  if (bytes.size() < 4 + 4 + 8 + 4 + 4) throw CheckpointError("checkpoint is truncated");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (tail.le<std::uint32_t>() != crc32_of(body)) throw CheckpointError("checkpoint CRC mismatch");

  Reader r(body);
  r.take(4);
  Checkpoint ckpt;
  ckpt.version = r.le<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.digest = r.le<std::uint64_t>();
  const std::uint32_t count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint::Record rec;
    const auto name = r.take(r.le<std::uint32_t>());
    rec.name.assign(name.begin(), name.end());
    const std::uint32_t rank = r.le<std::uint32_t>();
    if (rank > 8) throw CheckpointError("record " + rec.name + " has implausible rank");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
      n *= rec.shape.back();
    }
    if (n > r.remaining() / 4) throw CheckpointError("checkpoint is truncated");
    rec.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) rec.values.push_back(std::bit_cast<float>(r.le<std::uint32_t>()));
    ckpt.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint has trailing bytes");
  return ckpt;
}

template <typename T>
Checkpoint snapshot(const FaceXFormer<T>& model) {
  Checkpoint ckpt;
  ckpt.digest = config_digest(model.config());
  for (const auto& e : model.params().entries()) {
    Checkpoint::Record rec{e.name, e.tensor.shape(), {}};
    for (T v : e.tensor.data()) rec.values.push_back(static_cast<float>(v));
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

template <typename T>
void restore(FaceXFormer<T>& model, const Checkpoint& ckpt) {
  if (ckpt.digest != config_digest(model.config())) {
    throw CheckpointError("checkpoint was written for a different model configuration");
  }
  const auto& entries = model.params().entries();
  if (entries.size() != ckpt.records.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.records.size()) + " tensors, model has " +
                          std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& rec = ckpt.records[i];
    if (rec.name != entries[i].name || rec.shape != entries[i].tensor.shape()) {
      throw CheckpointError("checkpoint record " + rec.name + " " + to_string(rec.shape) + " does not match parameter " +
                            entries[i].name + " " + to_string(entries[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<T> p = entries[i].tensor;
    auto dst = p.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(ckpt.records[i].values[k]);
  }
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template Checkpoint snapshot<float>(const FaceXFormer<float>&);
template Checkpoint snapshot<double>(const FaceXFormer<double>&);
template void restore<float>(FaceXFormer<float>&, const Checkpoint&);
template void restore<double>(FaceXFormer<double>&, const Checkpoint&);

}  // namespace fxf
