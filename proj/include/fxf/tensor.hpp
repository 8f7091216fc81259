#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fxf {

/// Row-major extents. A scalar is represented as shape {1}.
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::optional<std::size_t> node_id;
};

/// Dense row-major array with optional participation in the autograd tape.
///
/// A Tensor is a cheap handle: copies share storage. Values are treated as
/// immutable once produced by an op; only leaves (parameters) are mutated in
/// place, by initializers and optimizers through mutable_data().
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  /// Extent along `axis`; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T operator[](std::size_t flat_index) const { return node_->data[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  std::vector<T> grad() const;
  void zero_grad() { node_->grad.clear(); }
  std::optional<std::size_t> node_id() const { return node_->node_id; }

  /// Deep copy that is detached from the tape.
  Tensor clone() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
using BackwardFn = std::function<void(std::span<const T> out_grad)>;

/// Append-only record of differentiable operations for one thread.
///
/// Every recorded op gets an id larger than the ids of its inputs. backward()
/// walks the entries in strictly decreasing id order, visiting each entry whose
/// output received gradient exactly once, then resets the tape.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::size_t id;
    std::string op;
    std::vector<std::shared_ptr<TensorNode<T>>> inputs;
    std::shared_ptr<TensorNode<T>> output;
    BackwardFn<T> backward;
  };

  static Tape& current();

  std::size_t record(std::string op, std::vector<std::shared_ptr<TensorNode<T>>> inputs,
                     const std::shared_ptr<TensorNode<T>>& output, BackwardFn<T> fn);
  void backward(const Tensor<T>& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  /// Ids visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_visit_order() const { return visited_; }

 private:
  std::vector<Entry> entries_;
  std::vector<std::size_t> visited_;
  std::size_t next_id_ = 0;
};

/// Seeds every requires_grad leaf reachable from `loss` with d(loss)/d(leaf).
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Gradient buffer of `node`, allocated (zero-filled) on first use.
template <typename T>
std::span<T> grad_buffer(TensorNode<T>& node);

/// Records `out` as produced by `inputs` when any input participates in
/// autograd and recording is enabled. Returns `out` either way.
template <typename T>
Tensor<T> record_op(const char* name, std::initializer_list<Tensor<T>> inputs, Tensor<T> out,
                    BackwardFn<T> fn);
template <typename T>
Tensor<T> record_op(const char* name, const std::vector<Tensor<T>>& inputs, Tensor<T> out,
                    BackwardFn<T> fn);

}  // namespace detail

/// Deterministic random source. Draws are derived from the raw 64-bit output
/// of mt19937_64 with our own conversions, so sequences are identical across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename U>
  void shuffle(std::vector<U>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

}  // namespace fxf
