#include "fxf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "fxf/error.hpp"

namespace fxf {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (fxf::numel(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(1), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::size_t n = fxf::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::size(int axis) const {
  int rank = static_cast<int>(dim());
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data, false);
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
std::size_t Tape<T>::record(std::string op, std::vector<std::shared_ptr<TensorNode<T>>> inputs,
                            const std::shared_ptr<TensorNode<T>>& output, BackwardFn<T> fn) {
  std::size_t id = next_id_++;
  output->node_id = id;
  entries_.push_back(Entry{id, std::move(op), std::move(inputs), output, std::move(fn)});
  return id;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  visited_.clear();
  auto& node = *loss.node();
  if (!node.node_id) {
    if (!node.requires_grad) throw std::logic_error("backward(): loss is not on the tape");
    detail::grad_buffer(node)[0] += T(1);
    return;
  }
  std::size_t loss_id = *node.node_id;
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.id == loss_id; });
  if (it == entries_.end()) throw std::logic_error("backward(): loss is not on the current tape");

  detail::grad_buffer(node)[0] += T(1);
  for (auto e = std::make_reverse_iterator(it + 1); e != entries_.rend(); ++e) {
    if (e->output->grad.empty()) continue;
    visited_.push_back(e->id);
    e->backward(std::span<const T>(e->output->grad));
  }
  reset();
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

namespace detail {

template <typename T>
std::span<T> grad_buffer(TensorNode<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
  return node.grad;
}

template <typename T>
Tensor<T> record_op(const char* name, const std::vector<Tensor<T>>& inputs, Tensor<T> out,
                    BackwardFn<T> fn) {
  if (!grad_enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  nodes.reserve(inputs.size());
  for (const auto& t : inputs) nodes.push_back(t.node());
  out.set_requires_grad(true);
  Tape<T>::current().record(name, std::move(nodes), out.node(), std::move(fn));
  return out;
}

template <typename T>
Tensor<T> record_op(const char* name, std::initializer_list<Tensor<T>> inputs, Tensor<T> out,
                    BackwardFn<T> fn) {
  return record_op<T>(name, std::vector<Tensor<T>>(inputs), std::move(out), std::move(fn));
}

}  // namespace detail

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (spare_normal_) {
    double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                        std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return draw % n;
}

#define FXF_INSTANTIATE(T)                                                                    \
  template class Tensor<T>;                                                                   \
  template class Tape<T>;                                                                     \
  template void backward<T>(const Tensor<T>&);                                                \
  template std::span<T> detail::grad_buffer<T>(TensorNode<T>&);                               \
  template Tensor<T> detail::record_op<T>(const char*, const std::vector<Tensor<T>>&,         \
                                          Tensor<T>, BackwardFn<T>);                          \
  template Tensor<T> detail::record_op<T>(const char*, std::initializer_list<Tensor<T>>,      \
                                          Tensor<T>, BackwardFn<T>);

FXF_INSTANTIATE(float)
FXF_INSTANTIATE(double)

}  // namespace fxf
