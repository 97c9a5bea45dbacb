#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// Every op output that depends on a tensor requiring gradients becomes a graph
// node holding its inputs and a backward closure. Nodes carry a per-thread
// creation sequence number; backward() visits the ancestors of the root in
// strictly decreasing sequence order, which is the exact reverse of the order
// in which they were recorded. That makes gradients bit-reproducible.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace crt::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

namespace detail {

inline std::uint64_t next_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool is_grad_enabled() { return detail::grad_enabled(); }

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) throw std::invalid_argument("tensor: zero extent in shape " + ad::to_string(shape));
    }
    if (ad::numel(shape) != data.size()) {
      throw std::invalid_argument("tensor: shape " + ad::to_string(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(0), requires_grad); }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = ad::numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::ptrdiff_t axis) const { return node_->shape[normalize_axis(axis)]; }

  std::span<const T> data() const { return node_->data; }
  // Only leaves (parameters, inputs) are mutated in place, by optimizers and initializers.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor of shape " + ad::to_string(shape()) + " is not scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no graph history and no gradient requirement.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  std::size_t normalize_axis(std::ptrdiff_t axis) const {
    const auto r = static_cast<std::ptrdiff_t>(rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
      throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " + ad::to_string(shape()));
    }
    return static_cast<std::size_t>(axis);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op output; records it in the graph only when recording is enabled
/// and at least one input requires gradients.
template <class T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  const bool track = is_grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  auto& node = *out.node();
  node.op = op;
  if (track) {
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across calls
/// until zero_grad(); intermediate gradients are released once consumed.
template <class T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) throw std::invalid_argument("backward: root does not require grad");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  root.node()->grad_buffer()[0] += T(1);
  for (Node<T>* n : order) {
    if (n->is_leaf()) continue;
    if (!n->grad.empty()) n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace crt::ad
