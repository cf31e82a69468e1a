#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major arrays.
//
// A tensor is a shared handle to a graph node. Operations executed while grad
// mode is enabled record their inputs and a backward closure on the output
// node; backward() orders the reachable nodes topologically and runs the
// closures in reverse. Graphs are not retained: backward() releases the
// closures and parent links of every interior node it visited.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ufe {

using Shape = std::vector<int>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty means "no gradient"
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false);
  static BasicTensor full(const Shape& shape, T value, bool requires_grad = false);
  static BasicTensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().data.size(); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  std::vector<T>& values() { return node().data; }
  const std::vector<T>& values() const { return node().data; }
  T item() const;
  T& operator[](std::size_t i) { return node().data[i]; }
  T operator[](std::size_t i) const { return node().data[i]; }

  bool requires_grad() const { return node().requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    node().requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() {
    node().ensure_grad();
    return node().grad;
  }
  void zero_grad() { node().grad.clear(); }
  bool is_leaf() const { return node().parents.empty(); }
  const char* op_name() const { return node().op; }

  // Same values, no graph history, no gradient requirement.
  BasicTensor detach() const;
  // Deep copy of values; keeps requires_grad but drops history and grad.
  BasicTensor clone() const;

  Node<T>& node() {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  const Node<T>& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;

// Grad mode is thread-local so independent graphs can be built on separate threads.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered nodes reachable from a root through requires_grad links.
template <class T>
struct Graph {
  std::vector<Node<T>*> order;  // producers before consumers
};

template <class T>
Graph<T> build_graph(const BasicTensor<T>& root);

// Populates grad on every requires_grad tensor reachable from `loss`.
// Gradients accumulate into existing leaf grads.
template <class T>
void backward(BasicTensor<T>& loss);

// Wraps `data` as the output of an operation. When grad mode is on and any
// input requires grad, the node records the inputs and the backward closure.
template <class T>
BasicTensor<T> make_op_result(Shape shape, std::vector<T> data,
                              std::initializer_list<BasicTensor<T>> inputs,
                              std::function<void(Node<T>&)> backward_fn, const char* op);
template <class T>
BasicTensor<T> make_op_result(Shape shape, std::vector<T> data,
                              const std::vector<BasicTensor<T>>& inputs,
                              std::function<void(Node<T>&)> backward_fn, const char* op);

// Converts values between precisions. The result is a leaf.
template <class To, class From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t, bool requires_grad = false) {
  std::vector<To> out(t.values().begin(), t.values().end());
  return BasicTensor<To>::from(t.shape(), std::move(out), requires_grad);
}

}  // namespace ufe
