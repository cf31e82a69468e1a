#include "ufe/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ufe {

namespace {
thread_local bool t_grad_enabled = true;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data.assign(shape_numel(shape), value);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <class T>
BasicTensor<T> BasicTensor<T>::from(const Shape& shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node().data[0];
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(shape(), node().data, false);
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return from(shape(), node().data, node().requires_grad);
}

template <class T>
Graph<T> build_graph(const BasicTensor<T>& root) {
  Graph<T> graph;
  std::unordered_set<const Node<T>*> visited;
  // Iterative post-order DFS; parents are visited in declaration order.
  struct Frame {
    Node<T>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  Node<T>* start = root.ptr().get();
  if (!start || !start->requires_grad) return graph;
  stack.push_back({start, 0});
  visited.insert(start);
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      Node<T>* parent = top.node->parents[top.next_parent++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      graph.order.push_back(top.node);
      stack.pop_back();
    }
  }
  return graph;
}

template <class T>
void backward(BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::logic_error("backward() on a tensor without graph");
  Graph<T> graph = build_graph(loss);
  Node<T>& root = loss.node();
  root.ensure_grad();
  root.grad[0] += T(1);
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  for (Node<T>* node : graph.order) {
    if (!node->parents.empty()) {
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }
}

template <class T>
BasicTensor<T> make_op_result(Shape shape, std::vector<T> data,
                              const std::vector<BasicTensor<T>>& inputs,
                              std::function<void(Node<T>&)> backward_fn, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const BasicTensor<T>& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& t : inputs) node->parents.push_back(t.ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return BasicTensor<T>(std::move(node));
}

template <class T>
BasicTensor<T> make_op_result(Shape shape, std::vector<T> data,
                              std::initializer_list<BasicTensor<T>> inputs,
                              std::function<void(Node<T>&)> backward_fn, const char* op) {
  return make_op_result<T>(std::move(shape), std::move(data), std::vector<BasicTensor<T>>(inputs),
                           std::move(backward_fn), op);
}

#define UFE_INSTANTIATE(T)                                                                     \
  template class BasicTensor<T>;                                                               \
  template Graph<T> build_graph<T>(const BasicTensor<T>&);                                     \
  template void backward<T>(BasicTensor<T>&);                                                  \
  template BasicTensor<T> make_op_result<T>(Shape, std::vector<T>,                            \
                                            const std::vector<BasicTensor<T>>&,                \
                                            std::function<void(Node<T>&)>, const char*);       \
  template BasicTensor<T> make_op_result<T>(Shape, std::vector<T>,                            \
                                            std::initializer_list<BasicTensor<T>>,             \
                                            std::function<void(Node<T>&)>, const char*);

UFE_INSTANTIATE(float)
UFE_INSTANTIATE(double)

#undef UFE_INSTANTIATE

}  // namespace ufe
