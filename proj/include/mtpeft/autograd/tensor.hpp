#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mtpeft/error.hpp"

namespace mtpeft::ag {

using Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatMap = Eigen::Map<RowMat<Scalar>>;

template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMat<Scalar>>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

// One vertex of the reverse-mode graph. Values are dense row-major; grad is empty
// until something is accumulated into it.
template <typename Scalar>
struct Node {
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  // Zero-initialised on first use. Never call on a node without requires_grad.
  Vec<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vec<Scalar>::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Tensor(Shape shape, Vec<Scalar> data, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    if (ag::numel(shape) != data.size()) {
      throw ShapeError("tensor", shape, Shape{data.size()}, "data length does not match shape");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = ag::numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Zero(n), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar fill, bool requires_grad = false) {
    const Index n = ag::numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Constant(n, fill), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return Tensor(Shape{}, Vec<Scalar>::Constant(1, v), requires_grad);
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<Scalar>> rows, bool requires_grad = false) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    Vec<Scalar> data(r * c);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw ShapeError("from_rows", Shape{r, c}, Shape{Index(row.size())});
      for (Scalar v : row) data[i++] = v;
    }
    return Tensor(Shape{r, c}, std::move(data), requires_grad);
  }

  static Tensor from_vector(std::initializer_list<Scalar> values, bool requires_grad = false) {
    Vec<Scalar> data(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data[i++] = v;
    Shape shape{data.size()};
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index numel() const { return node_->value.size(); }
  Index dim(Index axis) const {
    const Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ValueError("dim: axis out of range for shape " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }

  const Vec<Scalar>& value() const { return node_->value; }
  // Direct write access for optimizers and checkpoint loading. Never use on a
  // tensor whose graph is still pending backward.
  Vec<Scalar>& mutable_value() { return node_->value; }

  Scalar item() const {
    if (numel() != 1) throw ShapeError("item", shape(), Shape{}, "tensor is not a scalar");
    return node_->value[0];
  }

  Scalar operator[](Index i) const { return node_->value[i]; }

  // [product of leading dims] x [last dim] view of the data.
  ConstMatMap<Scalar> matrix() const {
    const Index cols = rank() == 0 ? 1 : node_->shape.back();
    const Index rows = cols == 0 ? 0 : numel() / cols;
    return ConstMatMap<Scalar>(node_->value.data(), rows, cols);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    if (!flag) node_->grad.resize(0);
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->value.size() > 0; }
  // Zeros when nothing has been accumulated.
  Vec<Scalar> grad() const {
    if (has_grad()) return node_->grad;
    return Vec<Scalar>::Zero(numel());
  }
  void zero_grad() { node_->grad.resize(0); }

  Tensor detach() const { return Tensor(shape(), value(), false); }

  // Reverse-mode sweep from this scalar. Leaf grads accumulate across calls;
  // interior grads are scratch and are released afterwards.
  void backward() const;

 private:
  NodePtr node_;
};

namespace detail {

template <typename Scalar>
std::vector<Node<Scalar>*> topo_order(Node<Scalar>* root) {
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

// Builds the result node of an op. The backward closure is kept only when some
// input needs gradients, so frozen-only subgraphs hold no references.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Vec<Scalar> value, std::vector<Tensor<Scalar>> inputs, const char* op,
                           std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const auto& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

}  // namespace detail

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (numel() != 1) throw ShapeError("backward", shape(), Shape{}, "root must be a scalar");
  if (!requires_grad()) return;
  Node<Scalar>* root = node_.get();
  auto order = detail::topo_order(root);
  for (Node<Scalar>* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
  if (root->is_leaf()) {
    root->grad_buffer()[0] += Scalar(1);
    return;
  }
  root->grad_buffer()[0] = Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->is_leaf()) continue;
    if (n->grad.size() == n->value.size()) n->backward(*n);
    n->grad.resize(0);
  }
}

}  // namespace mtpeft::ag
