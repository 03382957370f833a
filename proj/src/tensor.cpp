#include "s2slab/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

namespace s2slab {

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign(shape_numel(shape), 0.0);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::constant(const Shape& shape, std::vector<double> data) {
  if (data.size() != shape_numel(shape))
    throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::param(const std::string& name, const Shape& shape, std::vector<double> data) {
  Tensor t = constant(shape, std::move(data));
  t.node()->requires_grad = true;
  t.node()->name = name;
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::runtime_error("tensor: item() on non-scalar shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::clone(const std::string& name) const {
  Tensor t = constant(shape(), value());
  t.node()->requires_grad = node_->requires_grad;
  t.node()->name = name.empty() ? node_->name : name;
  return t;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::runtime_error("backward: undefined tensor");
  if (loss.numel() != 1)
    throw std::runtime_error("backward: loss must be scalar, got shape " +
                             shape_str(loss.shape()));

  // Post-order DFS: inputs appear before consumers, then walk in reverse.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop();
}

}  // namespace s2slab
