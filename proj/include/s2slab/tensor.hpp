#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "s2slab/rng.hpp"

namespace s2slab {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One vertex of the reverse-mode graph. `parents` are the op inputs; `backprop`
// spreads this vertex's grad into the parents (allocating their grad buffers
// on first touch). Scalars use shape {1}.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;  // parameter name, or op label for intermediates
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;

  size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Cheap value-semantic handle; ops build a fresh graph every forward pass.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor constant(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor param(const std::string& name, const Shape& shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t numel() const { return node_->numel(); }
  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  void rename(const std::string& name) { node_->name = name; }
  double item() const;
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  // Detached deep copy (fresh leaf holding the same values).
  Tensor clone(const std::string& name = "") const;

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar loss. Every requires-grad leaf reachable
// from `loss` receives dLoss/dLeaf; leaves outside the graph keep their
// (zeroed) buffers untouched.
void backward(const Tensor& loss);

// ---------------------------------------------------------------- operations

Tensor add(const Tensor& a, const Tensor& b);  // equal shapes, or b = [last] / [1]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, equal shapes
Tensor scale(const Tensor& a, double c);

// a [..., k] x b [k, n]  (a flattened over leading dims), or batched
// a [B.., m, k] x b [B.., k, n] with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a, size_t d0, size_t d1);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, size_t axis);
Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len);

// table [V, d], ids shaped ids_shape -> [ids_shape..., d]
Tensor embedding(const Tensor& table, const std::vector<int32_t>& ids,
                 const Shape& ids_shape);

Tensor softmax(const Tensor& a, size_t axis);
Tensor log_softmax(const Tensor& a, size_t axis);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation

// Normalizes the last axis; gain/bias are rank-1 [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum(const Tensor& a, size_t axis);
Tensor mean(const Tensor& a, size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Replaces positions where mask != 0 by `v`; grads flow only where mask == 0.
Tensor masked_fill(const Tensor& a, const Tensor& mask, double v);

// Rows of [n, d] divided by (norm + 1e-12).
Tensor row_normalize(const Tensor& a);

// Row-wise cosine similarity of two [n, d] tensors -> [n]; eps 1e-12 on norms.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Picks one entry along the last axis per leading position -> shape[:-1].
Tensor pick(const Tensor& a, const std::vector<int32_t>& ids);

// h [B, T, d], one time index per batch row -> [B, d].
Tensor select_time(const Tensor& h, const std::vector<size_t>& t);

// Mean over rows where include != 0 (constant [B, T] mask) -> [B, d].
// A batch row with no included positions is an error.
Tensor masked_mean_rows(const Tensor& h, const std::vector<uint8_t>& include);

// Inverted-scale dropout; pass-through when rate == 0.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

}  // namespace s2slab
