#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "s2slab/tensor.hpp"

namespace s2slab {

namespace {

std::shared_ptr<Node> make_node(Shape shape, std::vector<Tensor> parents, const char* label) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(shape_numel(n->shape), 0.0);
  n->name = label;
  for (auto& p : parents) {
    if (!p.defined()) throw std::invalid_argument(std::string(label) + ": undefined input");
    if (p.requires_grad()) n->requires_grad = true;
    n->parents.push_back(p.node());
  }
  return n;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a) {
  throw std::invalid_argument(std::string(op) + ": bad shape " + shape_str(a));
}

// outer * n * inner decomposition around `axis`.
struct AxisSplit {
  size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, size_t axis, const char* op) {
  if (axis >= s.size()) shape_error(op, s);
  AxisSplit sp{1, s[axis], 1};
  for (size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

void accumulate(Node* p, const std::vector<double>& g) {
  p->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

}  // namespace

// ---------------------------------------------------------------- arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool same = sa == sb;
  bool bias = !same && sb.size() == 1 && !sa.empty() && sb[0] == sa.back();
  bool scalar_b = !same && !bias && b.numel() == 1;
  if (!same && !bias && !scalar_b) shape_error("add", sa, sb);

  auto n = make_node(sa, {a, b}, "add");
  const auto& va = a.value();
  const auto& vb = b.value();
  size_t last = sa.empty() ? 1 : sa.back();
  for (size_t i = 0; i < n->value.size(); ++i) {
    double bv = same ? vb[i] : (bias ? vb[i % last] : vb[0]);
    n->value[i] = va[i] + bv;
  }

  Node* out = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backprop = [out, pa, pb, same, bias, last]() {
    if (pa->requires_grad) accumulate(pa, out->grad);
    if (pb->requires_grad) {
      pb->ensure_grad();
      if (same) {
        for (size_t i = 0; i < out->grad.size(); ++i) pb->grad[i] += out->grad[i];
      } else if (bias) {
        for (size_t i = 0; i < out->grad.size(); ++i) pb->grad[i % last] += out->grad[i];
      } else {
        for (double g : out->grad) pb->grad[0] += g;
      }
    }
  };
  return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  auto n = make_node(a.shape(), {a, b}, "mul");
  const auto& va = a.value();
  const auto& vb = b.value();
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = va[i] * vb[i];

  Node* out = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backprop = [out, pa, pb]() {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i)
        pa->grad[i] += out->grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < out->grad.size(); ++i)
        pb->grad[i] += out->grad[i] * pa->value[i];
    }
  };
  return Tensor(n);
}

Tensor scale(const Tensor& a, double c) {
  auto n = make_node(a.shape(), {a}, "scale");
  const auto& va = a.value();
  for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = va[i] * c;
  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) pa->grad[i] += out->grad[i] * c;
  };
  return Tensor(n);
}

// ------------------------------------------------------------------- matmul

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (size_t l = 0; l < k; ++l) {
      double av = a_row[l];
      if (av == 0.0) continue;
      const double* b_row = B + l * n;
      for (size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

// C[m,n] += A[m,k] * B^T where B is [n,k]
void gemm_bt_acc(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* b_row = B + j * k;
      double acc = 0.0;
      for (size_t l = 0; l < k; ++l) acc += a_row[l] * b_row[l];
      c_row[j] += acc;
    }
  }
}

// C[k,n] += A^T * G where A is [m,k], G is [m,n]
void gemm_at_acc(const double* A, const double* G, double* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    const double* g_row = G + i * n;
    for (size_t l = 0; l < k; ++l) {
      double av = a_row[l];
      if (av == 0.0) continue;
      double* c_row = C + l * n;
      for (size_t j = 0; j < n; ++j) c_row[j] += av * g_row[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() < 2) shape_error("matmul", sa, sb);

  if (sb.size() == 2) {
    // [..., k] x [k, n] with the leading dims flattened.
    size_t k = sa.back();
    if (k != sb[0]) shape_error("matmul", sa, sb);
    size_t nn = sb[1];
    size_t m = a.numel() / k;
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(nn);

    auto n = make_node(out_shape, {a, b}, "matmul");
    gemm_acc(a.value().data(), b.value().data(), n->value.data(), m, k, nn);

    Node* out = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [out, pa, pb, m, k, nn]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        gemm_bt_acc(out->grad.data(), pb->value.data(), pa->grad.data(), m, nn, k);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        gemm_at_acc(pa->value.data(), out->grad.data(), pb->grad.data(), m, k, nn);
      }
    };
    return Tensor(n);
  }

  // Batched: [B.., m, k] x [B.., k, n]
  if (sa.size() != sb.size()) shape_error("matmul", sa, sb);
  size_t r = sa.size();
  for (size_t i = 0; i + 2 < r; ++i)
    if (sa[i] != sb[i]) shape_error("matmul", sa, sb);
  size_t m = sa[r - 2], k = sa[r - 1];
  if (sb[r - 2] != k) shape_error("matmul", sa, sb);
  size_t nn = sb[r - 1];
  size_t batch = 1;
  for (size_t i = 0; i + 2 < r; ++i) batch *= sa[i];

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(nn);

  auto n = make_node(out_shape, {a, b}, "matmul");
  for (size_t bi = 0; bi < batch; ++bi)
    gemm_acc(a.value().data() + bi * m * k, b.value().data() + bi * k * nn,
             n->value.data() + bi * m * nn, m, k, nn);

  Node* out = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backprop = [out, pa, pb, batch, m, k, nn]() {
    for (size_t bi = 0; bi < batch; ++bi) {
      const double* G = out->grad.data() + bi * m * nn;
      if (pa->requires_grad) {
        pa->ensure_grad();
        gemm_bt_acc(G, pb->value.data() + bi * k * nn, pa->grad.data() + bi * m * k, m, nn, k);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        gemm_at_acc(pa->value.data() + bi * m * k, G, pb->grad.data() + bi * k * nn, m, k, nn);
      }
    }
  };
  return Tensor(n);
}

// ------------------------------------------------------------ shape movement

Tensor transpose(const Tensor& a, size_t d0, size_t d1) {
  const Shape& s = a.shape();
  if (d0 >= s.size() || d1 >= s.size()) shape_error("transpose", s);
  Shape out_shape = s;
  std::swap(out_shape[d0], out_shape[d1]);

  auto n = make_node(out_shape, {a}, "transpose");

  size_t r = s.size();
  std::vector<size_t> in_strides(r, 1), out_strides(r, 1);
  for (size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  for (size_t i = r; i-- > 1;) out_strides[i - 1] = out_strides[i] * out_shape[i];

  // For each output linear index, the matching input index swaps d0/d1.
  auto map_index = [r, d0, d1, &out_strides, &in_strides](size_t oi, const Shape&) {
    size_t ii = 0;
    size_t rem = oi;
    for (size_t d = 0; d < r; ++d) {
      size_t c = rem / out_strides[d];
      rem %= out_strides[d];
      size_t src_dim = (d == d0) ? d1 : (d == d1) ? d0 : d;
      ii += c * in_strides[src_dim];
    }
    return ii;
  };

  std::vector<size_t> mapping(n->value.size());
  for (size_t oi = 0; oi < n->value.size(); ++oi) {
    size_t ii = map_index(oi, s);
    mapping[oi] = ii;
    n->value[oi] = a.value()[ii];
  }

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, mapping = std::move(mapping)]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t oi = 0; oi < out->grad.size(); ++oi) pa->grad[mapping[oi]] += out->grad[oi];
  };
  return Tensor(n);
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  auto n = make_node(shape, {a}, "reshape");
  n->value = a.value();
  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa]() {
    if (pa->requires_grad) accumulate(pa, out->grad);
  };
  return Tensor(n);
}

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) shape_error("concat", s0);
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    out_shape[axis] += s[axis];
  }

  auto n = make_node(out_shape, parts, "concat");
  AxisSplit sp = split_axis(out_shape, axis, "concat");
  size_t off = 0;
  std::vector<std::pair<size_t, size_t>> extents;  // (axis offset, axis len) per part
  for (const auto& p : parts) {
    size_t len = p.shape()[axis];
    extents.push_back({off, len});
    for (size_t o = 0; o < sp.outer; ++o)
      for (size_t i = 0; i < len; ++i)
        std::copy_n(p.value().data() + (o * len + i) * sp.inner, sp.inner,
                    n->value.data() + (o * sp.n + off + i) * sp.inner);
    off += len;
  }

  Node* out = n.get();
  std::vector<Node*> parent_ptrs;
  for (const auto& p : parts) parent_ptrs.push_back(p.node().get());
  n->backprop = [out, parent_ptrs, extents, sp]() {
    for (size_t pi = 0; pi < parent_ptrs.size(); ++pi) {
      Node* p = parent_ptrs[pi];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      auto [off2, len] = extents[pi];
      for (size_t o = 0; o < sp.outer; ++o)
        for (size_t i = 0; i < len; ++i) {
          const double* g = out->grad.data() + (o * sp.n + off2 + i) * sp.inner;
          double* dst = p->grad.data() + (o * len + i) * sp.inner;
          for (size_t j = 0; j < sp.inner; ++j) dst[j] += g[j];
        }
    }
  };
  return Tensor(n);
}

Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + len > s[axis]) shape_error("slice", s);
  Shape out_shape = s;
  out_shape[axis] = len;

  auto n = make_node(out_shape, {a}, "slice");
  AxisSplit sp = split_axis(s, axis, "slice");
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t i = 0; i < len; ++i)
      std::copy_n(a.value().data() + (o * sp.n + start + i) * sp.inner, sp.inner,
                  n->value.data() + (o * len + i) * sp.inner);

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, sp, start, len]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t o = 0; o < sp.outer; ++o)
      for (size_t i = 0; i < len; ++i) {
        const double* g = out->grad.data() + (o * len + i) * sp.inner;
        double* dst = pa->grad.data() + (o * sp.n + start + i) * sp.inner;
        for (size_t j = 0; j < sp.inner; ++j) dst[j] += g[j];
      }
  };
  return Tensor(n);
}

Tensor embedding(const Tensor& table, const std::vector<int32_t>& ids, const Shape& ids_shape) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) shape_error("embedding", ts);
  if (ids.size() != shape_numel(ids_shape))
    throw std::invalid_argument("embedding: ids size does not match ids_shape");
  size_t v = ts[0], d = ts[1];
  for (int32_t id : ids)
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside table of " +
                              std::to_string(v));

  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  auto n = make_node(out_shape, {table}, "embedding");
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().data() + static_cast<size_t>(ids[i]) * d, d,
                n->value.data() + i * d);

  Node* out = n.get();
  Node* pt = table.node().get();
  n->backprop = [out, pt, ids, d]() {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      const double* g = out->grad.data() + i * d;
      double* dst = pt->grad.data() + static_cast<size_t>(ids[i]) * d;
      for (size_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  };
  return Tensor(n);
}

// ------------------------------------------------------------- nonlinearity

Tensor softmax(const Tensor& a, size_t axis) {
  AxisSplit sp = split_axis(a.shape(), axis, "softmax");
  auto n = make_node(a.shape(), {a}, "softmax");
  const auto& va = a.value();
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t j = 0; j < sp.inner; ++j) {
      auto at = [&](size_t i) { return (o * sp.n + i) * sp.inner + j; };
      double mx = va[at(0)];
      for (size_t i = 1; i < sp.n; ++i) mx = std::max(mx, va[at(i)]);
      double z = 0.0;
      for (size_t i = 0; i < sp.n; ++i) z += std::exp(va[at(i)] - mx);
      for (size_t i = 0; i < sp.n; ++i) n->value[at(i)] = std::exp(va[at(i)] - mx) / z;
    }

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, sp]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t o = 0; o < sp.outer; ++o)
      for (size_t j = 0; j < sp.inner; ++j) {
        auto at = [&](size_t i) { return (o * sp.n + i) * sp.inner + j; };
        double dot = 0.0;
        for (size_t i = 0; i < sp.n; ++i) dot += out->grad[at(i)] * out->value[at(i)];
        for (size_t i = 0; i < sp.n; ++i)
          pa->grad[at(i)] += out->value[at(i)] * (out->grad[at(i)] - dot);
      }
  };
  return Tensor(n);
}

Tensor log_softmax(const Tensor& a, size_t axis) {
  AxisSplit sp = split_axis(a.shape(), axis, "log_softmax");
  auto n = make_node(a.shape(), {a}, "log_softmax");
  const auto& va = a.value();
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t j = 0; j < sp.inner; ++j) {
      auto at = [&](size_t i) { return (o * sp.n + i) * sp.inner + j; };
      double mx = va[at(0)];
      for (size_t i = 1; i < sp.n; ++i) mx = std::max(mx, va[at(i)]);
      double z = 0.0;
      for (size_t i = 0; i < sp.n; ++i) z += std::exp(va[at(i)] - mx);
      double lse = mx + std::log(z);
      for (size_t i = 0; i < sp.n; ++i) n->value[at(i)] = va[at(i)] - lse;
    }

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, sp]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t o = 0; o < sp.outer; ++o)
      for (size_t j = 0; j < sp.inner; ++j) {
        auto at = [&](size_t i) { return (o * sp.n + i) * sp.inner + j; };
        double gsum = 0.0;
        for (size_t i = 0; i < sp.n; ++i) gsum += out->grad[at(i)];
        for (size_t i = 0; i < sp.n; ++i)
          pa->grad[at(i)] += out->grad[at(i)] - std::exp(out->value[at(i)]) * gsum;
      }
  };
  return Tensor(n);
}

Tensor relu(const Tensor& a) {
  auto n = make_node(a.shape(), {a}, "relu");
  const auto& va = a.value();
  for (size_t i = 0; i < va.size(); ++i) n->value[i] = va[i] > 0.0 ? va[i] : 0.0;
  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i)
      if (pa->value[i] > 0.0) pa->grad[i] += out->grad[i];
  };
  return Tensor(n);
}

Tensor gelu(const Tensor& a) {
  constexpr double kC0 = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kC1 = 0.044715;
  auto n = make_node(a.shape(), {a}, "gelu");
  const auto& va = a.value();
  for (size_t i = 0; i < va.size(); ++i) {
    double x = va[i];
    double t = std::tanh(kC0 * (x + kC1 * x * x * x));
    n->value[i] = 0.5 * x * (1.0 + t);
  }
  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) {
      double x = pa->value[i];
      double u = kC0 * (x + kC1 * x * x * x);
      double t = std::tanh(u);
      double du = kC0 * (1.0 + 3.0 * kC1 * x * x);
      double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      pa->grad[i] += out->grad[i] * d;
    }
  };
  return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) shape_error("layer_norm", s);
  size_t d = s.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    shape_error("layer_norm", s, gain.shape());
  size_t rows = x.numel() / d;

  auto n = make_node(s, {x, gain, bias}, "layer_norm");
  std::vector<double> xhat(x.numel());
  std::vector<double> istd(rows);
  const auto& vx = x.value();
  const auto& vg = gain.value();
  const auto& vb = bias.value();
  for (size_t r = 0; r < rows; ++r) {
    const double* row = vx.data() + r * d;
    double mu = 0.0;
    for (size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    istd[r] = is;
    for (size_t j = 0; j < d; ++j) {
      double xh = (row[j] - mu) * is;
      xhat[r * d + j] = xh;
      n->value[r * d + j] = vg[j] * xh + vb[j];
    }
  }

  Node* out = n.get();
  Node* px = x.node().get();
  Node* pg = gain.node().get();
  Node* pb = bias.node().get();
  n->backprop = [out, px, pg, pb, xhat = std::move(xhat), istd = std::move(istd), d]() {
    size_t rows = istd.size();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    if (px->requires_grad) px->ensure_grad();
    for (size_t r = 0; r < rows; ++r) {
      const double* g = out->grad.data() + r * d;
      const double* xh = xhat.data() + r * d;
      if (pg->requires_grad)
        for (size_t j = 0; j < d; ++j) pg->grad[j] += g[j] * xh[j];
      if (pb->requires_grad)
        for (size_t j = 0; j < d; ++j) pb->grad[j] += g[j];
      if (px->requires_grad) {
        double m1 = 0.0, m2 = 0.0;
        for (size_t j = 0; j < d; ++j) {
          double dx = g[j] * pg->value[j];
          m1 += dx;
          m2 += dx * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (size_t j = 0; j < d; ++j) {
          double dx = g[j] * pg->value[j];
          px->grad[r * d + j] += istd[r] * (dx - m1 - xh[j] * m2);
        }
      }
    }
  };
  return Tensor(n);
}

// --------------------------------------------------------------- reductions

Tensor sum(const Tensor& a, size_t axis) {
  AxisSplit sp = split_axis(a.shape(), axis, "sum");
  Shape out_shape;
  for (size_t i = 0; i < a.shape().size(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape = {1};

  auto n = make_node(out_shape, {a}, "sum");
  const auto& va = a.value();
  for (size_t o = 0; o < sp.outer; ++o)
    for (size_t j = 0; j < sp.inner; ++j) {
      double acc = 0.0;
      for (size_t i = 0; i < sp.n; ++i) acc += va[(o * sp.n + i) * sp.inner + j];
      n->value[o * sp.inner + j] = acc;
    }

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, sp]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t o = 0; o < sp.outer; ++o)
      for (size_t j = 0; j < sp.inner; ++j) {
        double g = out->grad[o * sp.inner + j];
        for (size_t i = 0; i < sp.n; ++i) pa->grad[(o * sp.n + i) * sp.inner + j] += g;
      }
  };
  return Tensor(n);
}

Tensor mean(const Tensor& a, size_t axis) {
  size_t n = a.shape()[axis];
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Tensor sum_all(const Tensor& a) {
  auto n = make_node({1}, {a}, "sum_all");
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  n->value[0] = acc;
  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    double g = out->grad[0];
    for (auto& gv : pa->grad) gv += g;
  };
  return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ------------------------------------------------------------------ masking

Tensor masked_fill(const Tensor& a, const Tensor& mask, double v) {
  if (a.shape() != mask.shape()) shape_error("masked_fill", a.shape(), mask.shape());
  if (mask.requires_grad())
    throw std::invalid_argument("masked_fill: mask must not require grad");
  auto n = make_node(a.shape(), {a}, "masked_fill");
  const auto& va = a.value();
  const auto& vm = mask.value();
  for (size_t i = 0; i < va.size(); ++i) n->value[i] = vm[i] != 0.0 ? v : va[i];

  Node* out = n.get();
  Node* pa = a.node().get();
  std::vector<uint8_t> keep(va.size());
  for (size_t i = 0; i < va.size(); ++i) keep[i] = vm[i] == 0.0;
  n->backprop = [out, pa, keep = std::move(keep)]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i)
      if (keep[i]) pa->grad[i] += out->grad[i];
  };
  return Tensor(n);
}

// ----------------------------------------------------------------- geometry

Tensor row_normalize(const Tensor& a) {
  constexpr double kEps = 1e-12;
  const Shape& s = a.shape();
  if (s.size() != 2) shape_error("row_normalize", s);
  size_t rows = s[0], d = s[1];

  auto n = make_node(s, {a}, "row_normalize");
  std::vector<double> raw_norm(rows);
  const auto& va = a.value();
  for (size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (size_t j = 0; j < d; ++j) ss += va[r * d + j] * va[r * d + j];
    double rn = std::sqrt(ss);
    raw_norm[r] = rn;
    double inv = 1.0 / (rn + kEps);
    for (size_t j = 0; j < d; ++j) n->value[r * d + j] = va[r * d + j] * inv;
  }

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, raw_norm = std::move(raw_norm), d]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t r = 0; r < raw_norm.size(); ++r) {
      double N = raw_norm[r] + kEps;
      const double* g = out->grad.data() + r * d;
      const double* x = pa->value.data() + r * d;
      double gx = 0.0;
      for (size_t j = 0; j < d; ++j) gx += g[j] * x[j];
      double coef = raw_norm[r] > 0.0 ? gx / (raw_norm[r] * N * N) : 0.0;
      for (size_t j = 0; j < d; ++j) pa->grad[r * d + j] += g[j] / N - x[j] * coef;
    }
  };
  return Tensor(n);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  constexpr double kEps = 1e-12;
  const Shape& sa = a.shape();
  if (sa.size() != 2 || a.shape() != b.shape()) shape_error("cosine_similarity", sa, b.shape());
  size_t rows = sa[0], d = sa[1];

  auto n = make_node(Shape{rows}, {a, b}, "cosine_similarity");
  std::vector<double> na(rows), nb(rows), dots(rows);
  const auto& va = a.value();
  const auto& vb = b.value();
  for (size_t r = 0; r < rows; ++r) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t j = 0; j < d; ++j) {
      saa += va[r * d + j] * va[r * d + j];
      sbb += vb[r * d + j] * vb[r * d + j];
      sab += va[r * d + j] * vb[r * d + j];
    }
    na[r] = std::sqrt(saa);
    nb[r] = std::sqrt(sbb);
    dots[r] = sab;
    n->value[r] = sab / ((na[r] + kEps) * (nb[r] + kEps));
  }

  Node* out = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backprop = [out, pa, pb, na = std::move(na), nb = std::move(nb), dots = std::move(dots),
                 d]() {
    for (size_t r = 0; r < na.size(); ++r) {
      double Na = na[r] + kEps, Nb = nb[r] + kEps;
      double g = out->grad[r];
      double s = dots[r] / (Na * Nb);
      const double* xa = pa->value.data() + r * d;
      const double* xb = pb->value.data() + r * d;
      if (pa->requires_grad) {
        pa->ensure_grad();
        double coef = na[r] > 0.0 ? s / (na[r] * Na) : 0.0;
        for (size_t j = 0; j < d; ++j)
          pa->grad[r * d + j] += g * (xb[j] / (Na * Nb) - coef * xa[j]);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        double coef = nb[r] > 0.0 ? s / (nb[r] * Nb) : 0.0;
        for (size_t j = 0; j < d; ++j)
          pb->grad[r * d + j] += g * (xa[j] / (Na * Nb) - coef * xb[j]);
      }
    }
  };
  return Tensor(n);
}

// ---------------------------------------------------------------- selection

Tensor pick(const Tensor& a, const std::vector<int32_t>& ids) {
  const Shape& s = a.shape();
  if (s.empty()) shape_error("pick", s);
  size_t c = s.back();
  size_t rows = a.numel() / c;
  if (ids.size() != rows)
    throw std::invalid_argument("pick: expected " + std::to_string(rows) + " indices, got " +
                                std::to_string(ids.size()));
  for (int32_t id : ids)
    if (id < 0 || static_cast<size_t>(id) >= c)
      throw std::out_of_range("pick: index " + std::to_string(id) + " outside last dim " +
                              std::to_string(c));
  Shape out_shape(s.begin(), s.end() - 1);
  if (out_shape.empty()) out_shape = {1};

  auto n = make_node(out_shape, {a}, "pick");
  for (size_t r = 0; r < rows; ++r) n->value[r] = a.value()[r * c + static_cast<size_t>(ids[r])];

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, ids, c]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t r = 0; r < ids.size(); ++r)
      pa->grad[r * c + static_cast<size_t>(ids[r])] += out->grad[r];
  };
  return Tensor(n);
}

Tensor select_time(const Tensor& h, const std::vector<size_t>& t) {
  const Shape& s = h.shape();
  if (s.size() != 3) shape_error("select_time", s);
  size_t B = s[0], T = s[1], d = s[2];
  if (t.size() != B)
    throw std::invalid_argument("select_time: expected one index per batch row");
  for (size_t x : t)
    if (x >= T) throw std::out_of_range("select_time: time index out of range");

  auto n = make_node(Shape{B, d}, {h}, "select_time");
  for (size_t b = 0; b < B; ++b)
    std::copy_n(h.value().data() + (b * T + t[b]) * d, d, n->value.data() + b * d);

  Node* out = n.get();
  Node* ph = h.node().get();
  n->backprop = [out, ph, t, T, d]() {
    if (!ph->requires_grad) return;
    ph->ensure_grad();
    for (size_t b = 0; b < t.size(); ++b) {
      const double* g = out->grad.data() + b * d;
      double* dst = ph->grad.data() + (b * T + t[b]) * d;
      for (size_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  };
  return Tensor(n);
}

Tensor masked_mean_rows(const Tensor& h, const std::vector<uint8_t>& include) {
  const Shape& s = h.shape();
  if (s.size() != 3) shape_error("masked_mean_rows", s);
  size_t B = s[0], T = s[1], d = s[2];
  if (include.size() != B * T)
    throw std::invalid_argument("masked_mean_rows: mask size does not match [B, T]");

  std::vector<double> inv_count(B, 0.0);
  for (size_t b = 0; b < B; ++b) {
    size_t cnt = 0;
    for (size_t i = 0; i < T; ++i)
      if (include[b * T + i]) ++cnt;
    if (cnt == 0)
      throw std::runtime_error("masked_mean_rows: batch row " + std::to_string(b) +
                               " has no included positions");
    inv_count[b] = 1.0 / static_cast<double>(cnt);
  }

  auto n = make_node(Shape{B, d}, {h}, "masked_mean_rows");
  for (size_t b = 0; b < B; ++b) {
    double* dst = n->value.data() + b * d;
    for (size_t i = 0; i < T; ++i) {
      if (!include[b * T + i]) continue;
      const double* row = h.value().data() + (b * T + i) * d;
      for (size_t j = 0; j < d; ++j) dst[j] += row[j];
    }
    for (size_t j = 0; j < d; ++j) dst[j] *= inv_count[b];
  }

  Node* out = n.get();
  Node* ph = h.node().get();
  n->backprop = [out, ph, include, inv_count = std::move(inv_count), T, d]() {
    if (!ph->requires_grad) return;
    ph->ensure_grad();
    size_t B = inv_count.size();
    for (size_t b = 0; b < B; ++b) {
      const double* g = out->grad.data() + b * d;
      for (size_t i = 0; i < T; ++i) {
        if (!include[b * T + i]) continue;
        double* dst = ph->grad.data() + (b * T + i) * d;
        for (size_t j = 0; j < d; ++j) dst[j] += g[j] * inv_count[b];
      }
    }
  };
  return Tensor(n);
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;

  auto n = make_node(a.shape(), {a}, "dropout");
  std::vector<double> mask(a.numel());
  double keep_scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
  const auto& va = a.value();
  for (size_t i = 0; i < va.size(); ++i) n->value[i] = va[i] * mask[i];

  Node* out = n.get();
  Node* pa = a.node().get();
  n->backprop = [out, pa, mask = std::move(mask)]() {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) pa->grad[i] += out->grad[i] * mask[i];
  };
  return Tensor(n);
}

}  // namespace s2slab
