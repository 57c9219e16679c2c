#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stmixer/error.hpp"
#include "stmixer/rng.hpp"

namespace stmixer {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = int(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

/// One node of the gradient tape. The tape is define-by-run: every forward
/// op creates a fresh node whose backward closure scatters into the parents.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return int64_t(data.size()); }
};

/// Dense row-major f64 tensor with reverse-mode autodiff. Value-semantic
/// handle: copies share the underlying node, so treat copies as views of
/// the same tape entry. A tape is confined to one thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    Tensor t = uninit(std::move(shape));
    std::fill(t.n_->data.begin(), t.n_->data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return of({1}, {v}); }

  static Tensor of(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != int64_t(values.size()))
      throw DimensionError("tensor: " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    Tensor t;
    t.n_ = std::make_shared<TensorNode>();
    t.n_->shape = std::move(shape);
    t.n_->data = std::move(values);
    return t;
  }

  static Tensor uninit(Shape shape) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode>();
    t.n_->data.resize(size_t(shape_numel(shape)));
    t.n_->shape = std::move(shape);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
    Tensor t = uninit(std::move(shape));
    for (double& v : t.n_->data) v = rng.normal(mean, stddev);
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t = uninit(std::move(shape));
    for (double& v : t.n_->data) v = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return n_ != nullptr; }

  const Shape& shape() const { return node().shape; }
  int64_t numel() const { return node().numel(); }
  int64_t dim(int i) const { return node().shape[size_t(i)]; }
  int rank() const { return int(node().shape.size()); }

  double* data() { return node().data.data(); }
  const double* data() const { return node().data.data(); }
  const std::vector<double>& values() const { return node().data; }

  double value() const {
    if (numel() != 1)
      throw DimensionError("value(): tensor " + shape_str(shape()) + " is not scalar");
    return node().data[0];
  }

  double at(std::initializer_list<int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size())
      throw DimensionError("at(): rank mismatch for " + shape_str(s));
    auto st = row_major_strides(s);
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) off += i * st[k++];
    return node().data[size_t(off)];
  }

  Tensor& set_requires_grad(bool rg = true) {
    node().requires_grad = rg;
    return *this;
  }
  bool requires_grad() const { return node().requires_grad; }

  bool has_grad() const { return defined() && !n_->grad.empty(); }

  /// Gradient accumulated by the most recent backward() that reached this
  /// tensor. Same shape as the value.
  Tensor grad() const {
    if (!has_grad()) throw NumericError("grad(): no gradient recorded on this tensor");
    return Tensor::of(shape(), n_->grad);
  }

  void clear_grad() {
    if (defined()) n_->grad.clear();
  }

  /// Copy of the values as a fresh leaf, disconnected from the tape.
  Tensor detach() const { return Tensor::of(shape(), node().data); }

  /// Runs reverse-mode accumulation from this scalar. Gradients of every
  /// node reached through requires_grad paths are (re)computed from zero.
  void backward() const {
    if (numel() != 1)
      throw DimensionError("backward(): root " + shape_str(shape()) + " is not scalar");
    if (!node().requires_grad) return;

    // Post-order DFS over requires_grad ancestry: parents precede children,
    // so the reverse order is a valid backward schedule. Iteration order
    // depends only on graph structure, keeping gradients bitwise stable.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    visited.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorNode* p = node->parents[next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (TensorNode* t : order) t->grad.assign(t->data.size(), 0.0);
    n_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  TensorNode& node() const {
    if (!n_) throw NumericError("use of undefined tensor");
    return *n_;
  }
  const std::shared_ptr<TensorNode>& ptr() const { return n_; }

 private:
  std::shared_ptr<TensorNode> n_;
};

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

/// Attaches parents and a backward closure when any parent needs gradients.
inline void wire(Tensor& out, std::vector<Tensor> parents,
                 std::function<void(TensorNode&)> backward_fn) {
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  if (!rg) return;
  out.node().requires_grad = true;
  for (const Tensor& p : parents) out.node().parents.push_back(p.ptr());
  out.node().backward_fn = std::move(backward_fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  Tensor out = Tensor::uninit(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  detail::wire(out, {a, b}, [](TensorNode& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (A.requires_grad) A.grad[i] += n.grad[i];
      if (B.requires_grad) B.grad[i] += n.grad[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  Tensor out = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  detail::wire(out, {a, b}, [](TensorNode& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (A.requires_grad) A.grad[i] += n.grad[i];
      if (B.requires_grad) B.grad[i] -= n.grad[i];
    }
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  Tensor out = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::wire(out, {a, b}, [](TensorNode& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (A.requires_grad) A.grad[i] += n.grad[i] * B.data[i];
      if (B.requires_grad) B.grad[i] += n.grad[i] * A.data[i];
    }
  });
  return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("div", a, b);
  Tensor out = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
  detail::wire(out, {a, b}, [](TensorNode& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double inv = 1.0 / B.data[i];
      if (A.requires_grad) A.grad[i] += n.grad[i] * inv;
      if (B.requires_grad) B.grad[i] -= n.grad[i] * A.data[i] * inv * inv;
    }
  });
  return out;
}

/// Elementwise minimum; ties take the gradient of the first argument.
inline Tensor min_ew(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("min", a, b);
  Tensor out = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] <= b.data()[i] ? a.data()[i] : b.data()[i];
  detail::wire(out, {a, b}, [](TensorNode& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (A.data[i] <= B.data[i]) {
        if (A.requires_grad) A.grad[i] += n.grad[i];
      } else if (B.requires_grad) {
        B.grad[i] += n.grad[i];
      }
    }
  });
  return out;
}

/// Elementwise maximum; ties take the gradient of the first argument.
inline Tensor max_ew(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("max", a, b);
  Tensor out = Tensor::uninit(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] >= b.data()[i] ? a.data()[i] : b.data()[i];
  detail::wire(out, {a, b}, [](TensorNode& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (A.data[i] >= B.data[i]) {
        if (A.requires_grad) A.grad[i] += n.grad[i];
      } else if (B.requires_grad) {
        B.grad[i] += n.grad[i];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

/// f maps value -> value, dfdx maps (x, y, upstream) -> contribution.
template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF dfdx) {
  Tensor out = Tensor::uninit(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out.data()[i] = f(x.data()[i]);
  detail::wire(out, {x}, [dfdx](TensorNode& n) {
    auto& X = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i)
      X.grad[i] += dfdx(X.data[i], n.data[i], n.grad[i]);
  });
  return out;
}

}  // namespace detail

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v + c; },
      [](double, double, double g) { return g; });
}

inline Tensor mul_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v * c; },
      [c](double, double, double g) { return g * c; });
}

inline Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

/// ReLU; ties at 0 take gradient 0.
inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double, double g) { return v > 0.0 ? g : 0.0; });
}

inline Tensor exp_(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y, double g) { return g * y; });
}

inline Tensor log_(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double, double g) { return g / v; });
}

inline Tensor exp2_(const Tensor& x) {
  constexpr double kLn2 = 0.6931471805599453094172321214581766;
  return detail::unary_op(
      x, [](double v) { return std::exp2(v); },
      [](double, double y, double g) { return g * y * kLn2; });
}

inline Tensor abs_(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::fabs(v); },
      [](double v, double, double g) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
}

inline Tensor sigmoid(const Tensor& x) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
  };
  return detail::unary_op(x, f, [](double, double y, double g) { return g * y * (1.0 - y); });
}

/// log(1 + e^x), evaluated stably.
inline Tensor softplus(const Tensor& x) {
  auto f = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); };
  return detail::unary_op(x, f, [](double v, double, double g) {
    double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return g * s;
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  Tensor out = Tensor::of({1}, {s});
  detail::wire(out, {x}, [](TensorNode& n) {
    auto& X = *n.parents[0];
    for (size_t i = 0; i < X.grad.size(); ++i) X.grad[i] += n.grad[0];
  });
  return out;
}

inline Tensor mean_all(const Tensor& x) { return mul_scalar(sum_all(x), 1.0 / double(x.numel())); }

/// Mean over one axis, removing it from the shape.
inline Tensor mean_axis(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= int(s.size()))
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  int64_t outer = 1, n = s[size_t(axis)], inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
  for (int i = axis + 1; i < int(s.size()); ++i) inner *= s[size_t(i)];
  Shape os;
  for (int i = 0; i < int(s.size()); ++i)
    if (i != axis) os.push_back(s[size_t(i)]);
  if (os.empty()) os = {1};
  Tensor out = Tensor::zeros(os);
  const double* px = x.data();
  double* po = out.data();
  double inv = 1.0 / double(n);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < n; ++k)
      for (int64_t i = 0; i < inner; ++i) po[o * inner + i] += px[(o * n + k) * inner + i] * inv;
  detail::wire(out, {x}, [outer, n, inner, inv](TensorNode& nn) {
    auto& X = *nn.parents[0];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < n; ++k)
        for (int64_t i = 0; i < inner; ++i)
          X.grad[size_t((o * n + k) * inner + i)] += nn.grad[size_t(o * inner + i)] * inv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  Tensor out = Tensor::of(std::move(shape), x.values());
  detail::wire(out, {x}, [](TensorNode& n) {
    auto& X = *n.parents[0];
    for (size_t i = 0; i < n.grad.size(); ++i) X.grad[i] += n.grad[i];
  });
  return out;
}

inline Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const Shape& s = x.shape();
  if (perm.size() != s.size()) throw DimensionError("permute: rank mismatch");
  Shape os(s.size());
  for (size_t i = 0; i < perm.size(); ++i) os[i] = s[size_t(perm[i])];
  auto ist = row_major_strides(s);
  auto ost = row_major_strides(os);
  Tensor out = Tensor::uninit(os);
  int64_t total = x.numel();
  int rank = int(s.size());
  // out[j0..jk] = in[j_perm...]: walk output linearly, map back to input.
  std::vector<int64_t> in_stride_for_out(size_t(rank), 0);
  for (int i = 0; i < rank; ++i) in_stride_for_out[size_t(i)] = ist[size_t(perm[size_t(i)])];
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < total; ++o) {
    int64_t rem = o, ii = 0;
    for (int d = 0; d < rank; ++d) {
      int64_t j = rem / ost[size_t(d)];
      rem -= j * ost[size_t(d)];
      ii += j * in_stride_for_out[size_t(d)];
    }
    po[o] = px[ii];
  }
  detail::wire(out, {x}, [ost, in_stride_for_out, total, rank](TensorNode& n) {
    auto& X = *n.parents[0];
    for (int64_t o = 0; o < total; ++o) {
      int64_t rem = o, ii = 0;
      for (int d = 0; d < rank; ++d) {
        int64_t j = rem / ost[size_t(d)];
        rem -= j * ost[size_t(d)];
        ii += j * in_stride_for_out[size_t(d)];
      }
      X.grad[size_t(ii)] += n.grad[size_t(o)];
    }
  });
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= int(s0.size())) throw DimensionError("concat: bad axis");
  Shape os = s0;
  os[size_t(axis)] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (int(i) != axis && s[i] != s0[i])
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    os[size_t(axis)] += s[size_t(axis)];
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[size_t(i)];
  for (int i = axis + 1; i < int(s0.size()); ++i) inner *= s0[size_t(i)];
  Tensor out = Tensor::uninit(os);
  int64_t out_axis = os[size_t(axis)];
  std::vector<int64_t> sizes;
  int64_t off = 0;
  for (const Tensor& p : parts) {
    int64_t k = p.shape()[size_t(axis)];
    sizes.push_back(k);
    const double* pp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * k * inner, pp + (o + 1) * k * inner,
                out.data() + (o * out_axis + off) * inner);
    off += k;
  }
  detail::wire(out, parts, [outer, inner, out_axis, sizes](TensorNode& n) {
    int64_t off2 = 0;
    for (size_t pi = 0; pi < n.parents.size(); ++pi) {
      auto& P = *n.parents[pi];
      int64_t k = sizes[pi];
      if (P.requires_grad) {
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < k * inner; ++i)
            P.grad[size_t(o * k * inner + i)] += n.grad[size_t((o * out_axis + off2) * inner + i)];
      }
      off2 += k;
    }
  });
  return out;
}

inline Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= int(s.size())) throw DimensionError("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > s[size_t(axis)])
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + shape_str(s));
  int64_t outer = 1, inner = 1, n = s[size_t(axis)];
  for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
  for (int i = axis + 1; i < int(s.size()); ++i) inner *= s[size_t(i)];
  Shape os = s;
  os[size_t(axis)] = len;
  Tensor out = Tensor::uninit(os);
  for (int64_t o = 0; o < outer; ++o)
    std::copy(x.data() + (o * n + start) * inner, x.data() + (o * n + start + len) * inner,
              out.data() + o * len * inner);
  detail::wire(out, {x}, [outer, inner, n, start, len](TensorNode& nn) {
    auto& X = *nn.parents[0];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < len * inner; ++i)
        X.grad[size_t((o * n + start) * inner + i)] += nn.grad[size_t(o * len * inner + i)];
  });
  return out;
}

/// Rows of x (first axis) selected by index; backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("gather_rows: rank-0 input");
  int64_t rows = s[0];
  int64_t inner = x.numel() / rows;
  for (int64_t i : idx)
    if (i < 0 || i >= rows) throw DimensionError("gather_rows: index out of range");
  Shape os = s;
  os[0] = int64_t(idx.size());
  Tensor out = Tensor::uninit(os);
  for (size_t k = 0; k < idx.size(); ++k)
    std::copy(x.data() + idx[k] * inner, x.data() + (idx[k] + 1) * inner,
              out.data() + int64_t(k) * inner);
  detail::wire(out, {x}, [idx, inner](TensorNode& n) {
    auto& X = *n.parents[0];
    for (size_t k = 0; k < idx.size(); ++k)
      for (int64_t i = 0; i < inner; ++i)
        X.grad[size_t(idx[k] * inner + i)] += n.grad[k * size_t(inner) + size_t(i)];
  });
  return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expects rank-2 inputs, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      double av = pa[i * k + kk];
      for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[kk * n + j];
    }
  detail::wire(out, {a, b}, [m, k, n](TensorNode& nn) {
    auto& A = *nn.parents[0];
    auto& B = *nn.parents[1];
    if (A.requires_grad) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          double g = nn.grad[size_t(i * n + j)];
          for (int64_t kk = 0; kk < k; ++kk) A.grad[size_t(i * k + kk)] += g * B.data[size_t(kk * n + j)];
        }
    }
    if (B.requires_grad) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          double av = A.data[size_t(i * k + kk)];
          for (int64_t j = 0; j < n; ++j) B.grad[size_t(kk * n + j)] += av * nn.grad[size_t(i * n + j)];
        }
    }
  });
  return out;
}

/// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = Tensor::zeros({B, m, n});
  for (int64_t bb = 0; bb < B; ++bb) {
    const double* pa = a.data() + bb * m * k;
    const double* pb = b.data() + bb * k * n;
    double* po = out.data() + bb * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        double av = pa[i * k + kk];
        for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[kk * n + j];
      }
  }
  detail::wire(out, {a, b}, [B, m, k, n](TensorNode& nn) {
    auto& A = *nn.parents[0];
    auto& Bb = *nn.parents[1];
    for (int64_t bb = 0; bb < B; ++bb) {
      const double* ga = nn.grad.data() + bb * m * n;
      const double* da = A.data.data() + bb * m * k;
      const double* db = Bb.data.data() + bb * k * n;
      if (A.requires_grad) {
        double* g = A.grad.data() + bb * m * k;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            double gv = ga[i * n + j];
            for (int64_t kk = 0; kk < k; ++kk) g[i * k + kk] += gv * db[kk * n + j];
          }
      }
      if (Bb.requires_grad) {
        double* g = Bb.grad.data() + bb * k * n;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            double av = da[i * k + kk];
            for (int64_t j = 0; j < n; ++j) g[kk * n + j] += av * ga[i * n + j];
          }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// last-axis helpers
// ---------------------------------------------------------------------------

/// x + v where v runs along the last axis (bias add, attention masks).
inline Tensor add_lastaxis(const Tensor& x, const Tensor& v) {
  int64_t d = x.shape().back();
  if (v.rank() != 1 || v.dim(0) != d)
    throw DimensionError("add_lastaxis: vector " + shape_str(v.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  Tensor out = Tensor::uninit(x.shape());
  int64_t rows = x.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out.data()[r * d + j] = x.data()[r * d + j] + v.data()[j];
  detail::wire(out, {x, v}, [rows, d](TensorNode& n) {
    auto& X = *n.parents[0];
    auto& V = *n.parents[1];
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) {
        double g = n.grad[size_t(r * d + j)];
        if (X.requires_grad) X.grad[size_t(r * d + j)] += g;
        if (V.requires_grad) V.grad[size_t(j)] += g;
      }
  });
  return out;
}

/// x * v along the last axis (per-coordinate scaling).
inline Tensor mul_lastaxis(const Tensor& x, const Tensor& v) {
  int64_t d = x.shape().back();
  if (v.rank() != 1 || v.dim(0) != d)
    throw DimensionError("mul_lastaxis: vector " + shape_str(v.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  Tensor out = Tensor::uninit(x.shape());
  int64_t rows = x.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out.data()[r * d + j] = x.data()[r * d + j] * v.data()[j];
  detail::wire(out, {x, v}, [rows, d](TensorNode& n) {
    auto& X = *n.parents[0];
    auto& V = *n.parents[1];
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) {
        double g = n.grad[size_t(r * d + j)];
        if (X.requires_grad) X.grad[size_t(r * d + j)] += g * V.data[size_t(j)];
        if (V.requires_grad) V.grad[size_t(j)] += g * X.data[size_t(r * d + j)];
      }
  });
  return out;
}

/// x - s with one value of s per leading row: out[r, j] = x[r, j] - s[r].
inline Tensor sub_rowscalar(const Tensor& x, const Tensor& s) {
  int64_t d = x.shape().back();
  int64_t rows = x.numel() / d;
  if (s.numel() != rows)
    throw DimensionError("sub_rowscalar: " + shape_str(s.shape()) + " does not hold one value per row of " +
                         shape_str(x.shape()));
  Tensor out = Tensor::uninit(x.shape());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out.data()[r * d + j] = x.data()[r * d + j] - s.data()[r];
  detail::wire(out, {x, s}, [rows, d](TensorNode& n) {
    auto& X = *n.parents[0];
    auto& S = *n.parents[1];
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < d; ++j) {
        double g = n.grad[size_t(r * d + j)];
        if (X.requires_grad) X.grad[size_t(r * d + j)] += g;
        if (S.requires_grad) S.grad[size_t(r)] -= g;
      }
  });
  return out;
}

inline Tensor softmax_lastaxis(const Tensor& x) {
  int64_t d = x.shape().back();
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::uninit(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * d;
    double* po = out.data() + r * d;
    double m = px[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, px[j]);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      po[j] = std::exp(px[j] - m);
      s += po[j];
    }
    double inv = 1.0 / s;
    for (int64_t j = 0; j < d; ++j) po[j] *= inv;
  }
  detail::wire(out, {x}, [rows, d](TensorNode& n) {
    auto& X = *n.parents[0];
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = n.data.data() + r * d;
      const double* g = n.grad.data() + r * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (int64_t j = 0; j < d; ++j) X.grad[size_t(r * d + j)] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

/// log(sum(exp(x))) over the last axis, removing it: [..., d] -> [...].
inline Tensor logsumexp_lastaxis(const Tensor& x) {
  const Shape& s = x.shape();
  int64_t d = s.back();
  int64_t rows = x.numel() / d;
  Shape os(s.begin(), s.end() - 1);
  if (os.empty()) os = {1};
  Tensor out = Tensor::uninit(os);
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * d;
    double m = px[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, px[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) sum += std::exp(px[j] - m);
    out.data()[r] = m + std::log(sum);
  }
  detail::wire(out, {x}, [rows, d](TensorNode& n) {
    auto& X = *n.parents[0];
    for (int64_t r = 0; r < rows; ++r) {
      double L = n.data[size_t(r)];
      double g = n.grad[size_t(r)];
      for (int64_t j = 0; j < d; ++j)
        X.grad[size_t(r * d + j)] += g * std::exp(X.data[size_t(r * d + j)] - L);
    }
  });
  return out;
}

/// Per-last-axis standardization followed by a learned affine map.
/// Uses population variance; eps keeps the zero-variance case finite.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps = 1e-5) {
  int64_t d = x.shape().back();
  if (d == 0) throw DimensionError("layernorm: empty last axis");
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw DimensionError("layernorm: affine params must be [" + std::to_string(d) + "]");
  if (eps <= 0.0) throw NumericError("layernorm: eps must be positive");
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::uninit(x.shape());
  std::vector<double> xhat(size_t(x.numel()));
  std::vector<double> inv_sigma(size_t(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += px[j];
    mu /= double(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (px[j] - mu) * (px[j] - mu);
    var /= double(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[size_t(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      double xh = (px[j] - mu) * is;
      xhat[size_t(r * d + j)] = xh;
      out.data()[r * d + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  detail::wire(out, {x, gain, bias},
               [rows, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](TensorNode& n) {
                 auto& X = *n.parents[0];
                 auto& G = *n.parents[1];
                 auto& Bi = *n.parents[2];
                 for (int64_t r = 0; r < rows; ++r) {
                   const double* g = n.grad.data() + r * d;
                   const double* xh = xhat.data() + r * d;
                   if (G.requires_grad || Bi.requires_grad) {
                     for (int64_t j = 0; j < d; ++j) {
                       if (G.requires_grad) G.grad[size_t(j)] += g[j] * xh[j];
                       if (Bi.requires_grad) Bi.grad[size_t(j)] += g[j];
                     }
                   }
                   if (X.requires_grad) {
                     double sum_dh = 0.0, sum_dh_xh = 0.0;
                     for (int64_t j = 0; j < d; ++j) {
                       double dh = g[j] * G.data[size_t(j)];
                       sum_dh += dh;
                       sum_dh_xh += dh * xh[j];
                     }
                     double is = inv_sigma[size_t(r)];
                     for (int64_t j = 0; j < d; ++j) {
                       double dh = g[j] * G.data[size_t(j)];
                       X.grad[size_t(r * d + j)] +=
                           is * (dh - sum_dh / double(d) - xh[j] * sum_dh_xh / double(d));
                     }
                   }
                 }
               });
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace stmixer
