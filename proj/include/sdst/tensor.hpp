#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "sdst/rng.hpp"

namespace sdst::ag {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct NonFinite : std::runtime_error {
  explicit NonFinite(const std::string& what) : std::runtime_error(what) {}
};
struct DisconnectedLoss : std::runtime_error {
  explicit DisconnectedLoss(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Debug-mode finite checks on every op output.
inline bool& debug_checks_flag() {
  static bool on = false;
  return on;
}
inline void set_debug_checks(bool on) { debug_checks_flag() = on; }

inline bool& no_grad_flag() {
  static thread_local bool off = false;
  return off;
}

// RAII scope that stops ops from recording backward closures; frozen
// forward passes and greedy decoding run under this.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(no_grad_flag()) { no_grad_flag() = true; }
  ~NoGradGuard() { no_grad_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<Node<S>>()) {}
  Tensor(Shape shape, std::vector<S> values, bool requires_grad = false)
      : node_(std::make_shared<Node<S>>()) {
    if (numel(shape) != values.size())
      throw ShapeMismatch("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
  }
  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<S>(n, v), requires_grad);
  }
  static Tensor scalar(S v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor randn(Shape shape, Rng& rng, double scale, bool requires_grad = false) {
    size_t n = numel(shape);
    std::vector<S> v(n);
    for (auto& x : v) x = static_cast<S>(rng.normal() * scale);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
  size_t size() const { return node_->value.size(); }
  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }
  S item() const {
    if (size() != 1) throw ShapeMismatch("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }
  std::shared_ptr<Node<S>>& node() { return node_; }
  const std::shared_ptr<Node<S>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <class S>
void check_finite(const Node<S>& n) {
  if (!debug_checks_flag()) return;
  for (S v : n.value)
    if (!std::isfinite(static_cast<double>(v)))
      throw NonFinite(std::string("non-finite value out of op '") + n.op + "'");
}

template <class S>
Tensor<S> make_op(const char* op, Shape shape, std::vector<S> value,
                  std::vector<std::shared_ptr<Node<S>>> parents,
                  std::function<void(Node<S>&)> backward) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  if (!no_grad_flag())
    for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  check_finite(*n);
  return Tensor<S>(std::move(n));
}

template <class S>
void add_into(std::shared_ptr<Node<S>>& p, size_t idx, S v) {
  p->ensure_grad();
  p->grad[idx] += v;
}

}  // namespace detail

// ---- elementwise ----

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<S>("add", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<S>& n) mutable {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
    }
  });
}

// Broadcast a length-n row vector across the rows of [m,n].
template <class S>
Tensor<S> add_row(const Tensor<S>& a, const Tensor<S>& row) {
  if (a.rank() != 2 || row.size() != static_cast<size_t>(a.dim(1)))
    throw ShapeMismatch("add_row: " + shape_str(a.shape()) + " vs " + shape_str(row.shape()));
  int m = a.dim(0), n = a.dim(1);
  std::vector<S> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = a.values()[static_cast<size_t>(i) * n + j] + row.values()[static_cast<size_t>(j)];
  auto pa = a.node(), pr = row.node();
  return detail::make_op<S>("add_row", a.shape(), std::move(out), {pa, pr}, [pa, pr, m, n](Node<S>& nd) mutable {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) pa->grad[i] += nd.grad[i];
    }
    if (pr->requires_grad) {
      pr->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pr->grad[static_cast<size_t>(j)] += nd.grad[static_cast<size_t>(i) * n + j];
    }
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<S>("mul", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<S>& n) mutable {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto pa = a.node();
  return detail::make_op<S>("scale", a.shape(), std::move(out), {pa}, [pa, c](Node<S>& n) mutable {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * c;
  });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > S(0) ? a.values()[i] : S(0);
  auto pa = a.node();
  return detail::make_op<S>("relu", a.shape(), std::move(out), {pa}, [pa](Node<S>& n) mutable {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (pa->value[i] > S(0)) pa->grad[i] += n.grad[i];
  });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  std::vector<S> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(a.values()[i]);
    out[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)));
  }
  auto pa = a.node();
  return detail::make_op<S>("gelu", a.shape(), std::move(out), {pa}, [pa](Node<S>& n) mutable {
    pa->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = static_cast<double>(pa->value[i]);
      double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
      double pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
      pa->grad[i] += n.grad[i] * static_cast<S>(cdf + x * pdf);
    }
  });
}

// ---- linear algebra ----

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<size_t>(m) * n, S(0));
  const S* av = a.values().data();
  const S* bv = b.values().data();
  // ikj order: accumulation over k stays left-to-right per output element
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      S aik = av[static_cast<size_t>(i) * k + kk];
      const S* brow = bv + static_cast<size_t>(kk) * n;
      S* orow = out.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  auto pa = a.node(), pb = b.node();
  return detail::make_op<S>("matmul", {m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Node<S>& nd) mutable {
    const S* g = nd.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA = dC * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          S gij = g[static_cast<size_t>(i) * n + j];
          const S* brow = pb->value.data() + static_cast<size_t>(0);
          for (int kk = 0; kk < k; ++kk)
            pa->grad[static_cast<size_t>(i) * k + kk] += gij * brow[static_cast<size_t>(kk) * n + j];
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB = A^T * dC
      for (int kk = 0; kk < k; ++kk)
        for (int i = 0; i < m; ++i) {
          S aik = pa->value[static_cast<size_t>(i) * k + kk];
          for (int j = 0; j < n; ++j)
            pb->grad[static_cast<size_t>(kk) * n + j] += aik * g[static_cast<size_t>(i) * n + j];
        }
    }
  });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeMismatch("transpose: rank-2 only, got " + shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  std::vector<S> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.values()[static_cast<size_t>(i) * n + j];
  auto pa = a.node();
  return detail::make_op<S>("transpose", {n, m}, std::move(out), {pa}, [pa, m, n](Node<S>& nd) mutable {
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        pa->grad[static_cast<size_t>(i) * n + j] += nd.grad[static_cast<size_t>(j) * m + i];
  });
}

// ---- shape ops ----

template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, int axis) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeMismatch("concat: rank-2 only");
  if (axis != 0 && axis != 1) throw ShapeMismatch("concat: axis must be 0 or 1");
  int other = 1 - axis;
  if (a.dim(other) != b.dim(other))
    throw ShapeMismatch("concat: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  int m = a.dim(0), n = a.dim(1);
  Shape shape = a.shape();
  shape[static_cast<size_t>(axis)] += b.dim(axis);
  std::vector<S> out(numel(shape));
  int on = shape[1];
  for (int i = 0; i < shape[0]; ++i)
    for (int j = 0; j < on; ++j) {
      S v;
      if (axis == 0) v = i < m ? a.values()[static_cast<size_t>(i) * n + j] : b.values()[static_cast<size_t>(i - m) * n + j];
      else v = j < n ? a.values()[static_cast<size_t>(i) * n + j] : b.values()[static_cast<size_t>(i) * b.dim(1) + (j - n)];
      out[static_cast<size_t>(i) * on + j] = v;
    }
  auto pa = a.node(), pb = b.node();
  return detail::make_op<S>("concat", shape, std::move(out), {pa, pb}, [pa, pb, axis, m, n](Node<S>& nd) mutable {
    int on = nd.shape[1];
    if (pa->requires_grad) pa->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (int i = 0; i < nd.shape[0]; ++i)
      for (int j = 0; j < on; ++j) {
        S g = nd.grad[static_cast<size_t>(i) * on + j];
        if (axis == 0) {
          if (i < m) {
            if (pa->requires_grad) pa->grad[static_cast<size_t>(i) * n + j] += g;
          } else if (pb->requires_grad) {
            pb->grad[static_cast<size_t>(i - m) * n + j] += g;
          }
        } else {
          if (j < n) {
            if (pa->requires_grad) pa->grad[static_cast<size_t>(i) * n + j] += g;
          } else if (pb->requires_grad) {
            pb->grad[static_cast<size_t>(i) * (on - n) + (j - n)] += g;
          }
        }
      }
  });
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, int start, int len) {
  if (a.rank() != 2) throw ShapeMismatch("slice: rank-2 only");
  if (axis != 0 && axis != 1) throw ShapeMismatch("slice: axis must be 0 or 1");
  if (start < 0 || len < 1 || start + len > a.dim(axis))
    throw ShapeMismatch("slice out of range on axis " + std::to_string(axis));
  int m = a.dim(0), n = a.dim(1);
  Shape shape = a.shape();
  shape[static_cast<size_t>(axis)] = len;
  std::vector<S> out(numel(shape));
  for (int i = 0; i < shape[0]; ++i)
    for (int j = 0; j < shape[1]; ++j) {
      int si = axis == 0 ? i + start : i;
      int sj = axis == 1 ? j + start : j;
      out[static_cast<size_t>(i) * shape[1] + j] = a.values()[static_cast<size_t>(si) * n + sj];
    }
  auto pa = a.node();
  (void)m;
  return detail::make_op<S>("slice", shape, std::move(out), {pa}, [pa, axis, start, n](Node<S>& nd) mutable {
    pa->ensure_grad();
    for (int i = 0; i < nd.shape[0]; ++i)
      for (int j = 0; j < nd.shape[1]; ++j) {
        int si = axis == 0 ? i + start : i;
        int sj = axis == 1 ? j + start : j;
        pa->grad[static_cast<size_t>(si) * n + sj] += nd.grad[static_cast<size_t>(i) * nd.shape[1] + j];
      }
  });
}

// ---- reductions / normalizations ----

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.values()) total += v;
  auto pa = a.node();
  return detail::make_op<S>("sum", {1}, {total}, {pa}, [pa](Node<S>& nd) mutable {
    pa->ensure_grad();
    for (auto& g : pa->grad) g += nd.grad[0];
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.values()) total += v;
  S inv = S(1) / static_cast<S>(a.size());
  auto pa = a.node();
  return detail::make_op<S>("mean", {1}, {total * inv}, {pa}, [pa, inv](Node<S>& nd) mutable {
    pa->ensure_grad();
    for (auto& g : pa->grad) g += nd.grad[0] * inv;
  });
}

// Softmax over the given axis of a rank-2 tensor (1 = rows, 0 = columns).
template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis = 1) {
  if (a.rank() != 2) throw ShapeMismatch("softmax: rank-2 only");
  if (axis != 0 && axis != 1) throw ShapeMismatch("softmax: axis must be 0 or 1");
  int m = a.dim(0), n = a.dim(1);
  std::vector<S> out(a.size());
  int outer = axis == 1 ? m : n;
  int inner = axis == 1 ? n : m;
  auto idx = [axis, n, m](int o, int i) {
    return axis == 1 ? static_cast<size_t>(o) * n + i : static_cast<size_t>(i) * n + o;
  };
  (void)m;
  for (int o = 0; o < outer; ++o) {
    S mx = a.values()[idx(o, 0)];
    for (int i = 1; i < inner; ++i) mx = std::max(mx, a.values()[idx(o, i)]);
    S denom = S(0);
    for (int i = 0; i < inner; ++i) {
      S e = std::exp(a.values()[idx(o, i)] - mx);
      out[idx(o, i)] = e;
      denom += e;
    }
    for (int i = 0; i < inner; ++i) out[idx(o, i)] /= denom;
  }
  auto pa = a.node();
  auto shape = a.shape();
  std::vector<S> saved = out;
  return detail::make_op<S>("softmax", shape, std::move(out), {pa},
                            [pa, axis, outer, inner, idx, saved = std::move(saved)](Node<S>& nd) mutable {
    pa->ensure_grad();
    for (int o = 0; o < outer; ++o) {
      S dot = S(0);
      for (int i = 0; i < inner; ++i) dot += nd.grad[idx(o, i)] * saved[idx(o, i)];
      for (int i = 0; i < inner; ++i)
        pa->grad[idx(o, i)] += saved[idx(o, i)] * (nd.grad[idx(o, i)] - dot);
    }
  });
}

template <class S>
Tensor<S> logsumexp(const Tensor<S>& a, int axis = 1) {
  if (a.rank() != 2 || axis != 1) throw ShapeMismatch("logsumexp: rank-2, axis 1 only");
  int m = a.dim(0), n = a.dim(1);
  std::vector<S> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    S mx = a.values()[static_cast<size_t>(i) * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, a.values()[static_cast<size_t>(i) * n + j]);
    S s = S(0);
    for (int j = 0; j < n; ++j) s += std::exp(a.values()[static_cast<size_t>(i) * n + j] - mx);
    out[static_cast<size_t>(i)] = mx + std::log(s);
  }
  auto pa = a.node();
  std::vector<S> saved = out;
  return detail::make_op<S>("logsumexp", {m, 1}, std::move(out), {pa},
                            [pa, m, n, saved = std::move(saved)](Node<S>& nd) mutable {
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        pa->grad[static_cast<size_t>(i) * n + j] +=
            nd.grad[static_cast<size_t>(i)] * std::exp(pa->value[static_cast<size_t>(i) * n + j] - saved[static_cast<size_t>(i)]);
  });
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias, S eps = S(1e-5)) {
  if (a.rank() != 2) throw ShapeMismatch("layer_norm: rank-2 only");
  int m = a.dim(0), n = a.dim(1);
  if (gain.size() != static_cast<size_t>(n) || bias.size() != static_cast<size_t>(n))
    throw ShapeMismatch("layer_norm: gain/bias must have width " + std::to_string(n));
  std::vector<S> out(a.size());
  std::vector<S> mu(static_cast<size_t>(m)), istd(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    S s = S(0);
    for (int j = 0; j < n; ++j) s += a.values()[static_cast<size_t>(i) * n + j];
    S u = s / static_cast<S>(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) {
      S d = a.values()[static_cast<size_t>(i) * n + j] - u;
      var += d * d;
    }
    var /= static_cast<S>(n);
    S inv = S(1) / std::sqrt(var + eps);
    mu[static_cast<size_t>(i)] = u;
    istd[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] =
          (a.values()[static_cast<size_t>(i) * n + j] - u) * inv * gain.values()[static_cast<size_t>(j)] + bias.values()[static_cast<size_t>(j)];
  }
  auto pa = a.node(), pg = gain.node(), pb = bias.node();
  return detail::make_op<S>("layer_norm", a.shape(), std::move(out), {pa, pg, pb},
                            [pa, pg, pb, m, n, mu = std::move(mu), istd = std::move(istd)](Node<S>& nd) mutable {
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pb->grad[static_cast<size_t>(j)] += nd.grad[static_cast<size_t>(i) * n + j];
    }
    std::vector<S> xhat(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
      S u = mu[static_cast<size_t>(i)], inv = istd[static_cast<size_t>(i)];
      for (int j = 0; j < n; ++j) xhat[static_cast<size_t>(j)] = (pa->value[static_cast<size_t>(i) * n + j] - u) * inv;
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (int j = 0; j < n; ++j)
          pg->grad[static_cast<size_t>(j)] += nd.grad[static_cast<size_t>(i) * n + j] * xhat[static_cast<size_t>(j)];
      }
      if (pa->requires_grad) {
        pa->ensure_grad();
        // dxhat = dy * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * istd
        S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
        for (int j = 0; j < n; ++j) {
          S dxh = nd.grad[static_cast<size_t>(i) * n + j] * pg->value[static_cast<size_t>(j)];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
        }
        mean_dxhat /= static_cast<S>(n);
        mean_dxhat_xhat /= static_cast<S>(n);
        for (int j = 0; j < n; ++j) {
          S dxh = nd.grad[static_cast<size_t>(i) * n + j] * pg->value[static_cast<size_t>(j)];
          pa->grad[static_cast<size_t>(i) * n + j] +=
              (dxh - mean_dxhat - xhat[static_cast<size_t>(j)] * mean_dxhat_xhat) * inv;
        }
      }
    }
  });
}

// ---- indexed / structured ----

template <class S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeMismatch("embedding: table must be rank-2");
  int v = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeMismatch("embedding: empty id sequence");
  std::vector<S> out(ids.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw ShapeMismatch("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v));
    std::copy_n(table.values().begin() + static_cast<size_t>(ids[i]) * d, d, out.begin() + static_cast<long>(i * static_cast<size_t>(d)));
  }
  auto pt = table.node();
  return detail::make_op<S>("embedding", {static_cast<int>(ids.size()), d}, std::move(out), {pt},
                            [pt, ids, d](Node<S>& nd) mutable {
    pt->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        pt->grad[static_cast<size_t>(ids[i]) * d + j] += nd.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
  });
}

template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride, int padding) {
  if (x.rank() != 2 || w.rank() != 3) throw ShapeMismatch("conv1d: x rank-2, w rank-3 required");
  int L = x.dim(0), cin = x.dim(1);
  int cout = w.dim(0), k = w.dim(1), wcin = w.dim(2);
  if (wcin != cin) throw ShapeMismatch("conv1d: channel mismatch");
  if (bias.size() != static_cast<size_t>(cout)) throw ShapeMismatch("conv1d: bias size mismatch");
  if (stride < 1 || padding < 0) throw ShapeMismatch("conv1d: bad stride/padding");
  int lout = (L + 2 * padding - k) / stride + 1;
  if (lout < 1) throw ShapeMismatch("conv1d: output would be empty");
  std::vector<S> out(static_cast<size_t>(lout) * cout);
  for (int t = 0; t < lout; ++t)
    for (int o = 0; o < cout; ++o) {
      S acc = bias.values()[static_cast<size_t>(o)];
      for (int kk = 0; kk < k; ++kk) {
        int pos = t * stride + kk - padding;
        if (pos < 0 || pos >= L) continue;
        const S* xrow = x.values().data() + static_cast<size_t>(pos) * cin;
        const S* wrow = w.values().data() + (static_cast<size_t>(o) * k + kk) * cin;
        for (int ci = 0; ci < cin; ++ci) acc += xrow[ci] * wrow[ci];
      }
      out[static_cast<size_t>(t) * cout + o] = acc;
    }
  auto px = x.node(), pw = w.node(), pb = bias.node();
  return detail::make_op<S>("conv1d", {lout, cout}, std::move(out), {px, pw, pb},
                            [px, pw, pb, L, cin, cout, k, stride, padding, lout](Node<S>& nd) mutable {
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int t = 0; t < lout; ++t)
        for (int o = 0; o < cout; ++o) pb->grad[static_cast<size_t>(o)] += nd.grad[static_cast<size_t>(t) * cout + o];
    }
    for (int t = 0; t < lout; ++t)
      for (int o = 0; o < cout; ++o) {
        S g = nd.grad[static_cast<size_t>(t) * cout + o];
        for (int kk = 0; kk < k; ++kk) {
          int pos = t * stride + kk - padding;
          if (pos < 0 || pos >= L) continue;
          if (pw->requires_grad) {
            pw->ensure_grad();
            for (int ci = 0; ci < cin; ++ci)
              pw->grad[(static_cast<size_t>(o) * k + kk) * cin + static_cast<size_t>(ci)] +=
                  g * px->value[static_cast<size_t>(pos) * cin + static_cast<size_t>(ci)];
          }
          if (px->requires_grad) {
            px->ensure_grad();
            for (int ci = 0; ci < cin; ++ci)
              px->grad[static_cast<size_t>(pos) * cin + static_cast<size_t>(ci)] +=
                  g * pw->value[(static_cast<size_t>(o) * k + kk) * cin + static_cast<size_t>(ci)];
          }
        }
      }
  });
}

// Mean over rows of -log softmax(logits)[i, target_i].
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) throw ShapeMismatch("cross_entropy: logits must be rank-2");
  int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<size_t>(m) != targets.size())
    throw ShapeMismatch("cross_entropy: row/target count mismatch");
  std::vector<S> probs(logits.size());
  S loss = S(0);
  for (int i = 0; i < m; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= n)
      throw ShapeMismatch("cross_entropy: target id out of range");
    S mx = logits.values()[static_cast<size_t>(i) * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, logits.values()[static_cast<size_t>(i) * n + j]);
    S denom = S(0);
    for (int j = 0; j < n; ++j) {
      S e = std::exp(logits.values()[static_cast<size_t>(i) * n + j] - mx);
      probs[static_cast<size_t>(i) * n + j] = e;
      denom += e;
    }
    for (int j = 0; j < n; ++j) probs[static_cast<size_t>(i) * n + j] /= denom;
    loss -= std::log(probs[static_cast<size_t>(i) * n + targets[static_cast<size_t>(i)]]);
  }
  loss /= static_cast<S>(m);
  auto pl = logits.node();
  return detail::make_op<S>("cross_entropy", {1}, {loss}, {pl},
                            [pl, m, n, targets, probs = std::move(probs)](Node<S>& nd) mutable {
    pl->ensure_grad();
    S inv = nd.grad[0] / static_cast<S>(m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        S p = probs[static_cast<size_t>(i) * n + j];
        S y = j == targets[static_cast<size_t>(i)] ? S(1) : S(0);
        pl->grad[static_cast<size_t>(i) * n + j] += inv * (p - y);
      }
  });
}

// ---- backward ----

template <class S>
struct Graph {
  std::vector<Node<S>*> order;  // topological, leaves first
};

template <class S>
Graph<S> build_graph(const Tensor<S>& root) {
  Graph<S> g;
  std::unordered_set<const Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      g.order.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

// Reverse-mode sweep from a scalar loss. Interior grads are reset per
// call; leaf gradients accumulate additively across calls.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1) throw DisconnectedLoss("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.node()->requires_grad) return;  // nothing to do
  Graph<S> g = build_graph(loss);
  for (Node<S>* n : g.order) {
    if (!n->parents.empty()) n->grad.assign(n->value.size(), S(0));
    else n->ensure_grad();
  }
  loss.node()->grad[0] = S(1);
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace sdst::ag
