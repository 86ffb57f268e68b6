#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tipgnn/common.hpp"

namespace tipgnn {

namespace detail {

inline thread_local bool grad_enabled = true;
inline std::atomic<uint64_t> node_seq{0};

template <class T>
struct Buf {
  std::shared_ptr<T[]> p;
  int64_t n = 0;

  static Buf alloc(int64_t n) { return Buf{std::shared_ptr<T[]>(new T[n]), n}; }
  static Buf zeros(int64_t n) {
    Buf b = alloc(n);
    std::fill(b.p.get(), b.p.get() + n, T(0));
    return b;
  }
  T* data() { return p.get(); }
  const T* data() const { return p.get(); }
  explicit operator bool() const { return static_cast<bool>(p); }
};

template <class T>
struct Node {
  Shape shape;
  Buf<T> value;
  Buf<T> grad;  // allocated lazily, zero-filled
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  int64_t numel() const { return value.n; }

  T* grad_ref() {
    if (!grad) grad = Buf<T>::zeros(numel());
    return grad.data();
  }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

// C[m,n] = (or +=) op(A) * op(B)
template <class T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
          bool acc, bool trans_a, bool trans_b) {
  ECMap<T> A(a, trans_a ? k : m, trans_a ? m : k);
  ECMap<T> B(b, trans_b ? n : k, trans_b ? k : n);
  EMap<T> C(c, m, n);
  if (!trans_a && !trans_b) {
    if (acc) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (trans_a && !trans_b) {
    if (acc) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!trans_a && trans_b) {
    if (acc) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    if (acc) C.noalias() += A.transpose() * B.transpose(); else C.noalias() = A.transpose() * B.transpose();
  }
}

}  // namespace detail

/// RAII guard disabling gradient tracking (evaluation / inference paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
};

inline bool grad_enabled() { return detail::grad_enabled; }

/// Dense tensor participating in a reverse-mode computation graph.
///
/// A Tensor is a cheap handle onto a tape node holding the value buffer,
/// an optional gradient buffer and the backward closure. Nodes are
/// topologically ordered by creation, so backward() is a single reverse
/// sweep. Gradients accumulate (+=) across fan-out and across repeated
/// backward() calls until zero_grad().
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = detail::Buf<T>::zeros(shape_numel(t.node_->shape));
    t.node_->seq = detail::node_seq++;
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t = alloc(std::move(shape));
    std::fill(t.mutable_data(), t.mutable_data() + t.numel(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    detail::check(shape_numel(shape) == static_cast<int64_t>(data.size()),
                  detail::str("tensor init: shape ", shape_str(shape),
                              " does not match buffer of ", data.size()));
    Tensor t = alloc(std::move(shape));
    std::copy(data.begin(), data.end(), t.mutable_data());
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  /// Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<T> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  /// Uninitialized non-leaf buffer; op implementations fill it.
  static Tensor alloc(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<T>>();
    t.node_->value = detail::Buf<T>::alloc(shape_numel(shape));
    t.node_->shape = std::move(shape);
    t.node_->seq = detail::node_seq++;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->value.n; }
  int64_t dim(int i) const {
    int r = static_cast<int>(node_->shape.size());
    return node_->shape[(i % r + r) % r];
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  const T* data() const { return node_->value.data(); }
  T* mutable_data() { return node_->value.data(); }

  T item() const {
    detail::check(numel() == 1, detail::str("item(): tensor has shape ",
                                            shape_str(shape()), ", not a scalar"));
    return data()[0];
  }

  /// Gradient buffer; zeros if backward never reached this tensor.
  const T* grad() const { return node_->grad_ref(); }
  T* mutable_grad() { return node_->grad_ref(); }
  void zero_grad() {
    if (node_->grad) std::fill(node_->grad.data(), node_->grad.data() + numel(), T(0));
  }

  /// Reverse sweep from a scalar. The tape stays intact and reusable.
  void backward() const {
    detail::check(numel() == 1, detail::str("backward: output has shape ",
                                            shape_str(shape()), ", expected a scalar"));
    node_->grad_ref()[0] += T(1);

    std::vector<detail::Node<T>*> topo;
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<detail::Node<T>*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      topo.push_back(n);
      for (const auto& p : n->parents) {
        if (seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(topo.begin(), topo.end(),
              [](const auto* a, const auto* b) { return a->seq > b->seq; });
    for (auto* n : topo) {
      if (!n->backfn) continue;  // leaf: keep the accumulated grad
      if (n->grad) n->backfn(*n);
      // interior grads are fully consumed once their backfn ran; dropping
      // them keeps repeated sweeps additive and releases memory early
      n->grad = detail::Buf<T>{};
    }
  }

  // exposed for op implementations
  detail::NodePtr<T> node() const { return node_; }

  void attach(std::vector<detail::NodePtr<T>> parents,
              std::function<void(detail::Node<T>&)> backfn) {
    node_->requires_grad = true;
    node_->parents = std::move(parents);
    node_->backfn = std::move(backfn);
  }

 private:
  detail::NodePtr<T> node_;
};

namespace detail {

template <class T, class... Ts>
bool tracked(const Tensor<T>& t, const Ts&... rest) {
  if constexpr (sizeof...(rest) == 0) {
    return grad_enabled && t.requires_grad();
  } else {
    return grad_enabled && (t.requires_grad() || (rest.requires_grad() || ...));
  }
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// b's shape must equal a trailing suffix of a's shape
inline bool suffix_shape(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

/// matmul: 2-D [m,k]x[k,n], or batched with identical leading dims
/// ([...,m,k] x [...,k,n] -> [...,m,n]).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  detail::check(sa.size() >= 2 && sb.size() == sa.size(),
                detail::str("matmul: rank mismatch ", shape_str(sa), " vs ", shape_str(sb)));
  size_t r = sa.size();
  detail::check(std::equal(sa.begin(), sa.end() - 2, sb.begin()),
                detail::str("matmul: batch dims differ ", shape_str(sa), " vs ", shape_str(sb)));
  int64_t m = sa[r - 2], k = sa[r - 1], k2 = sb[r - 2], n = sb[r - 1];
  detail::check(k == k2, detail::str("matmul: inner dims differ ", shape_str(sa), " vs ", shape_str(sb)));
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < r; ++i) batch *= sa[i];

  Shape so(sa.begin(), sa.end() - 2);
  so.push_back(m);
  so.push_back(n);
  Tensor<T> out = Tensor<T>::alloc(so);

  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = out.mutable_data();
  for (int64_t i = 0; i < batch; ++i) {
    detail::gemm(pa + i * m * k, pb + i * k * n, pc + i * m * n, m, k, n,
                 false, false, false);
  }

  if (detail::tracked(a, b)) {
    auto an = a.node();
    auto bn = b.node();
    out.attach({an, bn}, [an, bn, m, k, n, batch](detail::Node<T>& self) {
      const T* g = self.grad.data();
      if (an->requires_grad || an->backfn) {
        T* da = an->grad_ref();
        const T* pb2 = bn->value.data();
        for (int64_t i = 0; i < batch; ++i)
          detail::gemm(g + i * m * n, pb2 + i * k * n, da + i * m * k, m, n, k,
                       true, false, true);
      }
      if (bn->requires_grad || bn->backfn) {
        T* db = bn->grad_ref();
        const T* pa2 = an->value.data();
        for (int64_t i = 0; i < batch; ++i)
          detail::gemm(pa2 + i * m * k, g + i * m * n, db + i * k * n, k, m, n,
                       true, true, false);
      }
    });
  }
  return out;
}

/// matmul against the transpose of b's last two axes:
/// [...,m,k] x [...,n,k] -> [...,m,n], without materializing the transpose.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  detail::check(sa.size() >= 2 && sb.size() == sa.size(),
                detail::str("matmul_nt: rank mismatch ", shape_str(sa), " vs ",
                            shape_str(sb)));
  size_t r = sa.size();
  detail::check(std::equal(sa.begin(), sa.end() - 2, sb.begin()),
                detail::str("matmul_nt: batch dims differ ", shape_str(sa), " vs ",
                            shape_str(sb)));
  int64_t m = sa[r - 2], k = sa[r - 1], n = sb[r - 2];
  detail::check(k == sb[r - 1], detail::str("matmul_nt: inner dims differ ",
                                            shape_str(sa), " vs ", shape_str(sb)));
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < r; ++i) batch *= sa[i];

  Shape so(sa.begin(), sa.end() - 2);
  so.push_back(m);
  so.push_back(n);
  Tensor<T> out = Tensor<T>::alloc(so);
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = out.mutable_data();
  for (int64_t i = 0; i < batch; ++i)
    detail::gemm(pa + i * m * k, pb + i * n * k, pc + i * m * n, m, k, n,
                 false, false, true);

  if (detail::tracked(a, b)) {
    auto an = a.node();
    auto bn = b.node();
    out.attach({an, bn}, [an, bn, m, k, n, batch](detail::Node<T>& self) {
      const T* g = self.grad.data();
      if (an->requires_grad || an->backfn) {
        T* da = an->grad_ref();
        const T* pb2 = bn->value.data();
        for (int64_t i = 0; i < batch; ++i)
          detail::gemm(g + i * m * n, pb2 + i * n * k, da + i * m * k, m, n, k,
                       true, false, false);
      }
      if (bn->requires_grad || bn->backfn) {
        T* db = bn->grad_ref();
        const T* pa2 = an->value.data();
        for (int64_t i = 0; i < batch; ++i)
          detail::gemm(g + i * m * n, pa2 + i * m * k, db + i * n * k, n, m, k,
                       true, true, false);
      }
    });
  }
  return out;
}

/// add with broadcasting of the right operand over leading axes
/// (b's shape must equal a's shape or a trailing suffix of it).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  detail::check(detail::suffix_shape(sa, sb),
                detail::str("add: shapes ", shape_str(sa), " and ", shape_str(sb),
                            " are not broadcast-compatible"));
  int64_t nb = shape_numel(sb);
  int64_t na = shape_numel(sa);
  int64_t reps = na / std::max<int64_t>(nb, 1);

  Tensor<T> out = Tensor<T>::alloc(sa);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  if (nb == na) {
    for (int64_t i = 0; i < na; ++i) po[i] = pa[i] + pb[i];
  } else {
    for (int64_t r = 0; r < reps; ++r)
      for (int64_t i = 0; i < nb; ++i) po[r * nb + i] = pa[r * nb + i] + pb[i];
  }

  if (detail::tracked(a, b)) {
    auto an = a.node();
    auto bn = b.node();
    out.attach({an, bn}, [an, bn, nb, reps](detail::Node<T>& self) {
      const T* g = self.grad.data();
      int64_t n = self.numel();
      if (an->requires_grad || an->backfn) {
        T* da = an->grad_ref();
        for (int64_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (bn->requires_grad || bn->backfn) {
        T* db = bn->grad_ref();
        if (nb == n) {
          for (int64_t i = 0; i < n; ++i) db[i] += g[i];
        } else {
          for (int64_t r = 0; r < reps; ++r)
            for (int64_t i = 0; i < nb; ++i) db[i] += g[r * nb + i];
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  Tensor<T> out = Tensor<T>::alloc(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  if (detail::tracked(a)) {
    auto an = a.node();
    out.attach({an}, [an, s](detail::Node<T>& self) {
      const T* g = self.grad.data();
      T* da = an->grad_ref();
      for (int64_t i = 0; i < self.numel(); ++i) da[i] += g[i] * s;
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scalar_mul(b, T(-1)));
}

/// elementwise product; shapes must match exactly.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(),
                detail::str("mul: shapes differ ", shape_str(a.shape()), " vs ",
                            shape_str(b.shape())));
  Tensor<T> out = Tensor<T>::alloc(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::tracked(a, b)) {
    auto an = a.node();
    auto bn = b.node();
    out.attach({an, bn}, [an, bn](detail::Node<T>& self) {
      const T* g = self.grad.data();
      int64_t n2 = self.numel();
      if (an->requires_grad || an->backfn) {
        T* da = an->grad_ref();
        const T* pb2 = bn->value.data();
        for (int64_t i = 0; i < n2; ++i) da[i] += g[i] * pb2[i];
      }
      if (bn->requires_grad || bn->backfn) {
        T* db = bn->grad_ref();
        const T* pa2 = an->value.data();
        for (int64_t i = 0; i < n2; ++i) db[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

namespace detail {

template <class T, class FwdFn, class BwdFn>
Tensor<T> unary_op(const Tensor<T>& x, FwdFn fwd, BwdFn bwd_factor_from_xy) {
  Tensor<T> out = Tensor<T>::alloc(x.shape());
  const T* px = x.data();
  T* py = out.mutable_data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) py[i] = fwd(px[i]);
  if (tracked(x)) {
    auto xn = x.node();
    out.attach({xn}, [xn, bwd_factor_from_xy](Node<T>& self) {
      const T* g = self.grad.data();
      const T* y = self.value.data();
      const T* x2 = xn->value.data();
      T* dx = xn->grad_ref();
      for (int64_t i = 0; i < self.numel(); ++i)
        dx[i] += g[i] * bwd_factor_from_xy(x2[i], y[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T xi, T) { return xi > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> cos_t(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::cos(v); },
                          [](T xi, T) { return -std::sin(xi); });
}

template <class T>
Tensor<T> log_t(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::log(v); },
                          [](T xi, T) { return T(1) / xi; });
}

/// log(sigmoid(x)) computed without saturating; the stable route for
/// cross-entropy losses on raw scores.
template <class T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x,
      [](T v) { return v >= T(0) ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
      [](T xi, T) {
        // d/dx log(sigmoid(x)) = sigmoid(-x)
        return xi >= T(0) ? std::exp(-xi) / (T(1) + std::exp(-xi))
                          : T(1) / (T(1) + std::exp(xi));
      });
}

/// Concatenate along the last axis; all inputs share the leading shape.
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& xs) {
  detail::check(!xs.empty(), "concat: no inputs");
  const Shape& s0 = xs[0].shape();
  int64_t last_total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    detail::check(s.size() == s0.size() &&
                      std::equal(s.begin(), s.end() - 1, s0.begin()),
                  detail::str("concat: leading dims differ ", shape_str(s0),
                              " vs ", shape_str(s)));
    last_total += s.back();
  }
  Shape so = s0;
  so.back() = last_total;
  int64_t rows = shape_numel(so) / last_total;

  Tensor<T> out = Tensor<T>::alloc(so);
  T* po = out.mutable_data();
  int64_t off = 0;
  std::vector<int64_t> offsets;
  std::vector<int64_t> widths;
  for (const auto& x : xs) {
    int64_t w = x.shape().back();
    const T* px = x.data();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(po + r * last_total + off, px + r * w, sizeof(T) * w);
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }

  bool any = false;
  for (const auto& x : xs) any = any || x.requires_grad();
  if (grad_enabled() && any) {
    std::vector<detail::NodePtr<T>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    Tensor<T>& outref = out;
    outref.attach(parents, [parents, offsets, widths, rows, last_total](detail::Node<T>& self) {
      const T* g = self.grad.data();
      for (size_t j = 0; j < parents.size(); ++j) {
        auto& p = parents[j];
        if (!(p->requires_grad || p->backfn)) continue;
        T* dp = p->grad_ref();
        int64_t w = widths[j], o = offsets[j];
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < w; ++i) dp[r * w + i] += g[r * last_total + o + i];
      }
    });
  }
  return out;
}

/// View with a new shape sharing the value buffer (no copy).
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::check(shape_numel(shape) == x.numel(),
                detail::str("reshape: ", shape_str(x.shape()), " -> ",
                            shape_str(shape), " changes element count"));
  Tensor<T> out;
  out = Tensor<T>::alloc({1});
  auto n = out.node();
  n->shape = std::move(shape);
  n->value = x.node()->value;  // share
  if (detail::tracked(x)) {
    auto xn = x.node();
    out.attach({xn}, [xn](detail::Node<T>& self) {
      const T* g = self.grad.data();
      T* dx = xn->grad_ref();
      for (int64_t i = 0; i < self.numel(); ++i) dx[i] += g[i];
    });
  }
  return out;
}

/// Permute axes (copying). transpose(x) on 2-D equals permute(x, {1,0}).
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const Shape& s = x.shape();
  int r = static_cast<int>(s.size());
  detail::check(static_cast<int>(axes.size()) == r,
                detail::str("permute: got ", axes.size(), " axes for rank ", r));
  Shape so(r);
  for (int i = 0; i < r; ++i) so[i] = s[axes[i]];

  std::vector<int64_t> in_strides(r, 1), out_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
  for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * so[i + 1];

  // stride in the input for each output axis
  std::vector<int64_t> gather(r);
  for (int i = 0; i < r; ++i) gather[i] = in_strides[axes[i]];

  Tensor<T> out = Tensor<T>::alloc(so);
  const T* px = x.data();
  T* po = out.mutable_data();
  int64_t n = x.numel();
  std::vector<int64_t> idx(r, 0);
  for (int64_t o = 0; o < n; ++o) {
    int64_t src = 0;
    int64_t rem = o;
    for (int i = 0; i < r; ++i) {
      int64_t q = rem / out_strides[i];
      rem -= q * out_strides[i];
      src += q * gather[i];
    }
    po[o] = px[src];
  }

  if (detail::tracked(x)) {
    auto xn = x.node();
    out.attach({xn}, [xn, out_strides, gather, r](detail::Node<T>& self) {
      const T* g = self.grad.data();
      T* dx = xn->grad_ref();
      int64_t n2 = self.numel();
      for (int64_t o = 0; o < n2; ++o) {
        int64_t src = 0;
        int64_t rem = o;
        for (int i = 0; i < r; ++i) {
          int64_t q = rem / out_strides[i];
          rem -= q * out_strides[i];
          src += q * gather[i];
        }
        dx[src] += g[o];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  int r = static_cast<int>(x.shape().size());
  detail::check(r >= 2, "transpose: needs rank >= 2");
  std::vector<int> axes(r);
  for (int i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

/// Row gather: out[i, ...] = x[indices[i], ...]; backward scatter-adds.
template <class T>
Tensor<T> index_rows(const Tensor<T>& x, std::vector<int64_t> indices) {
  const Shape& s = x.shape();
  detail::check(s.size() >= 1, "index_rows: needs rank >= 1");
  int64_t rows = s[0];
  int64_t width = x.numel() / std::max<int64_t>(rows, 1);
  for (int64_t i : indices)
    detail::check(i >= 0 && i < rows,
                  detail::str("index_rows: index ", i, " out of range [0,", rows, ")"));
  Shape so = s;
  so[0] = static_cast<int64_t>(indices.size());
  Tensor<T> out = Tensor<T>::alloc(so);
  const T* px = x.data();
  T* po = out.mutable_data();
  for (size_t i = 0; i < indices.size(); ++i)
    std::memcpy(po + i * width, px + indices[i] * width, sizeof(T) * width);

  if (detail::tracked(x)) {
    auto xn = x.node();
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
    out.attach({xn}, [xn, idx, width](detail::Node<T>& self) {
      const T* g = self.grad.data();
      T* dx = xn->grad_ref();
      for (size_t i = 0; i < idx->size(); ++i) {
        T* dst = dx + (*idx)[i] * width;
        const T* src = g + i * width;
        for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

/// Softmax over the last axis restricted to unmasked slots.
/// mask: 1 = valid, 0 = ignored; empty mask means all valid. Rows with no
/// valid slot produce all zeros (and are counted in *empty_rows if given).
template <class T>
Tensor<T> masked_softmax_last(const Tensor<T>& x, const std::vector<uint8_t>& mask,
                              int64_t* empty_rows = nullptr) {
  detail::check(mask.empty() || static_cast<int64_t>(mask.size()) == x.numel(),
                detail::str("masked_softmax: mask size ", mask.size(),
                            " does not cover tensor ", shape_str(x.shape())));
  int64_t w = x.shape().back();
  int64_t rows = x.numel() / w;
  Tensor<T> out = Tensor<T>::alloc(x.shape());
  const T* px = x.data();
  T* po = out.mutable_data();
  const uint8_t* pm = mask.empty() ? nullptr : mask.data();
  int64_t empties = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * w;
    T* yr = po + r * w;
    const uint8_t* mr = pm ? pm + r * w : nullptr;
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t i = 0; i < w; ++i)
      if (!mr || mr[i]) mx = std::max(mx, xr[i]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      std::fill(yr, yr + w, T(0));
      ++empties;
      continue;
    }
    T sum = 0;
    for (int64_t i = 0; i < w; ++i) {
      if (!mr || mr[i]) {
        yr[i] = std::exp(xr[i] - mx);
        sum += yr[i];
      } else {
        yr[i] = T(0);
      }
    }
    for (int64_t i = 0; i < w; ++i) yr[i] /= sum;
  }
  if (empty_rows) *empty_rows = empties;

  if (detail::tracked(x)) {
    auto xn = x.node();
    out.attach({xn}, [xn, w](detail::Node<T>& self) {
      const T* g = self.grad.data();
      const T* y = self.value.data();
      T* dx = xn->grad_ref();
      int64_t rows2 = self.numel() / w;
      for (int64_t r = 0; r < rows2; ++r) {
        const T* yr = y + r * w;
        const T* gr = g + r * w;
        T dot = 0;
        for (int64_t i = 0; i < w; ++i) dot += gr[i] * yr[i];
        T* dr = dx + r * w;
        for (int64_t i = 0; i < w; ++i) dr[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::alloc({1});
  const T* px = x.data();
  T acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  out.mutable_data()[0] = acc;
  if (detail::tracked(x)) {
    auto xn = x.node();
    out.attach({xn}, [xn](detail::Node<T>& self) {
      T g = self.grad.data()[0];
      T* dx = xn->grad_ref();
      for (int64_t i = 0; i < xn->numel(); ++i) dx[i] += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  detail::check(x.numel() > 0, "mean: empty tensor");
  return scalar_mul(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

/// Inverted dropout: scales kept entries by 1/(1-p) at train time so that
/// evaluation is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, std::mt19937_64& rng) {
  detail::check(p >= 0.0 && p < 1.0, detail::str("dropout: p=", p, " outside [0,1)"));
  if (!train || p == 0.0) return x;
  int64_t n = x.numel();
  auto keep = std::make_shared<std::vector<T>>(n);
  std::bernoulli_distribution drop(p);
  T scale = T(1.0 / (1.0 - p));
  for (int64_t i = 0; i < n; ++i) (*keep)[i] = drop(rng) ? T(0) : scale;

  Tensor<T> out = Tensor<T>::alloc(x.shape());
  const T* px = x.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * (*keep)[i];
  if (detail::tracked(x)) {
    auto xn = x.node();
    out.attach({xn}, [xn, keep](detail::Node<T>& self) {
      const T* g = self.grad.data();
      T* dx = xn->grad_ref();
      for (int64_t i = 0; i < self.numel(); ++i) dx[i] += g[i] * (*keep)[i];
    });
  }
  return out;
}

}  // namespace tipgnn
