#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vtgan/core.hpp"

namespace vtgan {

// ---------------------------------------------------------------------------
// Dense N-d tensor with reverse-mode autodiff. Every differentiable op builds
// a node holding its parents and a backward closure; Tensor::backward() on a
// scalar walks the graph in reverse topological order and accumulates into
// the .grad buffers of every reachable tensor with requires_grad set.
//
// Tensors are immutable after they enter a graph, except for grad
// accumulation and the explicit mutable_data() hook used by initialization,
// optimizers and finite-difference checks.
// ---------------------------------------------------------------------------

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // whether each parent required grad when the op was recorded; flag flips
  // after recording (freeze/unfreeze) do not affect an existing graph
  std::vector<std::uint8_t> parent_mask;
  std::function<void(TensorImpl&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// RAII scope that disables graph recording (forward values only).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(std::move(shape), {}, requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> d(numel(shape), value);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(T value) { return full({1}, value); }

  /// Wraps a flat row-major buffer; empty data means zero-fill.
  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<T>>();
    std::size_t n = numel(shape);
    if (data.empty()) data.assign(n, T(0));
    check<ShapeError>(data.size() == n, "tensor data length ", data.size(),
                      " does not match shape ", shape_str(shape));
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  const std::vector<T>& data() const { return impl_->data; }

  /// Raw write access; valid before the tensor enters a graph (init,
  /// optimizer updates, finite-difference probes).
  std::vector<T>& mutable_data() { return impl_->data; }

  T item() const {
    check<ShapeError>(size() == 1, "item() on tensor of shape ",
                      shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<T>& grad() const {
    check<Error>(has_grad(), "gradient not populated");
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Value copy that is cut off from the recorded graph.
  Tensor detach() const {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
  }

  /// Reverse pass from a scalar. Repeated calls accumulate into grads.
  void backward() const {
    check<Error>(size() == 1,
                 "backward() requires a scalar loss, got shape ",
                 shape_str(shape()));
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    topo_sort(impl_.get(), seen, order);
    impl_->ensure_grad();
    impl_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<T>* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    // Intermediate nodes release their cotangents; leaves keep theirs.
    for (TensorImpl<T>* node : order) {
      if (node->backward_fn) node->grad.clear();
    }
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl)
      : impl_(std::move(impl)) {}

  static void topo_sort(TensorImpl<T>* root,
                        std::unordered_set<TensorImpl<T>*>& seen,
                        std::vector<TensorImpl<T>*>& order) {
    // Iterative DFS; graphs are deep enough to overflow a recursive walk.
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorImpl<T>* p = node->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorImpl<T>> impl_;

  template <typename U>
  friend Tensor<U> make_op(Shape, std::vector<U>, std::vector<Tensor<U>>,
                           std::function<void(TensorImpl<U>&)>);
};

/// Builds an op result node. Records parents/backward only when grads are
/// enabled and some input needs them.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorImpl<T>&)> backward_fn) {
#ifndef NDEBUG
  check<NumericError>(all_finite(data), "non-finite values in op output ",
                      shape_str(shape));
#endif
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (detail::grad_enabled) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
      impl->requires_grad = true;
      impl->parents.reserve(inputs.size());
      impl->parent_mask.reserve(inputs.size());
      for (const auto& in : inputs) {
        impl->parents.push_back(in.impl());
        impl->parent_mask.push_back(in.requires_grad() ? 1 : 0);
      }
      impl->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<T>(std::move(impl));
}

/// Grad buffer of the node's parent, or null if that parent did not require
/// grad when the op was recorded.
template <typename T>
std::vector<T>* grad_buf(TensorImpl<T>& self, std::size_t parent) {
  if (!self.parent_mask[parent]) return nullptr;
  TensorImpl<T>& p = *self.parents[parent];
  p.ensure_grad();
  return &p.grad;
}

// --------------------------- elementwise ops -------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* op) {
  check<ShapeError>(a.shape() == b.shape(), op, ": shape mismatch ",
                    shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  const auto &da = a.data(), &db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](TensorImpl<T>& self) {
    for (int p = 0; p < 2; ++p) {
      if (auto* g = grad_buf(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  const auto &da = a.data(), &db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](TensorImpl<T>& self) {
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_buf(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  const auto &da = a.data(), &db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [](TensorImpl<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * pb.data[i];
    if (auto* g = grad_buf(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * pa.data[i];
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * s;
  return make_op<T>(a.shape(), std::move(out), {a}, [s](TensorImpl<T>& self) {
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + s;
  return make_op<T>(a.shape(), std::move(out), {a}, [](TensorImpl<T>& self) {
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(da[i]);
  return make_op<T>(a.shape(), std::move(out), {a}, [](TensorImpl<T>& self) {
    auto& p = *self.parents[0];
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        T x = p.data[i];
        (*g)[i] += self.grad[i] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
      }
  });
}

/// min(x, 0), the building block of the hinge terms.
template <typename T>
Tensor<T> min_zero(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(da[i], T(0));
  return make_op<T>(a.shape(), std::move(out), {a}, [](TensorImpl<T>& self) {
    auto& p = *self.parents[0];
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (p.data[i] < T(0)) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> log_val(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    check<NumericError>(da[i] > T(0), "log of non-positive value ", da[i]);
    out[i] = std::log(da[i]);
  }
  return make_op<T>(a.shape(), std::move(out), {a}, [](TensorImpl<T>& self) {
    auto& p = *self.parents[0];
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] / p.data[i];
  });
}

/// Clamp to [lo, hi]; gradient passes only where the value was in range.
template <typename T>
Tensor<T> clip(const Tensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.size());
  const auto& da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(std::max(da[i], lo), hi);
  return make_op<T>(a.shape(), std::move(out), {a},
                    [lo, hi](TensorImpl<T>& self) {
                      auto& p = *self.parents[0];
                      if (auto* g = grad_buf(self, 0))
                        for (std::size_t i = 0; i < g->size(); ++i)
                          if (p.data[i] > lo && p.data[i] < hi)
                            (*g)[i] += self.grad[i];
                    });
}

// ----------------------------- reductions ----------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.data()) s += x;
  return make_op<T>({1}, {s}, {a}, [](TensorImpl<T>& self) {
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.size()));
}

/// Mean over rows of an M x N matrix -> length-N vector.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  check<ShapeError>(a.rank() == 2, "mean_rows expects rank-2, got ",
                    shape_str(a.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(n, T(0));
  const auto& da = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += da[i * n + j];
  T inv = T(1) / static_cast<T>(m);
  for (auto& v : out) v *= inv;
  return make_op<T>({n}, std::move(out), {a}, [m, n, inv](TensorImpl<T>& self) {
    if (auto* g = grad_buf(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          (*g)[i * n + j] += self.grad[j] * inv;
  });
}

// ------------------------- shape manipulation ------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  check<ShapeError>(numel(new_shape) == a.size(), "cannot reshape ",
                    shape_str(a.shape()), " to ", shape_str(new_shape));
  std::vector<T> out = a.data();
  return make_op<T>(std::move(new_shape), std::move(out), {a},
                    [](TensorImpl<T>& self) {
                      if (auto* g = grad_buf(self, 0))
                        for (std::size_t i = 0; i < g->size(); ++i)
                          (*g)[i] += self.grad[i];
                    });
}

namespace detail {
// Decomposes sizes around `axis` so slicing/concat reduce to 3-level loops.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer,
                       std::size_t& mid, std::size_t& inner) {
  outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  mid = s[axis];
  inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start,
                std::size_t len) {
  check<ShapeError>(axis < a.rank(), "slice axis ", axis, " out of range for ",
                    shape_str(a.shape()));
  check<ShapeError>(start + len <= a.dim(axis), "slice [", start, ",",
                    start + len, ") out of range for ", shape_str(a.shape()));
  std::size_t outer, mid, inner;
  detail::axis_split(a.shape(), axis, outer, mid, inner);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto& da = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t m = 0; m < len; ++m)
      std::copy_n(&da[(o * mid + start + m) * inner], inner,
                  &out[(o * len + m) * inner]);
  return make_op<T>(std::move(out_shape), std::move(out), {a},
                    [outer, mid, inner, start, len](TensorImpl<T>& self) {
                      if (auto* g = grad_buf(self, 0))
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t m = 0; m < len; ++m) {
                            const T* src = &self.grad[(o * len + m) * inner];
                            T* dst = &(*g)[(o * mid + start + m) * inner];
                            for (std::size_t i = 0; i < inner; ++i)
                              dst[i] += src[i];
                          }
                    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  check<Error>(!parts.empty(), "concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  check<ShapeError>(axis < s0.size(), "concat axis ", axis,
                    " out of range for ", shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    check<ShapeError>(p.rank() == s0.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      check<ShapeError>(i == axis || p.dim(i) == s0[i],
                        "concat shape mismatch ", shape_str(p.shape()),
                        " vs ", shape_str(s0));
    total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::size_t outer, mid0, inner;
  detail::axis_split(out_shape, axis, outer, mid0, inner);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> mids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t m = p.dim(axis);
    const auto& dp = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&dp[o * m * inner], m * inner,
                  &out[(o * total + off) * inner]);
    mids.push_back(m);
    off += m;
  }
  return make_op<T>(
      std::move(out_shape), std::move(out), parts,
      [outer, total, inner, mids](TensorImpl<T>& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < mids.size(); ++p) {
          std::size_t m = mids[p];
          if (auto* g = grad_buf(self, p))
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = &self.grad[(o * total + off) * inner];
              T* dst = &(*g)[o * m * inner];
              for (std::size_t i = 0; i < m * inner; ++i) dst[i] += src[i];
            }
          off += m;
        }
      });
}

// ------------------------------- matmul ------------------------------------

/// C = op(A) * op(B) for rank-2 tensors, with optional transposes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  check<ShapeError>(a.rank() == 2 && b.rank() == 2,
                    "matmul expects rank-2 operands, got ",
                    shape_str(a.shape()), " and ", shape_str(b.shape()));
  std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  check<ShapeError>(k == kb, "matmul inner dims differ: ",
                    shape_str(a.shape()), (trans_a ? "^T" : ""), " vs ",
                    shape_str(b.shape()), (trans_b ? "^T" : ""));

  const auto &da = a.data(), &db = b.data();
  std::size_t lda = a.dim(1), ldb = b.dim(1);
  auto a_at = [&](std::size_t i, std::size_t j) {
    return trans_a ? da[j * lda + i] : da[i * lda + j];
  };
  auto b_at = [&](std::size_t i, std::size_t j) {
    return trans_b ? db[j * ldb + i] : db[i * ldb + j];
  };
  std::vector<T> out(m * n, T(0));
  parallel_for(m, (m * n * k > 1u << 20) ? 1 : m, [&](std::size_t lo,
                                                      std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        T av = a_at(i, kk);
        if (av == T(0)) continue;
        T* row = &out[i * n];
        for (std::size_t j = 0; j < n; ++j) row[j] += av * b_at(kk, j);
      }
  });
  return make_op<T>(
      {m, n}, std::move(out), {a, b},
      [m, n, k, lda, ldb, trans_a, trans_b](TensorImpl<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& go = self.grad;
        auto a_at = [&](std::size_t i, std::size_t j) {
          return trans_a ? pa.data[j * lda + i] : pa.data[i * lda + j];
        };
        auto b_at = [&](std::size_t i, std::size_t j) {
          return trans_b ? pb.data[j * ldb + i] : pb.data[i * ldb + j];
        };
        if (auto* ga = grad_buf(self, 0)) {
          // dA(i,kk) += sum_j go(i,j) * B(kk,j)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              T s = T(0);
              for (std::size_t j = 0; j < n; ++j)
                s += go[i * n + j] * b_at(kk, j);
              std::size_t idx = trans_a ? kk * lda + i : i * lda + kk;
              (*ga)[idx] += s;
            }
        }
        if (auto* gb = grad_buf(self, 1)) {
          // dB(kk,j) += sum_i A(i,kk) * go(i,j)
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t j = 0; j < n; ++j) {
              T s = T(0);
              for (std::size_t i = 0; i < m; ++i)
                s += a_at(i, kk) * go[i * n + j];
              std::size_t idx = trans_b ? j * ldb + kk : kk * ldb + j;
              (*gb)[idx] += s;
            }
        }
      });
}

}  // namespace vtgan
