#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "must/errors.hpp"

namespace must {

// ---------------------------------------------------------------------------
// Dense kernels (row-major, accumulate into c).
// ---------------------------------------------------------------------------

// c[n,m] += a[n,k] * b[k,m]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
              std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n,m] += a[n,k] * b[m,k]^T
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[k,m] += a[n,k]^T * b[n,m]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
                 std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Autodiff graph
// ---------------------------------------------------------------------------

/// One node of the reverse-mode tape. Values are row-major matrices; vectors
/// are represented as 1 x n. Gradient buffers are allocated lazily and, for
/// leaf parameters, persist across backward passes (accumulation windows).
template <class T>
struct TensorNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::size_t size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(std::size_t r, std::size_t c, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->rows = r;
    n->cols = c;
    n->value.assign(r * c, T(0));
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
  }

  static Tensor constant(std::size_t r, std::size_t c, T fill) {
    Tensor t = zeros(r, c);
    for (auto& v : t.value()) v = fill;
    return t;
  }

  static Tensor from_vector(std::size_t r, std::size_t c, std::vector<T> data,
                            bool requires_grad = false) {
    if (data.size() != r * c) throw ShapeError("from_vector: size mismatch");
    Tensor t = zeros(r, c, requires_grad);
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar_of(T v) { return constant(1, 1, v); }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  T item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar");
    return node_->value[0];
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  /// Reverse pass from a scalar root. Gradients accumulate into every
  /// requires_grad node reachable through the tape; leaf gradients are not
  /// cleared here, which is what makes gradient accumulation windows work.
  void backward() const {
    if (size() != 1) throw ShapeError("backward(): root must be scalar");
    if (!node_->requires_grad) return;

    // Iterative post-order topological sort over grad-requiring nodes.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        TensorNode<T>* p = n->parents[idx].get();
        ++idx;
        if (p && p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    for (auto* n : order) n->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <class T>
std::shared_ptr<TensorNode<T>> new_op_node(
    std::size_t r, std::size_t c,
    std::vector<std::shared_ptr<TensorNode<T>>> parents) {
  auto n = std::make_shared<TensorNode<T>>();
  n->rows = r;
  n->cols = c;
  n->value.assign(r * c, T(0));
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  n->parents = std::move(parents);
  return n;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] + bv[i];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      for (int s = 0; s < 2; ++s) {
        auto& p = *self.parents[s];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p.grad[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] - bv[i];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa.grad[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pb.grad[i] -= self.grad[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = -av[i];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[i] -= self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] * bv[i];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa.grad[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pb.grad[i] += self.grad[i] * pa.value[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node(), b.node()});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] / bv[i];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa.grad[i] += self.grad[i] / pb.value[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pb.grad[i] -= self.grad[i] * self.value[i] / pb.value[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = c * av[i];
  if (n->requires_grad) {
    n->backward = [c](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[i] += c * self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] + c;
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[i] += self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) {
    const T x = av[i];
    n->value[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                            : std::exp(x) / (T(1) + std::exp(x));
  }
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T y = self.value[i];
        p.grad[i] += self.grad[i] * y * (T(1) - y);
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> exp_t(const Tensor<T>& a) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::exp(av[i]);
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[i] += self.grad[i] * self.value[i];
    };
  }
  return Tensor<T>(n);
}

/// log(max(x, floor)). Inputs below the floor get zero gradient; each clamp
/// event bumps the optional counter so callers can report them.
template <class T>
Tensor<T> log_clamped(const Tensor<T>& a, T floor,
                      std::atomic<long>* clamp_counter = nullptr) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  long clamped = 0;
  for (std::size_t i = 0; i < n->value.size(); ++i) {
    T x = av[i];
    if (x < floor) {
      x = floor;
      ++clamped;
    }
    n->value[i] = std::log(x);
  }
  if (clamped > 0 && clamp_counter) clamp_counter->fetch_add(clamped);
  if (n->requires_grad) {
    n->backward = [floor](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (p.value[i] >= floor) p.grad[i] += self.grad[i] / p.value[i];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i) {
    const T x = av[i];
    n->value[i] = T(0.5) * x * (T(1) + T(std::erf(double(x) * kInvSqrt2)));
  }
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double x = double(p.value[i]);
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        p.grad[i] += self.grad[i] * T(cdf + x * pdf);
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sqrt_t(const Tensor<T>& a) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = std::sqrt(av[i]);
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[i] += self.grad[i] / (T(2) * self.value[i]);
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> abs_t(const Tensor<T>& a) {
  auto n = detail::new_op_node<T>(a.rows(), a.cols(), {a.node()});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n->value.size(); ++i)
    n->value[i] = std::abs(av[i]);
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T x = p.value[i];
        const T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
        p.grad[i] += self.grad[i] * s;
      }
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dims disagree");
  auto n = detail::new_op_node<T>(a.rows(), b.cols(), {a.node(), b.node()});
  gemm_acc(a.value().data(), b.value().data(), n->value.data(), a.rows(),
           a.cols(), b.cols());
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      const std::size_t N = pa.rows, K = pa.cols, M = pb.cols;
      if (pa.requires_grad) {
        pa.ensure_grad();
        gemm_nt_acc(self.grad.data(), pb.value.data(), pa.grad.data(), N, M, K);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        gemm_tn_acc(pa.value.data(), self.grad.data(), pb.grad.data(), N, K, M);
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  auto n = detail::new_op_node<T>(a.cols(), a.rows(), {a.node()});
  const auto& av = a.value();
  const std::size_t R = a.rows(), C = a.cols();
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) n->value[j * R + i] = av[i * C + j];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const std::size_t R = p.rows, C = p.cols;
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j)
          p.grad[i * C + j] += self.grad[j * R + i];
    };
  }
  return Tensor<T>(n);
}

/// x[N,M] + v[1,M], v broadcast over rows.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  if (v.rows() != 1 || v.cols() != x.cols())
    throw ShapeError("add_rowvec: bias shape mismatch");
  auto n = detail::new_op_node<T>(x.rows(), x.cols(), {x.node(), v.node()});
  const auto& xv = x.value();
  const auto& vv = v.value();
  const std::size_t R = x.rows(), C = x.cols();
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j)
      n->value[i * C + j] = xv[i * C + j] + vv[j];
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& px = *self.parents[0];
      auto& pv = *self.parents[1];
      const std::size_t R = px.rows, C = px.cols;
      if (px.requires_grad) {
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          px.grad[i] += self.grad[i];
      }
      if (pv.requires_grad) {
        pv.ensure_grad();
        for (std::size_t i = 0; i < R; ++i)
          for (std::size_t j = 0; j < C; ++j)
            pv.grad[j] += self.grad[i * C + j];
      }
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Row-structured ops
// ---------------------------------------------------------------------------

/// Numerically stabilized softmax applied to each row independently.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  auto n = detail::new_op_node<T>(x.rows(), x.cols(), {x.node()});
  const auto& xv = x.value();
  const std::size_t R = x.rows(), C = x.cols();
  for (std::size_t i = 0; i < R; ++i) {
    const T* row = xv.data() + i * C;
    T* out = n->value.data() + i * C;
    T m = row[0];
    for (std::size_t j = 1; j < C; ++j) m = std::max(m, row[j]);
    T s = T(0);
    for (std::size_t j = 0; j < C; ++j) {
      out[j] = std::exp(row[j] - m);
      s += out[j];
    }
    for (std::size_t j = 0; j < C; ++j) out[j] /= s;
  }
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const std::size_t R = self.rows, C = self.cols;
      for (std::size_t i = 0; i < R; ++i) {
        const T* y = self.value.data() + i * C;
        const T* dy = self.grad.data() + i * C;
        T* dx = p.grad.data() + i * C;
        T dotp = T(0);
        for (std::size_t j = 0; j < C; ++j) dotp += dy[j] * y[j];
        for (std::size_t j = 0; j < C; ++j) dx[j] += y[j] * (dy[j] - dotp);
      }
    };
  }
  return Tensor<T>(n);
}

/// Bias-free layer normalization per row: (x - mean) / sqrt(var + eps).
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, T eps = T(1e-5)) {
  auto n = detail::new_op_node<T>(x.rows(), x.cols(), {x.node()});
  const auto& xv = x.value();
  const std::size_t R = x.rows(), C = x.cols();
  for (std::size_t i = 0; i < R; ++i) {
    const T* row = xv.data() + i * C;
    T* out = n->value.data() + i * C;
    T mean = T(0);
    for (std::size_t j = 0; j < C; ++j) mean += row[j];
    mean /= T(C);
    T var = T(0);
    for (std::size_t j = 0; j < C; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(C);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) out[j] = (row[j] - mean) * inv;
  }
  if (n->requires_grad) {
    n->backward = [eps](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const std::size_t R = self.rows, C = self.cols;
      for (std::size_t i = 0; i < R; ++i) {
        const T* row = p.value.data() + i * C;
        const T* xhat = self.value.data() + i * C;
        const T* dy = self.grad.data() + i * C;
        T* dx = p.grad.data() + i * C;
        T mean = T(0);
        for (std::size_t j = 0; j < C; ++j) mean += row[j];
        mean /= T(C);
        T var = T(0);
        for (std::size_t j = 0; j < C; ++j) {
          const T d = row[j] - mean;
          var += d * d;
        }
        var /= T(C);
        const T inv = T(1) / std::sqrt(var + eps);
        T mean_dy = T(0), mean_dy_xhat = T(0);
        for (std::size_t j = 0; j < C; ++j) {
          mean_dy += dy[j];
          mean_dy_xhat += dy[j] * xhat[j];
        }
        mean_dy /= T(C);
        mean_dy_xhat /= T(C);
        for (std::size_t j = 0; j < C; ++j)
          dx[j] += inv * (dy[j] - mean_dy - xhat[j] * mean_dy_xhat);
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto n = detail::new_op_node<T>(1, 1, {x.node()});
  T s = T(0);
  for (const T v : x.value()) s += v;
  n->value[0] = s;
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const T g = self.grad[0];
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    };
  }
  return Tensor<T>(n);
}

/// Prefix sums along a single row vector [1, K].
template <class T>
Tensor<T> cumsum_row(const Tensor<T>& x) {
  if (x.rows() != 1) throw ShapeError("cumsum_row: expects a row vector");
  auto n = detail::new_op_node<T>(1, x.cols(), {x.node()});
  const auto& xv = x.value();
  T acc = T(0);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    acc += xv[j];
    n->value[j] = acc;
  }
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      T acc = T(0);
      for (std::size_t j = self.cols; j-- > 0;) {
        acc += self.grad[j];
        p.grad[j] += acc;
      }
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Slicing and concatenation
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> row_range(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
  if (r0 >= r1 || r1 > x.rows()) throw ShapeError("row_range: bad range");
  auto n = detail::new_op_node<T>(r1 - r0, x.cols(), {x.node()});
  const std::size_t C = x.cols();
  std::copy(x.value().begin() + r0 * C, x.value().begin() + r1 * C,
            n->value.begin());
  if (n->requires_grad) {
    n->backward = [r0](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const std::size_t C = self.cols;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p.grad[r0 * C + i] += self.grad[i];
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> row(const Tensor<T>& x, std::size_t r) {
  return row_range(x, r, r + 1);
}

template <class T>
Tensor<T> col_range(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > x.cols()) throw ShapeError("col_range: bad range");
  const std::size_t R = x.rows(), C = x.cols(), W = c1 - c0;
  auto n = detail::new_op_node<T>(R, W, {x.node()});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < W; ++j)
      n->value[i * W + j] = xv[i * C + c0 + j];
  if (n->requires_grad) {
    n->backward = [c0](TensorNode<T>& self) {
      auto& p = *self.parents[0];
      p.ensure_grad();
      const std::size_t R = self.rows, W = self.cols, C = p.cols;
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < W; ++j)
          p.grad[i * C + c0 + j] += self.grad[i * W + j];
    };
  }
  return Tensor<T>(n);
}

/// Stacks blocks vertically; all blocks must share a column count.
template <class T>
Tensor<T> vcat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("vcat: no inputs");
  const std::size_t C = parts[0].cols();
  std::size_t R = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) {
    if (p.cols() != C) throw ShapeError("vcat: column mismatch");
    R += p.rows();
    nodes.push_back(p.node());
  }
  auto n = detail::new_op_node<T>(R, C, std::move(nodes));
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), n->value.begin() + off);
    off += p.size();
  }
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      std::size_t off = 0;
      for (auto& pp : self.parents) {
        auto& p = *pp;
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t i = 0; i < p.value.size(); ++i)
            p.grad[i] += self.grad[off + i];
        }
        off += p.value.size();
      }
    };
  }
  return Tensor<T>(n);
}

/// Concatenates blocks side by side; all blocks must share a row count.
template <class T>
Tensor<T> hcat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("hcat: no inputs");
  const std::size_t R = parts[0].rows();
  std::size_t C = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) {
    if (p.rows() != R) throw ShapeError("hcat: row mismatch");
    C += p.cols();
    nodes.push_back(p.node());
  }
  auto n = detail::new_op_node<T>(R, C, std::move(nodes));
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const std::size_t W = p.cols();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < W; ++j)
        n->value[i * C + coff + j] = p.value()[i * W + j];
    coff += W;
  }
  if (n->requires_grad) {
    n->backward = [](TensorNode<T>& self) {
      const std::size_t R = self.rows, C = self.cols;
      std::size_t coff = 0;
      for (auto& pp : self.parents) {
        auto& p = *pp;
        const std::size_t W = p.cols;
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < W; ++j)
              p.grad[i * W + j] += self.grad[i * C + coff + j];
        }
        coff += W;
      }
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / T(x.size()));
}

template <class T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  return sum_all(mul(a, b));
}

template <class T>
Tensor<T> sq_norm(const Tensor<T>& a) {
  return sum_all(mul(a, a));
}

/// Cosine similarity of two vectors. Returns a constant 0 when either norm
/// falls below the guard; that convention keeps gradients finite.
template <class T>
Tensor<T> cosine(const Tensor<T>& a, const Tensor<T>& b,
                 T norm_guard = T(1e-8)) {
  detail::require_same_shape(a, b, "cosine");
  T na = T(0), nb = T(0);
  for (const T v : a.value()) na += v * v;
  for (const T v : b.value()) nb += v * v;
  if (std::sqrt(na) < norm_guard || std::sqrt(nb) < norm_guard)
    return Tensor<T>::scalar_of(T(0));
  return div(dot(a, b), mul(sqrt_t(sq_norm(a)), sqrt_t(sq_norm(b))));
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (const T v : t.value())
    if (!std::isfinite(double(v))) return false;
  return true;
}

}  // namespace must
