#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "must/rng.hpp"
#include "must/tensor.hpp"

namespace must {

/// Named trainable tensor. The wrapped node is a persistent autodiff leaf:
/// its grad buffer accumulates across backward passes until zero_grad().
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;

  std::size_t rows() const { return tensor.rows(); }
  std::size_t cols() const { return tensor.cols(); }
  std::size_t size() const { return tensor.size(); }
  std::vector<T>& values() { return tensor.value(); }
  const std::vector<T>& values() const { return tensor.value(); }
  std::vector<T>& grad() { return tensor.grad(); }
  void zero_grad() { tensor.zero_grad(); }
};

enum class Init { kZeros, kOnes, kXavier, kNormalSmall };

/// Ordered registry of uniquely named parameters. Creation order is the
/// serialization order, so checkpoints are layout-stable for a fixed config.
template <class T>
class ParamStore {
 public:
  Parameter<T>& create(const std::string& name, std::size_t r, std::size_t c,
                       Init init, Rng& rng) {
    if (index_.count(name))
      throw ConfigError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->tensor = Tensor<T>::zeros(r, c, /*requires_grad=*/true);
    init_values(*p, init, rng);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter<T>*> with_prefix(const std::string& prefix) {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
    return out;
  }

  std::size_t count() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  void init_values(Parameter<T>& p, Init init, Rng& rng) {
    auto& v = p.values();
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case Init::kXavier: {
        const double limit = std::sqrt(6.0 / double(p.rows() + p.cols()));
        for (auto& x : v) x = T(rng.uniform(-limit, limit));
        break;
      }
      case Init::kNormalSmall:
        for (auto& x : v) x = T(rng.normal(0.0, 0.02));
        break;
    }
  }

  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <class T>
struct Linear {
  Parameter<T>* W = nullptr;  // [in, out]
  Parameter<T>* b = nullptr;  // [1, out]

  static Linear create(ParamStore<T>& store, const std::string& name,
                       std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.W = &store.create(name + ".W", in, out, Init::kXavier, rng);
    l.b = &store.create(name + ".b", 1, out, Init::kZeros, rng);
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add_rowvec(matmul(x, W->tensor), b->tensor);
  }
};

/// Feed-forward stack with GELU between layers (none after the last).
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  static Mlp create(ParamStore<T>& store, const std::string& name,
                    std::size_t in, const std::vector<std::size_t>& hidden,
                    std::size_t out, Rng& rng) {
    Mlp m;
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      m.layers.push_back(Linear<T>::create(
          store, name + ".l" + std::to_string(i), prev, hidden[i], rng));
      prev = hidden[i];
    }
    m.layers.push_back(Linear<T>::create(
        store, name + ".l" + std::to_string(hidden.size()), prev, out, rng));
    return m;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h);
      if (i + 1 < layers.size()) h = gelu(h);
    }
    return h;
  }
};

/// Multi-head self-attention over a token set [N, D]. Per-head key width is
/// D / heads; no positional terms, so the op is permutation-equivariant.
template <class T>
struct SelfAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  static SelfAttention create(ParamStore<T>& store, const std::string& name,
                              std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("attention: dim must be divisible by heads");
    SelfAttention a;
    a.q = Linear<T>::create(store, name + ".q", dim, dim, rng);
    a.k = Linear<T>::create(store, name + ".k", dim, dim, rng);
    a.v = Linear<T>::create(store, name + ".v", dim, dim, rng);
    a.o = Linear<T>::create(store, name + ".o", dim, dim, rng);
    a.heads = heads;
    return a;
  }

  Tensor<T> forward(const Tensor<T>& tokens) const {
    const std::size_t D = tokens.cols();
    if (D % heads != 0) throw ShapeError("attention: dim not divisible");
    const std::size_t dk = D / heads;
    const T inv_scale = T(1) / T(std::sqrt(double(dk)));
    Tensor<T> Q = q.forward(tokens);
    Tensor<T> K = k.forward(tokens);
    Tensor<T> V = v.forward(tokens);
    std::vector<Tensor<T>> ctx;
    ctx.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor<T> Qh = col_range(Q, h * dk, (h + 1) * dk);
      Tensor<T> Kh = col_range(K, h * dk, (h + 1) * dk);
      Tensor<T> Vh = col_range(V, h * dk, (h + 1) * dk);
      Tensor<T> attn =
          softmax_rows(scale(matmul(Qh, transpose(Kh)), inv_scale));
      ctx.push_back(matmul(attn, Vh));
    }
    return o.forward(hcat(ctx));
  }
};

/// Pre-norm residual attention block: x + SA(LN(x)).
template <class T>
struct AttnBlock {
  SelfAttention<T> attn;

  static AttnBlock create(ParamStore<T>& store, const std::string& name,
                          std::size_t dim, std::size_t heads, Rng& rng) {
    return AttnBlock{SelfAttention<T>::create(store, name, dim, heads, rng)};
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add(x, attn.forward(layer_norm_rows(x)));
  }
};

/// Full pre-norm transformer block: attention followed by a GELU FFN,
/// both residual.
template <class T>
struct TransformerBlock {
  SelfAttention<T> attn;
  Linear<T> ff1, ff2;

  static TransformerBlock create(ParamStore<T>& store, const std::string& name,
                                 std::size_t dim, std::size_t heads,
                                 std::size_t ff_hidden, Rng& rng) {
    TransformerBlock b;
    b.attn = SelfAttention<T>::create(store, name + ".attn", dim, heads, rng);
    b.ff1 = Linear<T>::create(store, name + ".ff1", dim, ff_hidden, rng);
    b.ff2 = Linear<T>::create(store, name + ".ff2", ff_hidden, dim, rng);
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = add(x, attn.forward(layer_norm_rows(x)));
    return add(h, ff2.forward(gelu(ff1.forward(layer_norm_rows(h)))));
  }
};

/// Single-head cross attention: softmax(Q Wq (K Wk)^T / sqrt(dk)) (K Wv).
/// Values come from the key-side token set, so each output row is a convex
/// combination of projected key tokens.
template <class T>
struct CrossAttention {
  Parameter<T>* Wq = nullptr;
  Parameter<T>* Wk = nullptr;
  Parameter<T>* Wv = nullptr;

  static CrossAttention create(ParamStore<T>& store, const std::string& name,
                               std::size_t dim, Rng& rng) {
    CrossAttention c;
    c.Wq = &store.create(name + ".Wq", dim, dim, Init::kXavier, rng);
    c.Wk = &store.create(name + ".Wk", dim, dim, Init::kXavier, rng);
    c.Wv = &store.create(name + ".Wv", dim, dim, Init::kXavier, rng);
    return c;
  }

  Tensor<T> forward(const Tensor<T>& q_tokens, const Tensor<T>& k_tokens) const {
    if (q_tokens.cols() != Wq->rows() || k_tokens.cols() != Wk->rows())
      throw ShapeError("cross_attention: feature dim mismatch");
    Tensor<T> Q = matmul(q_tokens, Wq->tensor);
    Tensor<T> K = matmul(k_tokens, Wk->tensor);
    Tensor<T> V = matmul(k_tokens, Wv->tensor);
    const T inv_scale = T(1) / T(std::sqrt(double(Q.cols())));
    Tensor<T> attn = softmax_rows(scale(matmul(Q, transpose(K)), inv_scale));
    return matmul(attn, V);
  }
};

/// Free-function form of the Eq.-7 kernel for callers holding raw matrices.
template <class T>
Tensor<T> cross_attention(const Tensor<T>& q_tokens, const Tensor<T>& k_tokens,
                          const Tensor<T>& wq, const Tensor<T>& wk,
                          const Tensor<T>& wv) {
  Tensor<T> Q = matmul(q_tokens, wq);
  Tensor<T> K = matmul(k_tokens, wk);
  Tensor<T> V = matmul(k_tokens, wv);
  const T inv_scale = T(1) / T(std::sqrt(double(Q.cols())));
  Tensor<T> attn = softmax_rows(scale(matmul(Q, transpose(K)), inv_scale));
  return matmul(attn, V);
}

}  // namespace must
