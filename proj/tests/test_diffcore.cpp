#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "must/gradcheck.hpp"
#include "must/nn.hpp"
#include "must/optimizer.hpp"
#include "must/tensor.hpp"

using namespace must;

namespace {

Tensor<double> random_tensor(std::size_t r, std::size_t c, Rng& rng,
                             bool requires_grad = false) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::from_vector(r, c, std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("linear: identity weights pass input through") {
  Rng rng(1);
  ParamStore<double> store;
  auto lin = Linear<double>::create(store, "l", 3, 3, rng);
  auto& w = lin.W->values();
  std::fill(w.begin(), w.end(), 0.0);
  for (int i = 0; i < 3; ++i) w[std::size_t(i) * 3 + std::size_t(i)] = 1.0;
  auto x = random_tensor(2, 3, rng);
  auto y = lin.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(x.value()[i]));
}

TEST_CASE("linear: zero input yields broadcast bias") {
  Rng rng(2);
  ParamStore<double> store;
  auto lin = Linear<double>::create(store, "l", 4, 2, rng);
  lin.b->values() = {0.5, -1.25};
  auto y = lin.forward(Tensor<double>::zeros(3, 4));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y.value()[i * 2] == doctest::Approx(0.5));
    CHECK(y.value()[i * 2 + 1] == doctest::Approx(-1.25));
  }
}

TEST_CASE("linear: gradient matches central differences") {
  Rng rng(3);
  ParamStore<double> store;
  auto lin = Linear<double>::create(store, "l", 4, 2, rng);
  auto x = random_tensor(3, 4, rng);
  auto loss = [&]() { return sum_all(mul(lin.forward(x), lin.forward(x))); };
  auto rep = grad_check<double>(loss, store.all(), rng, 10);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("linear: shape mismatch throws") {
  Rng rng(4);
  ParamStore<double> store;
  auto lin = Linear<double>::create(store, "l", 4, 2, rng);
  CHECK_THROWS_AS(lin.forward(Tensor<double>::zeros(3, 5)), ShapeError);
}

TEST_CASE("softmax: equal logits give uniform rows") {
  auto y = softmax_rows(Tensor<double>::constant(2, 5, 3.25));
  for (double v : y.value()) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("softmax: extreme logits stay finite") {
  auto y = softmax_rows(
      Tensor<double>::from_vector(1, 2, {0.0, 1000.0}));
  CHECK(std::isfinite(y.value()[0]));
  CHECK(y.value()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(y.value()[1] == doctest::Approx(1.0));
}

TEST_CASE("softmax: rows sum to one and shifts cancel") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor(3, 6, rng);
    auto y = softmax_rows(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 6; ++c) s += y.value()[r * 6 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    auto shifted = add_scalar(x, 17.5);
    auto y2 = softmax_rows(shifted);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(std::abs(y.value()[i] - y2.value()[i]) <= 1e-12);
  }
}

TEST_CASE("softmax: gradient matches central differences") {
  Rng rng(6);
  ParamStore<double> store;
  auto& p = store.create("x", 2, 5, Init::kXavier, rng);
  auto weights = random_tensor(2, 5, rng);
  auto loss = [&]() {
    return sum_all(mul(softmax_rows(p.tensor), weights));
  };
  auto rep = grad_check<double>(loss, store.all(), rng, 10);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("self-attention: single token reduces to value-output composition") {
  Rng rng(7);
  ParamStore<double> store;
  auto attn = SelfAttention<double>::create(store, "a", 8, 2, rng);
  auto x = random_tensor(1, 8, rng);
  auto y = attn.forward(x);
  // With one token the attention weight is forced to 1, so the output is
  // o(v(x)) exactly.
  auto v = attn.v.forward(x);
  auto expect = attn.o.forward(v);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(expect.value()[i]).epsilon(1e-12));
}

TEST_CASE("self-attention: permutation equivariance") {
  Rng rng(8);
  ParamStore<double> store;
  auto attn = SelfAttention<double>::create(store, "a", 8, 4, rng);
  auto x = random_tensor(5, 8, rng);
  auto y = attn.forward(x);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> px(5 * 8);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      px[i * 8 + j] = x.value()[perm[i] * 8 + j];
  auto y2 = attn.forward(Tensor<double>::from_vector(5, 8, std::move(px)));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(std::abs(y2.value()[i * 8 + j] - y.value()[perm[i] * 8 + j]) <=
            1e-12);
}

TEST_CASE("self-attention: head divisibility enforced") {
  Rng rng(9);
  ParamStore<double> store;
  CHECK_THROWS_AS(SelfAttention<double>::create(store, "a", 10, 4, rng),
                  ConfigError);
}

TEST_CASE("self-attention: gradient matches central differences") {
  Rng rng(10);
  ParamStore<double> store;
  auto attn = SelfAttention<double>::create(store, "a", 8, 2, rng);
  auto x = random_tensor(5, 8, rng);
  auto loss = [&]() {
    auto y = attn.forward(x);
    return sum_all(mul(y, y));
  };
  auto rep = grad_check<double>(loss, store.all(), rng, 8);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("cross-attention: one key token forces its value projection") {
  Rng rng(11);
  ParamStore<double> store;
  auto ca = CrossAttention<double>::create(store, "c", 6, rng);
  auto q = random_tensor(4, 6, rng);
  auto k = random_tensor(1, 6, rng);
  auto y = ca.forward(q, k);
  auto v = matmul(k, ca.Wv->tensor);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(y.value()[i * 6 + j] ==
            doctest::Approx(v.value()[j]).epsilon(1e-12));
}

TEST_CASE("cross-attention: duplicated keys leave output unchanged") {
  Rng rng(12);
  ParamStore<double> store;
  auto ca = CrossAttention<double>::create(store, "c", 6, rng);
  auto q = random_tensor(3, 6, rng);
  auto k = random_tensor(4, 6, rng);
  auto y = ca.forward(q, k);
  std::vector<double> dup(k.value());
  dup.insert(dup.end(), k.value().begin(), k.value().end());
  auto y2 = ca.forward(q, Tensor<double>::from_vector(8, 6, std::move(dup)));
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(y2.value()[i]).epsilon(1e-10));
}

TEST_CASE("cross-attention: gradient matches central differences") {
  Rng rng(13);
  ParamStore<double> store;
  auto ca = CrossAttention<double>::create(store, "c", 6, rng);
  auto q = random_tensor(3, 6, rng);
  auto k = random_tensor(4, 6, rng);
  auto loss = [&]() {
    auto y = ca.forward(q, k);
    return sum_all(mul(y, y));
  };
  auto rep = grad_check<double>(loss, store.all(), rng, 10);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("mlp: identity weights with zero bias pass through") {
  Rng rng(14);
  ParamStore<double> store;
  auto mlp = Mlp<double>::create(store, "m", 3, {}, 3, rng);
  auto& w = mlp.layers[0].W->values();
  std::fill(w.begin(), w.end(), 0.0);
  for (int i = 0; i < 3; ++i) w[std::size_t(i) * 3 + std::size_t(i)] = 1.0;
  auto x = random_tensor(2, 3, rng);
  auto y = mlp.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(x.value()[i]));
}

TEST_CASE("mlp: gradient matches central differences") {
  Rng rng(15);
  ParamStore<double> store;
  auto mlp = Mlp<double>::create(store, "m", 4, {6}, 2, rng);
  auto x = random_tensor(2, 4, rng);
  auto loss = [&]() {
    auto y = mlp.forward(x);
    return sum_all(mul(y, y));
  };
  auto rep = grad_check<double>(loss, store.all(), rng, 10);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("layer_norm: constant row maps to zeros") {
  auto y = layer_norm_rows(Tensor<double>::constant(1, 7, 4.2));
  for (double v : y.value()) CHECK(std::abs(v) <= 1e-9);
}

TEST_CASE("layer_norm: rows have zero mean and unit variance") {
  Rng rng(16);
  auto x = random_tensor(4, 16, rng);
  auto y = layer_norm_rows(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.value()[r * 16 + c];
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) {
      const double d = y.value()[r * 16 + c] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("layer_norm: gradient matches central differences") {
  Rng rng(17);
  ParamStore<double> store;
  auto& p = store.create("x", 3, 8, Init::kXavier, rng);
  auto weights = random_tensor(3, 8, rng);
  auto loss = [&]() { return sum_all(mul(layer_norm_rows(p.tensor), weights)); };
  auto rep = grad_check<double>(loss, store.all(), rng, 12);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("optimizer: zero gradient and zero decay leave parameters fixed") {
  Rng rng(18);
  ParamStore<double> store;
  auto& p = store.create("p", 2, 2, Init::kXavier, rng);
  const auto before = p.values();
  AdamW<double> opt(store.all(), OptimConfig{0.1, 0.0});
  p.zero_grad();
  opt.step();
  CHECK(p.values() == before);
}

TEST_CASE("optimizer: first Adam step matches the hand recurrence") {
  // g = 1, lr = 0.1: m-hat = 1, v-hat = 1, so the update is
  // lr / (1 + eps) = 0.1 * (1 - 1e-8 + ...).
  ParamStore<double> store;
  Rng rng(19);
  auto& p = store.create("p", 1, 1, Init::kZeros, rng);
  p.values()[0] = 1.0;
  AdamW<double> opt(store.all(), OptimConfig{0.1, 0.0});
  p.grad()[0] = 1.0;
  opt.step();
  const double expected = 1.0 - 0.1 / (1.0 + 1e-8);
  CHECK(p.values()[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("optimizer: decoupled decay with zero gradient shrinks by 1-lr*wd") {
  ParamStore<double> store;
  Rng rng(20);
  auto& p = store.create("p", 1, 3, Init::kZeros, rng);
  p.values() = {2.0, -3.0, 0.5};
  AdamW<double> opt(store.all(), OptimConfig{0.01, 0.1});
  p.zero_grad();
  opt.step();
  CHECK(p.values()[0] == doctest::Approx(2.0 * (1 - 0.001)).epsilon(1e-12));
  CHECK(p.values()[1] == doctest::Approx(-3.0 * (1 - 0.001)).epsilon(1e-12));
  CHECK(p.values()[2] == doctest::Approx(0.5 * (1 - 0.001)).epsilon(1e-12));
}

TEST_CASE("optimizer: NaN gradient aborts with the parameter name") {
  ParamStore<double> store;
  Rng rng(21);
  auto& p = store.create("culprit", 1, 1, Init::kZeros, rng);
  AdamW<double> opt(store.all(), OptimConfig{});
  p.grad()[0] = std::nan("");
  try {
    opt.step();
    FAIL("expected NanAbort");
  } catch (const NanAbort& e) {
    CHECK(std::string(e.what()).find("culprit") != std::string::npos);
  }
}

TEST_CASE("grad_check: linear model agrees to near machine precision") {
  Rng rng(22);
  ParamStore<double> store;
  auto& p = store.create("w", 1, 6, Init::kXavier, rng);
  auto x = random_tensor(1, 6, rng);
  auto loss = [&]() { return dot(p.tensor, x); };
  auto rep = grad_check<double>(loss, store.all(), rng, 6);
  CHECK(rep.max_rel_err <= 1e-9);
}

TEST_CASE("grad_check: corrupted backward is caught") {
  Rng rng(23);
  ParamStore<double> store;
  auto& p = store.create("w", 1, 4, Init::kXavier, rng);
  // An op whose backward deliberately doubles the true gradient.
  auto broken_square_sum = [&]() {
    auto n = detail::new_op_node<double>(1, 1, {p.tensor.node()});
    double s = 0;
    for (double v : p.values()) s += v * v;
    n->value[0] = s;
    n->backward = [](TensorNode<double>& self) {
      auto& parent = *self.parents[0];
      parent.ensure_grad();
      for (std::size_t i = 0; i < parent.grad.size(); ++i)
        parent.grad[i] += self.grad[0] * 4.0 * parent.value[i];  // wrong: 4x
    };
    return Tensor<double>(n);
  };
  auto rep = grad_check<double>(broken_square_sum, store.all(), rng, 4);
  CHECK(rep.max_rel_err > 1e-2);
}

TEST_CASE("gradient accumulation equals the mean-loss gradient") {
  Rng rng(24);
  ParamStore<double> store;
  auto mlp = Mlp<double>::create(store, "m", 5, {7}, 1, rng);
  std::vector<Tensor<double>> samples;
  for (int i = 0; i < 6; ++i) samples.push_back(random_tensor(1, 5, rng));

  // Route A: accumulate per-sample gradients, then average.
  store.zero_grad();
  for (const auto& s : samples) sum_all(mul(mlp.forward(s), mlp.forward(s))).backward();
  std::vector<std::vector<double>> acc;
  for (auto* p : store.all()) {
    auto g = p->tensor.grad();
    for (auto& v : g) v /= double(samples.size());
    acc.push_back(g);
  }

  // Route B: a single graph over the mean loss.
  store.zero_grad();
  Tensor<double> total;
  for (const auto& s : samples) {
    auto l = sum_all(mul(mlp.forward(s), mlp.forward(s)));
    total = total.defined() ? add(total, l) : l;
  }
  scale(total, 1.0 / double(samples.size())).backward();

  std::size_t pi = 0;
  for (auto* p : store.all()) {
    const auto& g = p->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(std::abs(g[i] - acc[pi][i]) <= 1e-12 * std::max(1.0, std::abs(g[i])));
    ++pi;
  }
}

TEST_CASE("forward ops stay finite on finite inputs") {
  Rng rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor(3, 6, rng);
    for (auto& v : x.value()) v *= 100.0;  // stress the stabilized paths
    CHECK(all_finite(softmax_rows(x)));
    CHECK(all_finite(sigmoid(x)));
    CHECK(all_finite(gelu(x)));
    CHECK(all_finite(layer_norm_rows(x)));
    CHECK(all_finite(log_clamped(x, 1e-12)));
  }
}

TEST_CASE("cumsum_row: forward and backward") {
  Rng rng(26);
  ParamStore<double> store;
  auto& p = store.create("x", 1, 5, Init::kXavier, rng);
  auto y = cumsum_row(p.tensor);
  double acc = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    acc += p.values()[i];
    CHECK(y.value()[i] == doctest::Approx(acc));
  }
  auto weights = random_tensor(1, 5, rng);
  auto loss = [&]() { return sum_all(mul(cumsum_row(p.tensor), weights)); };
  auto rep = grad_check<double>(loss, store.all(), rng, 5);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("cosine: zero vector yields exactly zero by convention") {
  auto a = Tensor<double>::zeros(1, 4);
  auto b = Tensor<double>::constant(1, 4, 2.0);
  CHECK(cosine(a, b).item() == 0.0);
  CHECK(cosine(b, b).item() == doctest::Approx(1.0));
}
