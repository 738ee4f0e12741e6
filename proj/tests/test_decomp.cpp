#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "must/decomp.hpp"
#include "must/gradcheck.hpp"

using namespace must;

namespace {

Tensor<double> random_vec(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::from_vector(1, d, std::move(v));
}

EncoderOutputs<double> random_outputs(std::size_t d, Rng& rng) {
  EncoderOutputs<double> e;
  e.g_path = random_vec(d, rng);
  e.g_gene = random_vec(d, rng);
  e.u_path = random_vec(d, rng);
  e.u_gene = random_vec(d, rng);
  e.c_path_from_gene = random_vec(d, rng);
  e.c_gene_from_path = random_vec(d, rng);
  return e;
}

double frob(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("projector: full-rank identity basis gives hat_u = 0, hat_c = c") {
  Rng rng(1);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 6, 6, rng);
  auto& b = proj.basis()->values();
  std::fill(b.begin(), b.end(), 0.0);
  for (int i = 0; i < 6; ++i) b[std::size_t(i) * 6 + std::size_t(i)] = 1.0;
  auto v = random_vec(6, rng);
  auto hat_c = proj.project_shared(v);
  auto hat_u = proj.project_specific(v);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(hat_c.value()[i] == doctest::Approx(v.value()[i]));
    CHECK(std::abs(hat_u.value()[i]) <= 1e-12);
  }
}

TEST_CASE("projector: vectors in the null space are fixed points of I - P") {
  Rng rng(2);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 8, 3, rng);
  // Build u = (I - P) x: already in the null space, so (I - P) u = u.
  auto x = random_vec(8, rng);
  auto u = proj.project_specific(x);
  auto u2 = proj.project_specific(u);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(u2.value()[i] == doctest::Approx(u.value()[i]).epsilon(1e-10));
}

TEST_CASE("projector: complementary components are orthogonal") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store;
    auto proj = SharedProjector<double>::create(store, 10, 4, rng);
    auto u = random_vec(10, rng);
    auto v = random_vec(10, rng);
    auto hat_u = proj.project_specific(u);
    auto hat_c = proj.project_shared(v);
    double d = 0;
    for (std::size_t i = 0; i < 10; ++i)
      d += hat_u.value()[i] * hat_c.value()[i];
    CHECK(std::abs(d) <= 1e-6);
  }
}

TEST_CASE("projector: P x + (I-P) x = x exactly up to roundoff") {
  Rng rng(4);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 12, 5, rng);
  auto x = random_vec(12, rng);
  auto sum = add(proj.project_shared(x), proj.project_specific(x));
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(sum.value()[i] == doctest::Approx(x.value()[i]).epsilon(1e-12));
}

TEST_CASE("projector algebra: idempotent, symmetric, trace r") {
  Rng rng(5);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 9, 4, rng);
  const auto p = proj.projector_matrix();
  const int d = 9;
  // P^2
  std::vector<double> p2(p.size(), 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      for (int j = 0; j < d; ++j)
        p2[std::size_t(i) * d + j] +=
            p[std::size_t(i) * d + k] * p[std::size_t(k) * d + j];
  CHECK(frob(p2, p) <= 1e-6);
  double asym = 0, trace = 0;
  for (int i = 0; i < d; ++i) {
    trace += p[std::size_t(i) * d + i];
    for (int j = 0; j < d; ++j) {
      const double dd =
          p[std::size_t(i) * d + j] - p[std::size_t(j) * d + i];
      asym += dd * dd;
    }
  }
  CHECK(std::sqrt(asym) <= 1e-8);
  CHECK(std::abs(trace - 4.0) <= 1e-4);
  CHECK(proj.gram_residual() <= 1e-6);
}

TEST_CASE("retract: already orthonormal basis is unchanged") {
  Rng rng(6);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 7, 3, rng);
  const auto before = proj.basis()->values();
  auto info = proj.retract(rng);
  CHECK(info.reinitialized_columns == 0);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(std::abs(proj.basis()->values()[i] - before[i]) <= 1e-12);
}

TEST_CASE("retract: scaling the basis preserves the subspace") {
  Rng rng(7);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 8, 3, rng);
  const auto p_before = proj.projector_matrix();
  for (auto& v : proj.basis()->values()) v *= 3.0;
  proj.retract(rng);
  const auto p_after = proj.projector_matrix();
  CHECK(frob(p_before, p_after) <= 1e-8);
}

TEST_CASE("retract: rank-deficient basis reinitializes offending columns") {
  Rng rng(8);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 6, 3, rng);
  auto& b = proj.basis()->values();
  // Make column 2 a copy of column 0.
  for (int row = 0; row < 6; ++row)
    b[std::size_t(row) * 3 + 2] = b[std::size_t(row) * 3 + 0];
  auto info = proj.retract(rng);
  CHECK(info.reinitialized_columns >= 1);
  CHECK(proj.gram_residual() <= 1e-6);
}

TEST_CASE("project: decomposition lands in the right subspaces") {
  Rng rng(9);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 10, 4, rng);
  auto enc = random_outputs(10, rng);
  auto dec = project(proj, enc);
  // hat_c in range(P), hat_u in range(I-P): re-projection is the identity.
  auto c_again = proj.project_shared(dec.hat_c_pg);
  auto u_again = proj.project_specific(dec.hat_u_p);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::abs(c_again.value()[i] - dec.hat_c_pg.value()[i]) <= 1e-5);
    CHECK(std::abs(u_again.value()[i] - dec.hat_u_p.value()[i]) <= 1e-5);
  }
  // shared_c is the average of the two hatted shared components.
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(dec.shared_c.value()[i] ==
          doctest::Approx(0.5 * (dec.hat_c_pg.value()[i] +
                                 dec.hat_c_gp.value()[i])));
}

TEST_CASE("decomp_loss: exact decomposition gives zero") {
  Rng rng(10);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 8, 3, rng);
  auto enc = random_outputs(8, rng);
  auto dec = project(proj, enc);
  // Overwrite the globals with the exact reconstructions.
  enc.g_path = add(dec.hat_u_p, dec.hat_c_gp);
  enc.g_gene = add(dec.hat_u_g, dec.hat_c_pg);
  auto dec2 = project(proj, enc);
  CHECK(decomp_loss(dec2, enc).item() <= 1e-20);
}

TEST_CASE("decomp_loss: offsetting g_P by v adds exactly ||v||^2") {
  Rng rng(11);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 8, 3, rng);
  auto enc = random_outputs(8, rng);
  auto dec = project(proj, enc);
  enc.g_path = add(dec.hat_u_p, dec.hat_c_gp);
  enc.g_gene = add(dec.hat_u_g, dec.hat_c_pg);
  auto v = random_vec(8, rng);
  enc.g_path = add(enc.g_path, v);
  auto dec2 = project(proj, enc);
  double v_sq = 0;
  for (double x : v.value()) v_sq += x * x;
  CHECK(decomp_loss(dec2, enc).item() == doctest::Approx(v_sq).epsilon(1e-10));
}

TEST_CASE("decomp/shared/orth losses match a direct recomputation") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store;
    auto proj = SharedProjector<double>::create(store, 8, 3, rng);
    auto enc = random_outputs(8, rng);
    auto dec = project(proj, enc);

    auto sq_diff = [](const std::vector<double>& a,
                      const std::vector<double>& b) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
      return s;
    };
    auto cos_abs = [](const std::vector<double>& a,
                      const std::vector<double>& b) {
      double num = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      if (std::sqrt(na) < 1e-8 || std::sqrt(nb) < 1e-8) return 0.0;
      return std::abs(num / std::sqrt(na * nb));
    };

    std::vector<double> recon_p(8), recon_g(8);
    for (std::size_t i = 0; i < 8; ++i) {
      recon_p[i] = dec.hat_u_p.value()[i] + dec.hat_c_gp.value()[i];
      recon_g[i] = dec.hat_u_g.value()[i] + dec.hat_c_pg.value()[i];
    }
    const double expect_dec =
        sq_diff(enc.g_path.value(), recon_p) + sq_diff(enc.g_gene.value(), recon_g);
    CHECK(decomp_loss(dec, enc).item() ==
          doctest::Approx(expect_dec).epsilon(1e-10));

    const double expect_sh = sq_diff(dec.hat_c_pg.value(), dec.hat_c_gp.value());
    CHECK(shared_loss(dec).item() == doctest::Approx(expect_sh).epsilon(1e-10));

    const double expect_orth =
        cos_abs(dec.hat_u_p.value(), dec.hat_u_g.value()) +
        cos_abs(dec.hat_u_p.value(), dec.hat_c_pg.value()) +
        cos_abs(dec.hat_u_g.value(), dec.hat_c_gp.value());
    CHECK(orth_loss(dec).item() ==
          doctest::Approx(expect_orth).epsilon(1e-8));
  }
}

TEST_CASE("shared_loss: equal components give zero, unit offset gives one") {
  Rng rng(13);
  Decomposition<double> dec;
  dec.hat_c_pg = random_vec(6, rng);
  dec.hat_c_gp = Tensor<double>::from_vector(1, 6, dec.hat_c_pg.value());
  CHECK(shared_loss(dec).item() == 0.0);
  auto shifted = dec.hat_c_pg.value();
  shifted[2] += 1.0;
  dec.hat_c_gp = Tensor<double>::from_vector(1, 6, shifted);
  CHECK(shared_loss(dec).item() == doctest::Approx(1.0));
}

TEST_CASE("orth_loss: identical specifics score one; exact mode kills "
          "intra-modal terms") {
  Rng rng(14);
  Decomposition<double> dec;
  dec.hat_u_p = random_vec(6, rng);
  dec.hat_u_g = Tensor<double>::from_vector(1, 6, dec.hat_u_p.value());
  dec.hat_c_pg = Tensor<double>::zeros(1, 6);
  dec.hat_c_gp = Tensor<double>::zeros(1, 6);
  CHECK(orth_loss(dec).item() == doctest::Approx(1.0));

  // With a real orthonormal projector the intra-modal cosines vanish.
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 8, 3, rng);
  auto enc = random_outputs(8, rng);
  auto d2 = project(proj, enc);
  auto cos_up_cpg = cosine(d2.hat_u_p, d2.hat_c_pg).item();
  auto cos_ug_cgp = cosine(d2.hat_u_g, d2.hat_c_gp).item();
  CHECK(std::abs(cos_up_cpg) <= 1e-6);
  CHECK(std::abs(cos_ug_cgp) <= 1e-6);
}

TEST_CASE("fuse_for_prediction: 3D layout, zero components give zeros") {
  Rng rng(15);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 6, 2, rng);
  auto enc = random_outputs(6, rng);
  auto dec = project(proj, enc);
  auto fused = fuse_for_prediction(dec);
  CHECK(fused.rows() == 1);
  CHECK(fused.cols() == 18);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(fused.value()[i] == dec.hat_u_p.value()[i]);
    CHECK(fused.value()[6 + i] == dec.shared_c.value()[i]);
    CHECK(fused.value()[12 + i] == dec.hat_u_g.value()[i]);
  }
  Decomposition<double> zeros;
  zeros.hat_u_p = Tensor<double>::zeros(1, 6);
  zeros.shared_c = Tensor<double>::zeros(1, 6);
  zeros.hat_u_g = Tensor<double>::zeros(1, 6);
  auto zf = fuse_for_prediction(zeros);
  for (double v : zf.value()) CHECK(v == 0.0);
}

TEST_CASE("projection gradients flow through the basis") {
  Rng rng(16);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 6, 2, rng);
  // Push B off the orthonormal manifold: on it, the intra-modal cosines sit
  // exactly at the |x| kink where central differences are meaningless.
  for (auto& v : proj.basis()->values()) v += 0.3 * rng.normal();
  auto enc = random_outputs(6, rng);
  auto loss = [&]() {
    auto dec = project(proj, enc);
    return add(add(decomp_loss(dec, enc), proj.orthonormality_penalty()),
               add(shared_loss(dec), orth_loss(dec)));
  };
  auto rep = grad_check<double>(loss, store.all(), rng, 8);
  CHECK(rep.max_rel_err <= 1e-4);
}
