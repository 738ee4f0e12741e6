#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "must/gradcheck.hpp"
#include "must/ldm.hpp"

using namespace must;

namespace {

/// Closed-form perfect predictor for a known target z0*.
struct OracleDenoiser {
  std::vector<double> z0;
  const NoiseSchedule* schedule = nullptr;
  DenoiserConfig cfg;

  const DenoiserConfig& config() const { return cfg; }

  std::vector<double> predict(const std::vector<double>& z, int t,
                              const std::vector<double>&,
                              const std::vector<double>&) const {
    const double ab = schedule->alpha_bar(t);
    std::vector<double> eps(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
      eps[i] = (z[i] - std::sqrt(ab) * z0[i]) / std::sqrt(1.0 - ab);
    return eps;
  }
};

std::vector<double> random_vec(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("schedule: betas in (0,1), alpha_bar strictly decreasing to <= 0.01") {
  auto s = NoiseSchedule::linear();
  CHECK(s.steps == 1000);
  for (double b : s.betas) {
    CHECK(b > 0.0);
    CHECK(b < 1.0);
  }
  for (int t = 1; t < s.steps; ++t)
    CHECK(s.alpha_bar(t + 1) < s.alpha_bar(t));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(s.steps) <= 0.01);
}

TEST_CASE("forward_noise: reconstruction identity and range checks") {
  auto s = NoiseSchedule::linear();
  Rng rng(1);
  auto z0 = random_vec(6, rng);
  CHECK_THROWS_AS(forward_noise(z0, 0, s, rng), ConfigError);
  CHECK_THROWS_AS(forward_noise(z0, 1001, s, rng), ConfigError);
  for (int t : {1, 250, 1000}) {
    auto [zt, eps] = forward_noise(z0, t, s, rng);
    const double ab = s.alpha_bar(t);
    for (std::size_t i = 0; i < z0.size(); ++i)
      CHECK(zt[i] == doctest::Approx(std::sqrt(ab) * z0[i] +
                                     std::sqrt(1 - ab) * eps[i]));
  }
}

TEST_CASE("forward_noise: t=1 is nearly clean, t=T is nearly pure noise") {
  auto s = NoiseSchedule::linear();
  Rng rng(2);
  auto z0 = random_vec(8, rng);
  auto [z1, eps1] = forward_noise(z0, 1, s, rng);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(std::abs(z1[i] - z0[i]) <= 0.05 * std::abs(z0[i]) + 0.05);
  auto [zT, epsT] = forward_noise(z0, s.steps, s, rng);
  double corr_num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    corr_num += zT[i] * epsT[i];
    na += zT[i] * zT[i];
    nb += epsT[i] * epsT[i];
  }
  CHECK(corr_num / std::sqrt(na * nb) > 0.99);
}

TEST_CASE("forward_noise: Monte-Carlo moments match the closed form") {
  auto s = NoiseSchedule::linear();
  Rng rng(3);
  const int t = 400;
  const double ab = s.alpha_bar(t);
  const std::vector<double> z0 = {1.5, -0.5, 0.0, 2.0};
  const int n = 100000;
  std::vector<double> mean(4, 0.0), m2(4, 0.0);
  for (int i = 0; i < n; ++i) {
    auto [zt, eps] = forward_noise(z0, t, s, rng);
    for (int k = 0; k < 4; ++k) {
      mean[std::size_t(k)] += zt[std::size_t(k)];
      m2[std::size_t(k)] += zt[std::size_t(k)] * zt[std::size_t(k)];
    }
  }
  const double sigma_mean = std::sqrt((1.0 - ab) / double(n));
  for (int k = 0; k < 4; ++k) {
    mean[std::size_t(k)] /= n;
    const double expect = std::sqrt(ab) * z0[std::size_t(k)];
    CHECK(std::abs(mean[std::size_t(k)] - expect) <= 3.0 * sigma_mean);
    const double var =
        m2[std::size_t(k)] / n - mean[std::size_t(k)] * mean[std::size_t(k)];
    CHECK(var == doctest::Approx(1.0 - ab).epsilon(0.05));
  }
}

TEST_CASE("denoiser: output shape D, conditioning is wired") {
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 11);
  Rng rng(4);
  auto z = random_vec(8, rng);
  auto c = random_vec(8, rng);
  auto cls = random_vec(8, rng);
  auto eps1 = den.predict(z, 100, c, cls);
  CHECK(eps1.size() == 8);

  auto c2 = c;
  c2[3] += 1.0;
  auto eps2 = den.predict(z, 100, c2, cls);
  double diff = 0;
  for (std::size_t i = 0; i < 8; ++i) diff += std::abs(eps1[i] - eps2[i]);
  CHECK(diff > 1e-8);

  // Timestep also wired.
  auto eps3 = den.predict(z, 900, c, cls);
  diff = 0;
  for (std::size_t i = 0; i < 8; ++i) diff += std::abs(eps1[i] - eps3[i]);
  CHECK(diff > 1e-8);
}

TEST_CASE("denoiser: cls conditioning can be ablated") {
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.condition_on_cls = false;
  Denoiser<double> den(cfg, 12);
  Rng rng(5);
  auto z = random_vec(8, rng);
  auto c = random_vec(8, rng);
  auto cls1 = random_vec(8, rng);
  auto cls2 = random_vec(8, rng);
  // Without CLS conditioning the CLS argument is ignored entirely.
  auto e1 = den.predict(z, 10, c, cls1);
  auto e2 = den.predict(z, 10, c, cls2);
  CHECK(e1 == e2);
}

TEST_CASE("denoiser: gradient check") {
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 13);
  Rng rng(6);
  auto z = random_vec(8, rng);
  auto c = random_vec(8, rng);
  auto cls = random_vec(8, rng);
  auto loss = [&]() {
    auto eps = den.forward(z, 77, c, cls);
    return sum_all(mul(eps, eps));
  };
  auto rep = grad_check<double>(loss, den.params().all(), rng, 4);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("ddim: sub-schedule covers t = 1 and t = T") {
  auto s = NoiseSchedule::linear();
  auto taus = ddim_subschedule(s, 50);
  REQUIRE(!taus.empty());
  CHECK(taus.front() == 1);
  CHECK(taus.back() == 1000);
  for (std::size_t i = 1; i < taus.size(); ++i) CHECK(taus[i] > taus[i - 1]);
}

TEST_CASE("ddim: oracle denoiser recovers z0 exactly at every step") {
  auto s = NoiseSchedule::linear();
  Rng rng(7);
  OracleDenoiser oracle;
  oracle.z0 = random_vec(6, rng);
  oracle.schedule = &s;
  oracle.cfg.width = 6;

  const auto taus = ddim_subschedule(s, 50);
  // Walk the exact DDIM recursion; the x0 estimate must equal z0* at every
  // sub-schedule step, and the final state must equal z0*.
  std::vector<double> z = random_vec(6, rng);
  for (std::size_t i = taus.size(); i-- > 0;) {
    const int t = taus[i];
    const int prev = i == 0 ? 0 : taus[i - 1];
    const double ab_t = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(prev);
    const auto eps = oracle.predict(z, t, {}, {});
    for (std::size_t k = 0; k < 6; ++k) {
      const double z0_hat =
          (z[k] - std::sqrt(1 - ab_t) * eps[k]) / std::sqrt(ab_t);
      CHECK(std::abs(z0_hat - oracle.z0[k]) <= 1e-8);
      z[k] = std::sqrt(ab_prev) * z0_hat + std::sqrt(1 - ab_prev) * eps[k];
    }
  }
  for (std::size_t k = 0; k < 6; ++k)
    CHECK(std::abs(z[k] - oracle.z0[k]) <= 1e-8);

  // The library sampler agrees.
  auto sampled = ddim_sample(oracle, s, {}, {}, 50, 1, 123);
  for (std::size_t k = 0; k < 6; ++k)
    CHECK(std::abs(sampled[k] - oracle.z0[k]) <= 1e-8);
}

TEST_CASE("ddim: single-sample determinism under a fixed seed") {
  auto s = NoiseSchedule::linear();
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 14);
  Rng rng(8);
  auto c = random_vec(8, rng);
  auto cls = random_vec(8, rng);
  auto a = ddim_sample(den, s, c, cls, 20, 1, 555);
  auto b = ddim_sample(den, s, c, cls, 20, 1, 555);
  CHECK(a == b);
}

TEST_CASE("ddim: sample averaging is the mean of individual trajectories") {
  auto s = NoiseSchedule::linear();
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 15);
  Rng rng(9);
  auto c = random_vec(8, rng);
  auto cls = random_vec(8, rng);
  const std::uint64_t base = 777;
  auto avg = ddim_sample(den, s, c, cls, 10, 3, base);
  const auto taus = ddim_subschedule(s, 10);
  std::vector<double> manual(8, 0.0);
  for (int smp = 0; smp < 3; ++smp) {
    Rng srng(mix_seed(base, 0x5a54ULL + std::uint64_t(smp)));
    auto z = ddim_trajectory(den, s, c, cls, taus, srng);
    for (std::size_t k = 0; k < 8; ++k) manual[k] += z[k];
  }
  for (std::size_t k = 0; k < 8; ++k) {
    manual[k] /= 3.0;
    CHECK(avg[k] == doctest::Approx(manual[k]).epsilon(1e-12));
  }
}

TEST_CASE("ddim: exact-mode projection puts samples in the specific subspace") {
  auto s = NoiseSchedule::linear();
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 16);
  Rng rng(10);
  ParamStore<double> store;
  auto proj = SharedProjector<double>::create(store, 8, 3, rng);
  auto c = random_vec(8, rng);
  auto cls = random_vec(8, rng);
  auto u = ddim_sample(den, s, c, cls, 10, 2, 99, &proj);
  std::vector<double> pu(8, 0.0);
  const auto p = proj.projector_matrix();
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      pu[std::size_t(i)] +=
          p[std::size_t(i) * 8 + std::size_t(j)] * u[std::size_t(j)];
  double norm = 0;
  for (double v : pu) norm += v * v;
  CHECK(std::sqrt(norm) <= 1e-5);
}

TEST_CASE("train_ldm: constant target is recovered by sampling") {
  auto s = NoiseSchedule::linear();
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 17);

  Rng rng(11);
  LdmExample ex;
  ex.z0 = {0.8, -0.4, 0.2, 0.6, -0.9, 0.1, 0.0, 0.5};
  ex.cond_c = random_vec(8, rng);
  ex.cond_cls = random_vec(8, rng);

  LdmTrainConfig lc;
  lc.steps = 1500;
  lc.batch = 16;
  lc.lr = 2e-3;
  lc.seed = 3;
  lc.log_every = 500;
  auto log = train_ldm(den, s, {ex}, lc);
  REQUIRE(!log.losses.empty());
  CHECK(log.losses.back().second < log.losses.front().second);

  auto sampled = ddim_sample(den, s, ex.cond_c, ex.cond_cls, 50, 64, 42);
  double err = 0;
  for (std::size_t k = 0; k < 8; ++k)
    err += (sampled[k] - ex.z0[k]) * (sampled[k] - ex.z0[k]);
  CHECK(std::sqrt(err) <= 0.05);
}

TEST_CASE("train_ldm: held-out loss decreases from initialization") {
  auto s = NoiseSchedule::linear();
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  Denoiser<double> den(cfg, 18);
  Rng rng(12);
  std::vector<LdmExample> train, held;
  for (int i = 0; i < 6; ++i) {
    LdmExample ex;
    ex.cond_c = random_vec(8, rng);
    ex.cond_cls = random_vec(8, rng);
    ex.z0 = ex.cond_c;  // learnable relation between cond and target
    for (auto& v : ex.z0) v *= 0.5;
    (i < 4 ? train : held).push_back(ex);
  }
  const double before = ldm_eval_loss(den, s, held, 40, 5);
  LdmTrainConfig lc;
  lc.steps = 600;
  lc.batch = 16;
  lc.lr = 2e-3;
  lc.seed = 4;
  train_ldm(den, s, train, lc);
  const double after = ldm_eval_loss(den, s, held, 40, 5);
  CHECK(after < before);
}
