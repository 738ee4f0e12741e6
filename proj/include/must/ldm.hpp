#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "must/checkpoint.hpp"
#include "must/decomp.hpp"
#include "must/nn.hpp"
#include "must/optimizer.hpp"
#include "must/rng.hpp"

namespace must {

struct NoiseSchedule {
  int steps = 1000;              // T
  std::vector<double> betas;     // beta_t, index t-1
  std::vector<double> alphas_cum;  // prod_{i<=t} (1 - beta_i), index t-1

  /// Linear beta ramp; the default satisfies alpha_bar(T) <= 0.01, so z_T is
  /// effectively pure noise.
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02) {
    if (steps < 1) throw ConfigError("noise schedule: steps must be >= 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(std::size_t(steps));
    s.alphas_cum.resize(std::size_t(steps));
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
      const double b =
          steps == 1 ? beta_start
                     : beta_start + (beta_end - beta_start) * t / (steps - 1);
      if (!(b > 0.0 && b < 1.0))
        throw ConfigError("noise schedule: beta out of (0, 1)");
      s.betas[std::size_t(t)] = b;
      prod *= 1.0 - b;
      s.alphas_cum[std::size_t(t)] = prod;
    }
    return s;
  }

  /// Cumulative alpha with the empty-product convention alpha_bar(0) = 1.
  double alpha_bar(int t) const {
    if (t < 0 || t > steps) throw ConfigError("noise schedule: t out of range");
    return t == 0 ? 1.0 : alphas_cum[std::size_t(t) - 1];
  }
};

/// Closed-form forward noising: z_t = sqrt(a_t) z0 + sqrt(1 - a_t) eps.
/// Returns (z_t, eps).
inline std::pair<std::vector<double>, std::vector<double>> forward_noise(
    const std::vector<double>& z0, int t, const NoiseSchedule& schedule,
    Rng& rng) {
  if (t < 1 || t > schedule.steps)
    throw ConfigError("forward_noise: t out of [1, T]");
  const double ab = schedule.alpha_bar(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  std::vector<double> eps(z0.size());
  std::vector<double> zt(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    eps[i] = rng.normal();
    zt[i] = sa * z0[i] + sn * eps[i];
  }
  return {std::move(zt), std::move(eps)};
}

struct DenoiserConfig {
  int layers = 4;
  int width = 256;  // must equal the main model embed dim D
  int heads = 4;
  bool condition_on_cls = true;

  void validate() const {
    if (layers < 1) throw ConfigError("denoiser layers: must be >= 1");
    if (width < 1) throw ConfigError("denoiser width: must be >= 1");
    if (heads < 1 || width % heads != 0)
      throw ConfigError("denoiser heads: width must be divisible by heads");
  }
};

/// Sinusoidal timestep embedding of width D.
inline std::vector<double> timestep_embedding(int t, int dim) {
  std::vector<double> emb(std::size_t(dim), 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    emb[std::size_t(2 * i)] = std::sin(double(t) * freq);
    emb[std::size_t(2 * i + 1)] = std::cos(double(t) * freq);
  }
  if (dim % 2 == 1) emb[std::size_t(dim) - 1] = std::sin(double(t));
  return emb;
}

/// Conditional epsilon-predictor: a small transformer over the token
/// sequence [z_t, t-embedding, c-hat (, CLS)], each token D wide plus a
/// learned role embedding. The network predicts the clean component x0 from
/// the processed z token and the raw input, and the epsilon estimate is
/// derived through the closed-form relation
///   eps = (z_t - sqrt(a_t) x0) / sqrt(1 - a_t),
/// so the steep time-dependent affine structure of the noise target comes
/// from known schedule coefficients instead of network capacity.
template <class T>
class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(init_seed, 0x44454e4fULL));
    const auto d = std::size_t(cfg_.width);
    role_z_ = &store_.create("den.role.z", 1, d, Init::kNormalSmall, rng);
    role_t_ = &store_.create("den.role.t", 1, d, Init::kNormalSmall, rng);
    role_c_ = &store_.create("den.role.c", 1, d, Init::kNormalSmall, rng);
    role_cls_ = &store_.create("den.role.cls", 1, d, Init::kNormalSmall, rng);
    for (int l = 0; l < cfg_.layers; ++l)
      blocks_.push_back(TransformerBlock<T>::create(
          store_, "den.b" + std::to_string(l), d, std::size_t(cfg_.heads),
          4 * d, rng));
    out1_ = Linear<T>::create(store_, "den.out1", 2 * d, 2 * d, rng);
    out2_ = Linear<T>::create(store_, "den.out2", 2 * d, d, rng);
  }

  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  /// Clean-component estimate x0(z_t, t, cond); graph-building.
  Tensor<T> forward_x0(const std::vector<double>& z_t, int t,
                       const std::vector<double>& cond_c,
                       const std::vector<double>& cond_cls) const {
    const auto d = std::size_t(cfg_.width);
    if (z_t.size() != d || cond_c.size() != d)
      throw ShapeError("denoiser: input width mismatch");
    auto as_tensor = [&](const std::vector<double>& v) {
      std::vector<T> data(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) data[i] = T(v[i]);
      return Tensor<T>::from_vector(1, v.size(), std::move(data));
    };
    std::vector<Tensor<T>> tokens;
    tokens.push_back(add(as_tensor(z_t), role_z_->tensor));
    tokens.push_back(
        add(as_tensor(timestep_embedding(t, cfg_.width)), role_t_->tensor));
    tokens.push_back(add(as_tensor(cond_c), role_c_->tensor));
    if (cfg_.condition_on_cls) {
      if (cond_cls.size() != d)
        throw ShapeError("denoiser: cls conditioning width mismatch");
      tokens.push_back(add(as_tensor(cond_cls), role_cls_->tensor));
    }
    Tensor<T> x = vcat(tokens);
    for (const auto& b : blocks_) x = b.forward(x);
    Tensor<T> readout =
        hcat<T>({layer_norm_rows(row(x, 0)), as_tensor(z_t)});
    return out2_.forward(gelu(out1_.forward(readout)));
  }

  /// Epsilon estimate via the closed-form conversion; graph-building.
  Tensor<T> forward(const std::vector<double>& z_t, int t,
                    const std::vector<double>& cond_c,
                    const std::vector<double>& cond_cls,
                    const NoiseSchedule& schedule) const {
    const double ab = schedule.alpha_bar(t);
    Tensor<T> x0 = forward_x0(z_t, t, cond_c, cond_cls);
    std::vector<T> zt(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) zt[i] = T(z_t[i]);
    Tensor<T> z = Tensor<T>::from_vector(1, z_t.size(), std::move(zt));
    const T inv = T(1.0 / std::sqrt(1.0 - ab));
    return scale(sub(z, scale(x0, T(std::sqrt(ab)))), inv);
  }

  std::vector<double> predict(const std::vector<double>& z_t, int t,
                              const std::vector<double>& cond_c,
                              const std::vector<double>& cond_cls,
                              const NoiseSchedule& schedule) const {
    Tensor<T> eps = forward(z_t, t, cond_c, cond_cls, schedule);
    std::vector<double> out(eps.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(eps.value()[i]);
    return out;
  }

  ParamStore<T>& params() { return store_; }
  const DenoiserConfig& config() const { return cfg_; }

 private:
  Tensor<T> tokens_z_raw(const std::vector<double>& z_t) const {
    std::vector<T> data(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) data[i] = T(z_t[i]);
    return Tensor<T>::from_vector(1, z_t.size(), std::move(data));
  }

  DenoiserConfig cfg_;
  ParamStore<T> store_;
  Parameter<T>* role_z_ = nullptr;
  Parameter<T>* role_t_ = nullptr;
  Parameter<T>* role_c_ = nullptr;
  Parameter<T>* role_cls_ = nullptr;
  std::vector<TransformerBlock<T>> blocks_;
  Linear<T> out1_, out2_;
};

/// One training example: the frozen-model specific component to generate and
/// its conditioning vectors.
struct LdmExample {
  std::vector<double> z0;        // target u-hat
  std::vector<double> cond_c;    // c-hat of the Eq.-10 identity side
  std::vector<double> cond_cls;  // frozen CLS_u of the target modality
};

struct LdmTrainConfig {
  long steps = 50000;
  int batch = 32;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  std::uint64_t seed = 1;
  long log_every = 500;

  void validate() const {
    if (steps < 1) throw ConfigError("ldm steps: must be >= 1");
    if (batch < 1) throw ConfigError("ldm batch: must be >= 1");
    if (!(lr > 0)) throw ConfigError("ldm lr: must be > 0");
  }
};

struct LdmTrainLog {
  std::vector<std::pair<long, double>> losses;  // (step, mean batch loss)
};

/// Epsilon-prediction training (Eq.-19 objective) over frozen examples.
/// Uniform t, fresh noise per draw, AdamW steps on the denoiser only.
template <class T>
LdmTrainLog train_ldm(Denoiser<T>& denoiser, const NoiseSchedule& schedule,
                      const std::vector<LdmExample>& examples,
                      const LdmTrainConfig& cfg,
                      const std::function<void(long, double)>& progress = {}) {
  cfg.validate();
  if (examples.empty()) throw ConfigError("train_ldm: no examples");
  Rng rng(mix_seed(cfg.seed, 0x4c444dULL));
  AdamW<T> opt(denoiser.params().all(),
               OptimConfig{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8,
                           DecayMode::kDecoupled});
  LdmTrainLog log;
  for (long step = 0; step < cfg.steps; ++step) {
    denoiser.params().zero_grad();
    double batch_loss = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& ex =
          examples[std::size_t(rng.uniform_int(0, long(examples.size()) - 1))];
      const int t = int(rng.uniform_int(1, schedule.steps));
      auto [z_t, eps] = forward_noise(ex.z0, t, schedule, rng);
      Tensor<T> eps_hat =
          denoiser.forward(z_t, t, ex.cond_c, ex.cond_cls, schedule);
      std::vector<T> target(eps.size());
      for (std::size_t i = 0; i < eps.size(); ++i) target[i] = T(eps[i]);
      Tensor<T> loss = sq_norm(
          sub(eps_hat, Tensor<T>::from_vector(1, eps.size(), std::move(target))));
      const double lv = double(loss.item());
      if (!std::isfinite(lv)) throw NanAbort("train_ldm: non-finite loss");
      loss.backward();
      batch_loss += lv;
    }
    const T inv = T(1.0 / double(cfg.batch));
    for (auto* p : denoiser.params().all())
      for (auto& g : p->tensor.grad()) g *= inv;
    opt.step();
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      log.losses.emplace_back(step, batch_loss / double(cfg.batch));
      if (progress) progress(step, batch_loss / double(cfg.batch));
    }
  }
  return log;
}

/// Mean epsilon-prediction loss over a fixed example set (held-out check).
template <class D>
double ldm_eval_loss(const D& denoiser, const NoiseSchedule& schedule,
                     const std::vector<LdmExample>& examples, int draws_per_ex,
                     std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4c444d45ULL));
  double total = 0;
  long n = 0;
  for (const auto& ex : examples) {
    for (int d = 0; d < draws_per_ex; ++d) {
      const int t = int(rng.uniform_int(1, schedule.steps));
      auto [z_t, eps] = forward_noise(ex.z0, t, schedule, rng);
      const auto eps_hat =
          denoiser.predict(z_t, t, ex.cond_c, ex.cond_cls, schedule);
      double l = 0;
      for (std::size_t i = 0; i < eps.size(); ++i)
        l += (eps_hat[i] - eps[i]) * (eps_hat[i] - eps[i]);
      total += l;
      ++n;
    }
  }
  return total / double(n);
}

/// Evenly spaced DDIM sub-schedule from 1 to T inclusive, descending order
/// for sampling.
inline std::vector<int> ddim_subschedule(const NoiseSchedule& schedule,
                                         int n_steps) {
  if (n_steps < 1) throw ConfigError("ddim: n_steps must be >= 1");
  std::vector<int> taus;
  if (n_steps == 1 || schedule.steps == 1) {
    taus.push_back(schedule.steps);
    return taus;
  }
  for (int i = 0; i < n_steps; ++i) {
    const double pos =
        1.0 + double(schedule.steps - 1) * double(i) / double(n_steps - 1);
    const int t = int(std::lround(pos));
    if (taus.empty() || taus.back() != t) taus.push_back(t);
  }
  return taus;  // ascending; walked backwards by the sampler
}

/// Deterministic DDIM (eta = 0) from z_T ~ N(0, I), one trajectory.
/// Works with any predictor exposing config().width and predict(z, t, c, cls)
/// so closed-form oracle predictors can drive the identity checks.
template <class D>
std::vector<double> ddim_trajectory(const D& denoiser,
                                    const NoiseSchedule& schedule,
                                    const std::vector<double>& cond_c,
                                    const std::vector<double>& cond_cls,
                                    const std::vector<int>& taus, Rng& rng) {
  const std::size_t d = std::size_t(denoiser.config().width);
  std::vector<double> z(d);
  for (auto& v : z) v = rng.normal();
  for (std::size_t i = taus.size(); i-- > 0;) {
    const int t = taus[i];
    const int prev = i == 0 ? 0 : taus[i - 1];
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(prev);
    const auto eps = denoiser.predict(z, t, cond_c, cond_cls, schedule);
    for (std::size_t k = 0; k < d; ++k) {
      const double z0_hat = (z[k] - std::sqrt(1.0 - ab_t) * eps[k]) /
                            std::sqrt(ab_t);
      z[k] = std::sqrt(ab_prev) * z0_hat + std::sqrt(1.0 - ab_prev) * eps[k];
    }
  }
  return z;
}

/// n_samples deterministic DDIM runs with per-sample seeds, averaged; in
/// exact-projector mode the caller passes the projector so the average is
/// mapped back into the specific subspace by (I - P).
template <class D, class T = double>
std::vector<double> ddim_sample(const D& denoiser,
                                const NoiseSchedule& schedule,
                                const std::vector<double>& cond_c,
                                const std::vector<double>& cond_cls,
                                int n_steps, int n_samples,
                                std::uint64_t base_seed,
                                const SharedProjector<T>* project_out = nullptr) {
  if (n_samples < 1) throw ConfigError("ddim: n_samples must be >= 1");
  const auto taus = ddim_subschedule(schedule, n_steps);
  const std::size_t d = std::size_t(denoiser.config().width);
  std::vector<double> avg(d, 0.0);
  for (int s = 0; s < n_samples; ++s) {
    Rng rng(mix_seed(base_seed, 0x5a54ULL + std::uint64_t(s)));
    const auto z = ddim_trajectory(denoiser, schedule, cond_c, cond_cls, taus, rng);
    for (std::size_t k = 0; k < d; ++k) avg[k] += z[k];
  }
  for (auto& v : avg) v /= double(n_samples);
  if (project_out) {
    std::vector<T> tv(avg.size());
    for (std::size_t i = 0; i < avg.size(); ++i) tv[i] = T(avg[i]);
    Tensor<T> projected = project_out->project_specific(
        Tensor<T>::from_vector(1, avg.size(), std::move(tv)));
    for (std::size_t i = 0; i < avg.size(); ++i)
      avg[i] = double(projected.value()[i]);
  }
  return avg;
}

}  // namespace must
