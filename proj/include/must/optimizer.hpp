#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "must/errors.hpp"
#include "must/nn.hpp"

namespace must {

enum class DecayMode {
  kDecoupled,  // AdamW: theta <- theta * (1 - lr * wd), applied after the step
  kCoupled,    // plain Adam with L2: grad += wd * theta
};

struct OptimConfig {
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  DecayMode decay = DecayMode::kDecoupled;
};

/// Adam-family optimizer over a fixed parameter group. Callers accumulate
/// gradients (optionally across a window), average them, then call step();
/// gradients are left untouched so the caller controls zeroing.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      moments_[p->name] = Moments{std::vector<T>(p->size(), T(0)),
                                  std::vector<T>(p->size(), T(0))};
    }
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_count_));
    for (auto* p : params_) {
      auto& m = moments_.at(p->name);
      auto& theta = p->values();
      const auto& g = p->tensor.grad();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        double gi = double(g[i]);
        if (!std::isfinite(gi))
          throw NanAbort("non-finite gradient in parameter " + p->name);
        if (cfg_.decay == DecayMode::kCoupled)
          gi += cfg_.weight_decay * double(theta[i]);
        const double m1 = cfg_.beta1 * double(m.m1[i]) + (1.0 - cfg_.beta1) * gi;
        const double m2 =
            cfg_.beta2 * double(m.m2[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m.m1[i] = T(m1);
        m.m2[i] = T(m2);
        const double mhat = m1 / bc1;
        const double vhat = m2 / bc2;
        double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (cfg_.decay == DecayMode::kDecoupled)
          upd += cfg_.lr * cfg_.weight_decay * double(theta[i]);
        theta[i] = T(double(theta[i]) - upd);
      }
    }
  }

  long step_count() const { return step_count_; }
  void set_step_count(long n) { step_count_ = n; }
  const OptimConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  struct Moments {
    std::vector<T> m1;
    std::vector<T> m2;
  };

  /// Exposed for checkpointing; keyed by parameter name.
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  std::vector<Parameter<T>*> params_;
  OptimConfig cfg_;
  std::map<std::string, Moments> moments_;
  long step_count_ = 0;
};

}  // namespace must
