#pragma once

#include <atomic>
#include <vector>

#include "must/nn.hpp"
#include "must/rng.hpp"

namespace must {

/// Exported per-patient prediction: K discrete hazards, the derived
/// survival curve S(k) = prod_{j<=k}(1 - h_j), and the scalar risk
/// sum_k (1 - S(k)).
struct HazardPrediction {
  std::vector<double> hazards;
  std::vector<double> survival;
  double risk = 0.0;
};

enum class NllVariant {
  kHazardOnly,       // delta * -log h_k + (1-delta) * -log S(k), as printed
  kFullLikelihood,   // uncensored branch adds the -log S(k-1) factor
};

constexpr double kProbFloor = 1e-12;

template <class T>
struct HazardHead {
  Mlp<T> mlp;
  int bins = 0;

  static HazardHead create(ParamStore<T>& store, int fused_dim, int hidden,
                           int bins, Rng& rng) {
    if (bins < 1) throw ConfigError("hazard_bins: must be >= 1");
    HazardHead h;
    h.mlp = Mlp<T>::create(store, "head", std::size_t(fused_dim),
                           {std::size_t(hidden)}, std::size_t(bins), rng);
    h.bins = bins;
    return h;
  }

  struct Forward {
    Tensor<T> hazards;   // [1, K], each in (0, 1)
    Tensor<T> survival;  // [1, K], nonincreasing
    Tensor<T> risk;      // [1, 1]
  };

  Forward forward(const Tensor<T>& fused,
                  std::atomic<long>* clamp_counter = nullptr) const {
    Forward f;
    f.hazards = sigmoid(mlp.forward(fused));
    Tensor<T> one_minus = add_scalar(neg(f.hazards), T(1));
    f.survival =
        exp_t(cumsum_row(log_clamped(one_minus, T(kProbFloor), clamp_counter)));
    f.risk = add_scalar(neg(sum_all(f.survival)), T(bins));
    return f;
  }

  HazardPrediction predict(const Tensor<T>& fused) const {
    Forward f = forward(fused);
    HazardPrediction p;
    for (const T v : f.hazards.value()) p.hazards.push_back(double(v));
    for (const T v : f.survival.value()) p.survival.push_back(double(v));
    p.risk = double(f.risk.item());
    return p;
  }
};

/// Discrete-time survival negative log-likelihood for one patient.
/// interval is 1-based in [1, K].
template <class T>
Tensor<T> nll_loss(const typename HazardHead<T>::Forward& pred, int interval,
                   int event, NllVariant variant = NllVariant::kHazardOnly,
                   std::atomic<long>* clamp_counter = nullptr) {
  const int k = int(pred.hazards.cols());
  if (interval < 1 || interval > k)
    throw ConfigError("nll_loss: interval out of [1, K]");
  if (event != 0 && event != 1)
    throw ConfigError("nll_loss: event flag must be 0 or 1");
  const std::size_t idx = std::size_t(interval - 1);
  if (event == 1) {
    Tensor<T> h_k = col_range(pred.hazards, idx, idx + 1);
    Tensor<T> term = neg(log_clamped(h_k, T(kProbFloor), clamp_counter));
    if (variant == NllVariant::kFullLikelihood && idx > 0) {
      Tensor<T> s_prev = col_range(pred.survival, idx - 1, idx);
      term = sub(term, log_clamped(s_prev, T(kProbFloor), clamp_counter));
    }
    return term;
  }
  Tensor<T> s_k = col_range(pred.survival, idx, idx + 1);
  return neg(log_clamped(s_k, T(kProbFloor), clamp_counter));
}

/// Stage-1 warm-up term for one modality: the survival loss of the shared
/// head phi applied to [g ; eps], with eps ~ N(0, sigma^2 I) of width 2D so
/// the head keeps its 3D input arity. Fresh noise per call from the given
/// stream.
template <class T>
Tensor<T> warmup_term(const HazardHead<T>& head, const Tensor<T>& g,
                      int interval, int event, double sigma, Rng& rng,
                      NllVariant variant = NllVariant::kHazardOnly,
                      std::atomic<long>* clamp_counter = nullptr) {
  const std::size_t d = g.cols();
  Tensor<T> eps = Tensor<T>::zeros(1, 2 * d);
  if (sigma > 0) {
    for (auto& v : eps.value()) v = T(rng.normal(0.0, sigma));
  }
  auto fwd = head.forward(hcat<T>({g, eps}), clamp_counter);
  return nll_loss<T>(fwd, interval, event, variant, clamp_counter);
}

}  // namespace must
