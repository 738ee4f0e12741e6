#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "must/errors.hpp"
#include "must/nn.hpp"
#include "must/rng.hpp"
#include "must/tensor.hpp"

namespace must {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked_coords = 0;
  std::string worst_param;
  std::size_t worst_coord = 0;

  bool ok(double tolerance) const { return max_rel_err <= tolerance; }
};

/// Central-difference verification of reverse-mode gradients.
///
/// loss_fn must rebuild its graph on every call and read the current
/// parameter values; it returns a scalar tensor. For each parameter a random
/// subset of coordinates is probed with step h = h_scale * max(1, |theta|).
/// The error metric is |fd - g| / max(1, |fd|, |g|), so it behaves as a
/// relative error for large gradients and an absolute one near zero.
template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss_fn,
                           const std::vector<Parameter<T>*>& params, Rng& rng,
                           std::size_t coords_per_param = 8,
                           double h_scale = 1e-5) {
  for (auto* p : params) p->zero_grad();
  Tensor<T> loss = loss_fn();
  if (!std::isfinite(double(loss.item())))
    throw NanAbort("grad_check: non-finite loss");
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->tensor.grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<T>* p = params[pi];
    const std::size_t n = p->size();
    const std::size_t probes = std::min<std::size_t>(coords_per_param, n);
    for (std::size_t t = 0; t < probes; ++t) {
      const std::size_t i =
          n == 1 ? 0 : std::size_t(rng.uniform_int(0, long(n) - 1));
      auto& theta = p->values();
      const T saved = theta[i];
      const double h = h_scale * std::max(1.0, std::abs(double(saved)));
      theta[i] = T(double(saved) + h);
      const double lp = double(loss_fn().item());
      theta[i] = T(double(saved) - h);
      const double lm = double(loss_fn().item());
      theta[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NanAbort("grad_check: non-finite perturbed loss");
      const double fd = (lp - lm) / (2.0 * h);
      const double g = double(analytic[pi][i]);
      const double abs_err = std::abs(fd - g);
      const double rel =
          abs_err / std::max({1.0, std::abs(fd), std::abs(g)});
      ++report.checked_coords;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace must
