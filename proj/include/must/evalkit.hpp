#pragma once

#include <optional>
#include <string>
#include <vector>

#include "must/errors.hpp"

namespace must {

/// Harrell's concordance index. Pairs (i, j) are comparable iff
/// t_i < t_j and event_i = 1; a pair is concordant when risk_i > risk_j and
/// risk ties earn half credit. Returns nullopt when no pair is comparable.
/// O(n log n); exactly equal to the brute-force enumeration (integer
/// arithmetic in units of half-credits).
std::optional<double> c_index(const std::vector<double>& risks,
                              const std::vector<double>& times,
                              const std::vector<int>& events);

/// Reference O(n^2) enumeration of the same pair rule.
std::optional<double> c_index_brute(const std::vector<double>& risks,
                                    const std::vector<double>& times,
                                    const std::vector<int>& events);

struct KMCurve {
  std::vector<double> times;      // distinct event times, ascending
  std::vector<double> survival;   // product-limit estimate after each time
  std::vector<double> lower;      // 95% CI, log-scale Greenwood
  std::vector<double> upper;
  std::vector<long> at_risk;      // n_i entering each event time
  std::vector<long> events_at;    // d_i at each event time
  std::vector<double> censor_ticks;  // censoring times (for plotting)
};

/// Product-limit estimator with a Greenwood-variance 95% CI computed on the
/// log-survival scale and clipped to [0, 1].
KMCurve kaplan_meier(const std::vector<double>& times,
                     const std::vector<int>& events);

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double observed_b = 0.0;
  double expected_b = 0.0;
  double variance = 0.0;
};

/// Two-group log-rank test over pooled event times; p for 1 df via
/// erfc(sqrt(chi2 / 2)). Returns nullopt when the test is undefined
/// (no events, or zero variance).
std::optional<LogRankResult> log_rank(const std::vector<double>& times_a,
                                      const std::vector<int>& events_a,
                                      const std::vector<double>& times_b,
                                      const std::vector<int>& events_b);

/// Median split; ties at the median go to the low-risk group. Returns
/// (high indices, low indices); together they partition 0..n-1.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratify_median(
    const std::vector<double>& risks);

/// Plain median (average of middle order statistics for even n).
double median_of(std::vector<double> values);

/// Plain cosine of two equal-length vectors; 0 when either norm < 1e-8.
double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);

struct EcdfPoint {
  double value = 0.0;
  double fraction = 0.0;
};

std::vector<EcdfPoint> ecdf(std::vector<double> values);

struct FoldMetrics {
  std::string scenario;
  std::vector<double> per_fold;
  double mean = 0.0;
  double stddev = 0.0;

  static FoldMetrics from(const std::string& scenario,
                          std::vector<double> values);
};

}  // namespace must
