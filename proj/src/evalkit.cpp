#include "must/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace must {

namespace {

void check_survival_inputs(const std::vector<double>& times,
                           const std::vector<int>& events, std::size_t n_min,
                           const char* who) {
  if (times.size() != events.size())
    throw ConfigError(std::string(who) + ": times/events length mismatch");
  if (times.size() < n_min)
    throw ConfigError(std::string(who) + ": too few samples");
  for (int e : events)
    if (e != 0 && e != 1)
      throw ConfigError(std::string(who) + ": event flags must be 0/1");
}

// Fenwick tree over risk ranks, counting inserted patients.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1))
      ++tree_[i];
  }
  // count of inserted ranks in [0, rank]
  long prefix(std::size_t rank) const {
    long s = 0;
    for (std::size_t i = rank + 1; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<long> tree_;
};

}  // namespace

std::optional<double> c_index(const std::vector<double>& risks,
                              const std::vector<double>& times,
                              const std::vector<int>& events) {
  check_survival_inputs(times, events, 2, "c_index");
  if (risks.size() != times.size())
    throw ConfigError("c_index: risks length mismatch");
  const std::size_t n = risks.size();

  // Rank-compress risks.
  std::vector<double> sorted_risks(risks);
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()),
                     sorted_risks.end());
  auto rank_of = [&](double r) {
    return std::size_t(std::lower_bound(sorted_risks.begin(),
                                        sorted_risks.end(), r) -
                       sorted_risks.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  // Sweep times in decreasing order. When patient i (uncensored) is the
  // earlier member of a pair, every already-inserted patient has a strictly
  // later time and is comparable; credit is 2 per concordant pair and 1 per
  // risk tie, in integer half-units.
  Fenwick tree(sorted_risks.size());
  long long num_half = 0;
  long long comparable = 0;
  long inserted = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      const std::size_t idx = order[t];
      if (events[idx] != 1) continue;
      const std::size_t r = rank_of(risks[idx]);
      const long below_or_eq = tree.prefix(r);
      const long below = r == 0 ? 0 : tree.prefix(r - 1);
      const long eq = below_or_eq - below;
      num_half += 2LL * below + eq;
      comparable += inserted;
    }
    for (std::size_t t = i; t < j; ++t) {
      tree.add(rank_of(risks[order[t]]));
      ++inserted;
    }
    i = j;
  }
  if (comparable == 0) return std::nullopt;
  return double(num_half) / (2.0 * double(comparable));
}

std::optional<double> c_index_brute(const std::vector<double>& risks,
                                    const std::vector<double>& times,
                                    const std::vector<int>& events) {
  check_survival_inputs(times, events, 2, "c_index_brute");
  if (risks.size() != times.size())
    throw ConfigError("c_index_brute: risks length mismatch");
  const std::size_t n = risks.size();
  long long num_half = 0;
  long long comparable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] != 1) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !(times[i] < times[j])) continue;
      ++comparable;
      if (risks[i] > risks[j])
        num_half += 2;
      else if (risks[i] == risks[j])
        num_half += 1;
    }
  }
  if (comparable == 0) return std::nullopt;
  return double(num_half) / (2.0 * double(comparable));
}

KMCurve kaplan_meier(const std::vector<double>& times,
                     const std::vector<int>& events) {
  check_survival_inputs(times, events, 1, "kaplan_meier");
  const std::size_t n = times.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  KMCurve curve;
  constexpr double z = 1.959963984540054;  // Phi^-1(0.975)
  double surv = 1.0;
  double greenwood = 0.0;  // sum d / (n (n - d)), variance of log S
  std::size_t i = 0;
  long at_risk = long(n);
  while (i < n) {
    std::size_t j = i;
    long d = 0, c = 0;
    const double t = times[order[i]];
    while (j < n && times[order[j]] == t) {
      if (events[order[j]] == 1)
        ++d;
      else
        ++c;
      ++j;
    }
    if (c > 0)
      for (long k = 0; k < c; ++k) curve.censor_ticks.push_back(t);
    if (d > 0) {
      curve.times.push_back(t);
      curve.at_risk.push_back(at_risk);
      curve.events_at.push_back(d);
      surv *= double(at_risk - d) / double(at_risk);
      if (at_risk - d > 0)
        greenwood += double(d) / (double(at_risk) * double(at_risk - d));
      curve.survival.push_back(surv);
      if (surv <= 0.0) {
        curve.lower.push_back(0.0);
        curve.upper.push_back(0.0);
      } else {
        const double se = std::sqrt(greenwood);
        curve.lower.push_back(std::max(0.0, surv * std::exp(-z * se)));
        curve.upper.push_back(std::min(1.0, surv * std::exp(z * se)));
      }
    }
    at_risk -= d + c;
    i = j;
  }
  return curve;
}

std::optional<LogRankResult> log_rank(const std::vector<double>& times_a,
                                      const std::vector<int>& events_a,
                                      const std::vector<double>& times_b,
                                      const std::vector<int>& events_b) {
  check_survival_inputs(times_a, events_a, 1, "log_rank");
  check_survival_inputs(times_b, events_b, 1, "log_rank");

  struct Obs {
    double t;
    int e;
    int group;
  };
  std::vector<Obs> all;
  all.reserve(times_a.size() + times_b.size());
  for (std::size_t i = 0; i < times_a.size(); ++i)
    all.push_back({times_a[i], events_a[i], 0});
  for (std::size_t i = 0; i < times_b.size(); ++i)
    all.push_back({times_b[i], events_b[i], 1});
  std::sort(all.begin(), all.end(),
            [](const Obs& x, const Obs& y) { return x.t < y.t; });

  LogRankResult res;
  long na = long(times_a.size());
  long nb = long(times_b.size());
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    long da = 0, db = 0, ra = 0, rb = 0;
    const double t = all[i].t;
    while (j < all.size() && all[j].t == t) {
      if (all[j].e == 1) (all[j].group == 0 ? da : db)++;
      (all[j].group == 0 ? ra : rb)++;
      ++j;
    }
    const long d = da + db;
    const long ntot = na + nb;
    if (d > 0 && ntot > 0) {
      res.observed_a += double(da);
      res.observed_b += double(db);
      res.expected_a += double(d) * double(na) / double(ntot);
      res.expected_b += double(d) * double(nb) / double(ntot);
      if (ntot > 1) {
        res.variance += double(d) * (double(na) / double(ntot)) *
                        (double(nb) / double(ntot)) *
                        (double(ntot - d) / double(ntot - 1));
      }
    }
    na -= ra;
    nb -= rb;
    i = j;
  }
  if (res.observed_a + res.observed_b == 0.0) return std::nullopt;
  if (res.variance <= 0.0) {
    // Identical groups with events still have variance > 0; zero variance
    // means one group never shares risk sets with events. Undefined.
    return std::nullopt;
  }
  const double diff = res.observed_a - res.expected_a;
  res.chi_square = diff * diff / res.variance;
  res.p_value = std::erfc(std::sqrt(res.chi_square / 2.0));
  if (res.p_value <= 0.0) res.p_value = std::numeric_limits<double>::min();
  return res;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratify_median(
    const std::vector<double>& risks) {
  if (risks.empty()) throw ConfigError("stratify_median: empty input");
  const double med = median_of(risks);
  std::vector<std::size_t> high, low;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (risks[i] > med)
      high.push_back(i);
    else
      low.push_back(i);
  }
  return {high, low};
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median_of: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ConfigError("cosine_similarity: length mismatch");
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (std::sqrt(na) < 1e-8 || std::sqrt(nb) < 1e-8) return 0.0;
  return num / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<EcdfPoint> ecdf(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<EcdfPoint> pts;
  pts.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    pts.push_back({values[i], double(i + 1) / double(values.size())});
  return pts;
}

FoldMetrics FoldMetrics::from(const std::string& scenario,
                              std::vector<double> values) {
  FoldMetrics fm;
  fm.scenario = scenario;
  fm.per_fold = std::move(values);
  if (fm.per_fold.empty()) return fm;
  double s = 0;
  for (double v : fm.per_fold) s += v;
  fm.mean = s / double(fm.per_fold.size());
  double var = 0;
  for (double v : fm.per_fold) var += (v - fm.mean) * (v - fm.mean);
  fm.stddev = fm.per_fold.size() > 1
                  ? std::sqrt(var / double(fm.per_fold.size() - 1))
                  : 0.0;
  return fm;
}

}  // namespace must
