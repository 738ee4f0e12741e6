#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "must/evalkit.hpp"
#include "must/pipeline.hpp"
#include "must/rng.hpp"

using namespace must;

namespace {

struct Sample {
  std::vector<double> risks, times;
  std::vector<int> events;
};

Sample random_sample(Rng& rng, std::size_t n, bool with_ties,
                     double censor_frac) {
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    double t = rng.uniform(0.0, 10.0);
    double r = rng.normal();
    if (with_ties) {
      t = std::floor(t * 2.0) / 2.0 + 0.5;  // heavy time ties
      r = std::floor(r * 4.0) / 4.0;        // risk ties
    }
    s.times.push_back(t);
    s.risks.push_back(r);
    s.events.push_back(rng.uniform() < censor_frac ? 0 : 1);
  }
  return s;
}

}  // namespace

TEST_CASE("c_index: perfect anti-monotone risks score 1.0") {
  std::vector<double> times = {1, 2, 3, 4, 5};
  std::vector<double> risks = {5, 4, 3, 2, 1};
  std::vector<int> events = {1, 1, 1, 1, 1};
  auto c = c_index(risks, times, events);
  REQUIRE(c.has_value());
  CHECK(*c == 1.0);
}

TEST_CASE("c_index: all-equal risks score exactly 0.5") {
  std::vector<double> times = {1, 2, 3, 4};
  std::vector<double> risks = {7, 7, 7, 7};
  std::vector<int> events = {1, 1, 0, 1};
  auto c = c_index(risks, times, events);
  REQUIRE(c.has_value());
  CHECK(*c == 0.5);
}

TEST_CASE("c_index: no comparable pairs yields the undefined signal") {
  std::vector<double> times = {1, 2, 3};
  std::vector<double> risks = {1, 2, 3};
  std::vector<int> events = {0, 0, 0};
  CHECK_FALSE(c_index(risks, times, events).has_value());
  // A single event at the latest time also has no later comparator.
  std::vector<int> last_event = {0, 0, 1};
  CHECK_FALSE(c_index(risks, times, last_event).has_value());
}

TEST_CASE("c_index: fast path equals brute force exactly on 100 instances") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + std::size_t(rng.uniform_int(0, 198));
    const bool ties = trial % 2 == 0;
    const double censor = trial % 3 == 0 ? 0.6 : 0.25;
    auto s = random_sample(rng, n, ties, censor);
    auto fast = c_index(s.risks, s.times, s.events);
    auto brute = c_index_brute(s.risks, s.times, s.events);
    REQUIRE(fast.has_value() == brute.has_value());
    if (fast) CHECK(*fast == *brute);  // bitwise: both integer-ratio based
  }
}

TEST_CASE("c_index: invariant under strictly increasing risk transforms") {
  Rng rng(42);
  auto s = random_sample(rng, 80, true, 0.3);
  auto base = c_index(s.risks, s.times, s.events);
  auto transformed = s.risks;
  for (auto& r : transformed) r = std::exp(r) + 3.0;
  auto after = c_index(transformed, s.times, s.events);
  REQUIRE(base.has_value());
  REQUIRE(after.has_value());
  CHECK(*base == *after);
}

TEST_CASE("kaplan_meier: all censored keeps survival at one") {
  std::vector<double> times = {1, 2, 3};
  std::vector<int> events = {0, 0, 0};
  auto km = kaplan_meier(times, events);
  CHECK(km.times.empty());  // no drops: S stays 1 with zero-width CI
  CHECK(km.censor_ticks.size() == 3);
}

TEST_CASE("kaplan_meier: three events give S = 2/3, 1/3, 0") {
  auto km = kaplan_meier({1, 2, 3}, {1, 1, 1});
  REQUIRE(km.times.size() == 3);
  CHECK(km.survival[0] == doctest::Approx(2.0 / 3.0));
  CHECK(km.survival[1] == doctest::Approx(1.0 / 3.0));
  CHECK(km.survival[2] == doctest::Approx(0.0));
  CHECK(km.lower[2] == 0.0);
  CHECK(km.upper[2] == 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(km.lower[i] <= km.survival[i] + 1e-12);
    CHECK(km.upper[i] >= km.survival[i] - 1e-12);
    CHECK(km.upper[i] <= 1.0);
  }
}

TEST_CASE("kaplan_meier: matches the at-risk recursion oracle on random data") {
  Rng rng(43);
  auto s = random_sample(rng, 50, true, 0.3);
  auto km = kaplan_meier(s.times, s.events);

  // Oracle: direct recursion over sorted distinct event times.
  std::vector<double> event_times;
  for (std::size_t i = 0; i < s.times.size(); ++i)
    if (s.events[i] == 1) event_times.push_back(s.times[i]);
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()),
                    event_times.end());
  double surv = 1.0;
  REQUIRE(km.times.size() == event_times.size());
  for (std::size_t k = 0; k < event_times.size(); ++k) {
    long at_risk = 0, deaths = 0;
    for (std::size_t i = 0; i < s.times.size(); ++i) {
      if (s.times[i] >= event_times[k]) ++at_risk;
      if (s.events[i] == 1 && s.times[i] == event_times[k]) ++deaths;
    }
    surv *= double(at_risk - deaths) / double(at_risk);
    CHECK(km.times[k] == event_times[k]);
    CHECK(km.at_risk[k] == at_risk);
    CHECK(km.events_at[k] == deaths);
    CHECK(km.survival[k] == doctest::Approx(surv).epsilon(1e-12));
  }
}

TEST_CASE("kaplan_meier: equals empirical survival without censoring") {
  Rng rng(44);
  std::vector<double> times;
  std::vector<int> events;
  for (int i = 0; i < 40; ++i) {
    times.push_back(rng.uniform(0.0, 5.0));
    events.push_back(1);
  }
  auto km = kaplan_meier(times, events);
  for (std::size_t k = 0; k < km.times.size(); ++k) {
    long surviving = 0;
    for (double t : times)
      if (t > km.times[k]) ++surviving;
    CHECK(km.survival[k] ==
          doctest::Approx(double(surviving) / 40.0).epsilon(1e-12));
  }
}

TEST_CASE("log_rank: identical groups give statistic 0 and p = 1") {
  std::vector<double> times = {1, 2, 3, 4, 5};
  std::vector<int> events = {1, 0, 1, 1, 0};
  auto res = log_rank(times, events, times, events);
  REQUIRE(res.has_value());
  CHECK(res->chi_square == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res->p_value == doctest::Approx(1.0));
}

TEST_CASE("log_rank: p-value matches the erfc closed form") {
  // chi2 = 3.841 is the 95th percentile of chi2(1): p must be 0.05 +- 1e-3.
  const double p = std::erfc(std::sqrt(3.841 / 2.0));
  CHECK(std::abs(p - 0.05) <= 1e-3);

  Rng rng(45);
  auto a = random_sample(rng, 30, false, 0.2);
  auto b = random_sample(rng, 25, false, 0.2);
  for (auto& t : b.times) t *= 1.6;
  auto res = log_rank(a.times, a.events, b.times, b.events);
  REQUIRE(res.has_value());
  CHECK(res->p_value ==
        doctest::Approx(std::erfc(std::sqrt(res->chi_square / 2.0))));
}

TEST_CASE("log_rank: six-patient table matches the hand computation") {
  // Group A: (1, death), (3, death), (5, censored)
  // Group B: (2, death), (4, censored), (6, death)
  // Hand tally: O_A = 2, E_A = 0.5 + 0.4 + 0.5 = 1.4, V = 0.74.
  auto res = log_rank({1, 3, 5}, {1, 1, 0}, {2, 4, 6}, {1, 0, 1});
  REQUIRE(res.has_value());
  CHECK(res->observed_a == doctest::Approx(2.0));
  CHECK(res->expected_a == doctest::Approx(1.4).epsilon(1e-12));
  CHECK(res->variance == doctest::Approx(0.74).epsilon(1e-12));
  CHECK(res->chi_square == doctest::Approx(0.36 / 0.74).epsilon(1e-12));
}

TEST_CASE("log_rank: label swap leaves the statistic unchanged") {
  Rng rng(46);
  auto a = random_sample(rng, 20, true, 0.3);
  auto b = random_sample(rng, 22, true, 0.3);
  auto r1 = log_rank(a.times, a.events, b.times, b.events);
  auto r2 = log_rank(b.times, b.events, a.times, a.events);
  REQUIRE(r1.has_value());
  REQUIRE(r2.has_value());
  CHECK(r1->chi_square == doctest::Approx(r2->chi_square).epsilon(1e-12));
  CHECK(r1->p_value == doctest::Approx(r2->p_value).epsilon(1e-12));
}

TEST_CASE("log_rank: no events at all is undefined") {
  CHECK_FALSE(log_rank({1, 2}, {0, 0}, {3, 4}, {0, 0}).has_value());
}

TEST_CASE("stratify_median: distinct risks with even n split in half") {
  std::vector<double> risks = {0.1, 0.9, 0.4, 0.7, 0.2, 0.8};
  auto [high, low] = stratify_median(risks);
  CHECK(high.size() == 3);
  CHECK(low.size() == 3);
  for (std::size_t i : high)
    for (std::size_t j : low) CHECK(risks[i] > risks[j]);
}

TEST_CASE("stratify_median: all-equal risks leave the high group empty") {
  std::vector<double> risks = {1.0, 1.0, 1.0, 1.0};
  auto [high, low] = stratify_median(risks);
  CHECK(high.empty());
  CHECK(low.size() == 4);
  // Downstream: the stratified log-rank helper reports undefined.
  std::vector<double> times = {1, 2, 3, 4};
  std::vector<int> events = {1, 1, 1, 1};
  CHECK_FALSE(stratification_logrank(risks, times, events).has_value());
}

TEST_CASE("stratify_median: partition matches the sort-based oracle") {
  Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> risks;
    const std::size_t n = 3 + std::size_t(rng.uniform_int(0, 30));
    for (std::size_t i = 0; i < n; ++i)
      risks.push_back(std::floor(rng.normal() * 3.0) / 3.0);
    auto [high, low] = stratify_median(risks);
    CHECK(high.size() + low.size() == n);
    const double med = median_of(risks);
    for (std::size_t i : high) CHECK(risks[i] > med);
    for (std::size_t i : low) CHECK(risks[i] <= med);
  }
}

TEST_CASE("ecdf: sorted fractions reach exactly one") {
  auto pts = ecdf({3.0, 1.0, 2.0});
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].value == 1.0);
  CHECK(pts[2].value == 3.0);
  CHECK(pts[2].fraction == doctest::Approx(1.0));
}

TEST_CASE("fold metrics: mean and sample standard deviation") {
  auto fm = FoldMetrics::from("complete", {0.6, 0.7, 0.8});
  CHECK(fm.mean == doctest::Approx(0.7));
  CHECK(fm.stddev == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("cosine_similarity: guard and exact values") {
  CHECK(cosine_similarity({0, 0, 0}, {1, 2, 3}) == 0.0);
  CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine_similarity({1, 1}, {2, 2}) == doctest::Approx(1.0));
  CHECK(cosine_similarity({1, 0}, {-1, 0}) == doctest::Approx(-1.0));
}
