// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace promptlens {
namespace {

constexpr double kTiny = 1e-300;
constexpr double kEps = 1e-15;

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_fraction(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) return h;
  }
  throw DomainError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw DomainError("incomplete beta needs a, b > 0");
  if (x < 0 || x > 1 || std::isnan(x)) throw DomainError("incomplete beta needs x in [0, 1]");
  if (x == 0 || x == 1) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0)) throw DomainError("t distribution needs df > 0");
  if (std::isnan(t)) throw DomainError("t statistic is NaN");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0 && p < 1)) throw DomainError("t quantile needs p in (0, 1)");
  if (!(df > 0)) throw DomainError("t distribution needs df > 0");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, df);
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

MeanSd mean_sd(std::span<const double> values) {
  MeanSd out;
  out.n = static_cast<Index>(values.size());
  if (values.empty()) throw UsageError("mean of an empty sample");
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(out.n - 1));
  }
  return out;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, Index exact_limit) {
  std::vector<double> d;
  for (double v : differences)
    if (v != 0.0) d.push_back(v);
  WilcoxonResult out;
  out.n_nonzero = static_cast<Index>(d.size());
  if (d.empty()) return out;

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::fabs(d[a]) < std::fabs(d[b]); });
  // Doubled mid-ranks are integers.
  std::vector<long> rank2(d.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && std::fabs(d[order[j]]) == std::fabs(d[order[i]])) ++j;
    const long doubled = static_cast<long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total2 += rank2[i];
    if (d[i] > 0) w_plus2 += rank2[i];
  }
  out.w_plus = w_plus2 / 2.0;
  out.w_minus = (total2 - w_plus2) / 2.0;
  out.statistic = std::min(out.w_plus, out.w_minus);
  const auto n = static_cast<double>(d.size());

  if (out.n_nonzero <= exact_limit) {
    out.method = WilcoxonMethod::kExact;
    // Null distribution of doubled W+ by subset-sum counting.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s)
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      reach += r;
    }
    const double all = std::ldexp(1.0, static_cast<int>(d.size()));
    const long stat2 = std::min(w_plus2, total2 - w_plus2);
    double lower = 0.0;
    for (long s = 0; s <= stat2; ++s) lower += counts[static_cast<std::size_t>(s)];
    out.p_value = std::min(1.0, 2.0 * lower / all);
  } else {
    out.method = WilcoxonMethod::kNormal;
    const double mu = n * (n + 1) / 4.0;
    const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
    if (!(var > 0)) {
      out.method = WilcoxonMethod::kDegenerate;
      return out;
    }
    const double diff = out.statistic - mu;
    const double corrected = diff == 0 ? 0.0 : diff - std::copysign(0.5, diff);
    out.z = corrected / std::sqrt(var);
    out.p_value = std::min(1.0, 2.0 * normal_cdf(-std::fabs(out.z)));
  }
  return out;
}

TTestResult one_sample_t_test(std::span<const double> values) {
  const auto m = mean_sd(values);
  if (m.n < 2) throw UsageError("t-test needs at least two values");
  TTestResult out;
  out.df = static_cast<double>(m.n - 1);
  if (m.sd == 0) {
    out.statistic = m.mean == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m.mean);
    out.p_value = m.mean == 0 ? 1.0 : 0.0;
    return out;
  }
  out.statistic = m.mean / (m.sd / std::sqrt(static_cast<double>(m.n)));
  out.p_value = 2.0 * student_t_cdf(-std::fabs(out.statistic), out.df);
  return out;
}

DeltaStatistics delta_statistics_from_moments(double mean, double sd, Index n) {
  if (n < 2) throw UsageError("delta statistics need n >= 2");
  if (!(sd >= 0)) throw UsageError("standard deviation must be non-negative");
  DeltaStatistics out;
  out.n = n;
  out.mean = mean;
  out.sd = sd;
  const double df = static_cast<double>(n - 1);
  out.t_critical = student_t_quantile(0.975, df);
  const double half = out.t_critical * sd / std::sqrt(static_cast<double>(n));
  out.ci95 = {mean - half, mean + half};
  out.t_test.df = df;
  if (sd == 0) {
    out.t_test.statistic = mean == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    out.t_test.p_value = mean == 0 ? 1.0 : 0.0;
  } else {
    out.t_test.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    out.t_test.p_value = 2.0 * student_t_cdf(-std::fabs(out.t_test.statistic), df);
  }
  return out;
}

DeltaStatistics delta_statistics(std::span<const double> deltas) {
  if (deltas.size() < 2) throw UsageError("delta statistics need n >= 2");
  const auto m = mean_sd(deltas);
  auto out = delta_statistics_from_moments(m.mean, m.sd, m.n);
  out.t_test = one_sample_t_test(deltas);
  out.wilcoxon = wilcoxon_signed_rank(deltas);
  return out;
}

TostResult tost_equivalence(std::span<const double> a, std::span<const double> b, double lower, double upper,
                            double alpha) {
  if (a.empty() || b.empty()) throw UsageError("TOST needs two non-empty samples");
  if (!(lower < upper)) throw UsageError("TOST bounds must satisfy lower < upper");
  const auto ma = mean_sd(a);
  const auto mb = mean_sd(b);
  TostResult out;
  out.mean_difference = ma.mean - mb.mean;
  const double va = ma.sd * ma.sd / static_cast<double>(ma.n);
  const double vb = mb.sd * mb.sd / static_cast<double>(mb.n);
  const double se2 = va + vb;
  if (se2 == 0) {
    out.zero_variance = true;
    const bool inside = out.mean_difference > lower && out.mean_difference < upper;
    out.p_lower = out.mean_difference > lower ? 0.0 : 1.0;
    out.p_upper = out.mean_difference < upper ? 0.0 : 1.0;
    out.equivalent = inside;
    return out;
  }
  if (ma.n < 2 || mb.n < 2) throw UsageError("Welch TOST needs at least two values per sample");
  const double se = std::sqrt(se2);
  out.df = se2 * se2 / (va * va / static_cast<double>(ma.n - 1) + vb * vb / static_cast<double>(mb.n - 1));
  out.t_lower = (out.mean_difference - lower) / se;
  out.t_upper = (out.mean_difference - upper) / se;
  out.p_lower = student_t_cdf(-out.t_lower, out.df);
  out.p_upper = student_t_cdf(out.t_upper, out.df);
  out.equivalent = std::max(out.p_lower, out.p_upper) < alpha;
  return out;
}

}  // namespace promptlens
