// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"

#include <span>
#include <utility>
#include <vector>

namespace promptlens {

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);
/// Inverse of student_t_cdf for p in (0, 1).
double student_t_quantile(double p, double df);

double normal_cdf(double z);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator
  Index n = 0;
};

MeanSd mean_sd(std::span<const double> values);

enum class WilcoxonMethod { kExact, kNormal, kDegenerate };

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;  // two-sided
  double z = 0.0;        // normal method only
  Index n_nonzero = 0;
  WilcoxonMethod method = WilcoxonMethod::kDegenerate;
};

/// Wilcoxon signed-rank test against zero. Zero differences are dropped, ties
/// get mid-ranks. Exact null distribution for up to `exact_limit` non-zero
/// differences, otherwise the tie-corrected normal approximation with
/// continuity correction.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, Index exact_limit = 25);

struct TTestResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;  // two-sided
};

/// One-sample t-test of the mean against zero (the paired test on differences).
TTestResult one_sample_t_test(std::span<const double> values);

struct DeltaStatistics {
  Index n = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::pair<double, double> ci95{0.0, 0.0};
  double t_critical = 0.0;
  TTestResult t_test;
  WilcoxonResult wilcoxon;
};

DeltaStatistics delta_statistics(std::span<const double> deltas);

/// CI and t from summary moments only.
DeltaStatistics delta_statistics_from_moments(double mean, double sd, Index n);

struct TostResult {
  double mean_difference = 0.0;  // mean(a) - mean(b)
  double df = 0.0;               // Welch-Satterthwaite
  double t_lower = 0.0;
  double t_upper = 0.0;
  double p_lower = 1.0;  // H0: difference <= lower bound
  double p_upper = 1.0;  // H0: difference >= upper bound
  bool equivalent = false;
  bool zero_variance = false;  // both samples constant; decided by convention
};

/// Two one-sided Welch t-tests of mean(a) - mean(b) against [lower, upper].
TostResult tost_equivalence(std::span<const double> a, std::span<const double> b, double lower = -0.5,
                            double upper = 0.5, double alpha = 0.05);

}  // namespace promptlens
