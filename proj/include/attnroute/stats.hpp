#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include "attnroute/errors.hpp"

namespace attnroute::stats {

/// Regularized incomplete beta I_x(a, b), continued fraction evaluated with
/// the modified Lentz method.
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ContractError("incomplete_beta: shape parameters must be positive");
  if (x < 0.0 || x > 1.0) throw ContractError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);

  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 10000; ++m) {
    const double md = m;
    double num = md * (b - md) * x / ((a + 2.0 * md - 1.0) * (a + 2.0 * md));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(a + md) * (a + b + md) * x / ((a + 2.0 * md) * (a + 2.0 * md + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_front) * f / a;
}

inline double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw ContractError("student_t_cdf: degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0.0 ? 1.0 - tail : tail;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct TTest {
  std::size_t n = 0;
  double mean = 0.0;    // mean of candidate - baseline
  double stddev = 0.0;  // sample standard deviation of the differences
  double t = 0.0;
  double p = 1.0;       // one-sided, alternative: mean < 0
};

/// Paired one-sided t-test of mean(candidate - baseline) < 0. From
/// `normal_from` samples on the normal approximation replaces the t CDF.
/// Zero-variance differences give p = 0 for a negative mean and 1 otherwise.
inline TTest paired_ttest_less(std::span<const double> candidate, std::span<const double> baseline,
                               std::size_t normal_from = 1000) {
  if (candidate.size() != baseline.size()) throw ShapeError("paired t-test needs equally many samples");
  if (candidate.size() < 2) throw ContractError("paired t-test needs at least two samples");
  TTest r;
  r.n = candidate.size();
  const double n = static_cast<double>(r.n);
  for (std::size_t i = 0; i < r.n; ++i) r.mean += candidate[i] - baseline[i];
  r.mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double e = candidate[i] - baseline[i] - r.mean;
    ss += e * e;
  }
  r.stddev = std::sqrt(ss / (n - 1.0));
  if (r.stddev == 0.0) {
    r.t = r.mean < 0.0 ? -std::numeric_limits<double>::infinity()
                       : (r.mean > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    r.p = r.mean < 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = r.mean / (r.stddev / std::sqrt(n));
  r.p = r.n >= normal_from ? normal_cdf(r.t) : student_t_cdf(r.t, n - 1.0);
  return r;
}

}  // namespace attnroute::stats
