#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>

#include "stungage/error.hpp"

namespace stungage {

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
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
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw Error("gaze-analysis", "incomplete beta continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error("gaze-analysis", "incomplete beta needs a, b > 0");
  if (std::isnan(x) || x < 0.0 || x > 1.0) throw Error("gaze-analysis", "incomplete beta needs x in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      a * std::log(x) + b * std::log1p(-x) - (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw Error("gaze-analysis", "degrees of freedom must be positive");
  if (std::isnan(t)) throw Error("gaze-analysis", "t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t2));
}

enum class TTestVariant {
  pooled,  // Student's equal-variance test
  welch,
};

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Two-sample, two-sided test of equal means. Both samples need at least two
/// values. A zero variance estimate yields p = 1 for equal means and p = 0
/// otherwise.
inline TTestResult t_test_equal_mean(std::span<const double> a, std::span<const double> b,
                                     TTestVariant variant = TTestVariant::pooled) {
  if (a.size() < 2 || b.size() < 2)
    throw InsufficientDataError("t-test needs at least 2 samples per side (got " +
                                std::to_string(a.size()) + " and " + std::to_string(b.size()) + ")");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / na;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / nb;
  auto sum_sq = [](std::span<const double> v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
  };
  const double ssa = sum_sq(a, ma);
  const double ssb = sum_sq(b, mb);

  TTestResult r;
  double se2 = 0.0;
  if (variant == TTestVariant::pooled) {
    r.df = na + nb - 2.0;
    const double pooled = (ssa + ssb) / r.df;
    se2 = pooled * (1.0 / na + 1.0 / nb);
  } else {
    const double va = ssa / (na - 1.0) / na;
    const double vb = ssb / (nb - 1.0) / nb;
    se2 = va + vb;
    r.df = se2 > 0.0 ? se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0)) : na + nb - 2.0;
  }
  const double diff = ma - mb;
  if (se2 == 0.0) {
    if (diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
      r.p = 0.0;
    }
    return r;
  }
  r.t = diff / std::sqrt(se2);
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

/// Engaged iff the equal-mean hypothesis survives: p >= alpha.
inline bool cognitive_presence(const TTestResult& result, double alpha) { return result.p >= alpha; }

}  // namespace stungage
