#pragma once

// Regularized incomplete gamma functions and the chi-square CDF / quantile.

#include <cmath>
#include <limits>

#include "fid/core.hpp"

namespace fid::stats {

namespace detail {

inline constexpr double kEps = 1e-16;
inline constexpr int kMaxIter = 10000;

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by its continued fraction (modified Lentz); for x >= a + 1.
inline double gamma_q_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0 || std::isnan(x)) throw InputError("gamma_p: requires a > 0 and x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return detail::gamma_p_series(a, x);
  return 1.0 - detail::gamma_q_continued_fraction(a, x);
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0 || std::isnan(x)) throw InputError("gamma_q: requires a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_continued_fraction(a, x);
}

inline double chi2_cdf(double x, double dof) {
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

inline double chi2_cdf_upper(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * dof, 0.5 * x);
}

inline double chi2_pdf(double x, double dof) {
  if (x <= 0.0) return 0.0;
  const double a = 0.5 * dof;
  return 0.5 * std::exp((a - 1.0) * std::log(0.5 * x) - 0.5 * x - std::lgamma(a));
}

/// Inverse chi-square CDF (chi2inv). Safeguarded Newton iteration on whichever
/// tail is smaller, started from the Wilson-Hilferty approximation.
inline double chi2_quantile(double p, double dof) {
  if (!(dof > 0.0)) throw InputError("chi2_quantile: dof must be positive");
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("chi2_quantile: p must lie in [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return kInf;

  const bool upper = p > 0.5;
  const double target = upper ? 1.0 - p : p;
  auto tail = [&](double x) { return upper ? chi2_cdf_upper(x, dof) : chi2_cdf(x, dof); };

  // Wilson-Hilferty start, using a rational normal-quantile approximation.
  const double t = std::sqrt(-2.0 * std::log(target));
  double z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
  if (!upper) z = -z;
  const double c = 2.0 / (9.0 * dof);
  double x = dof * std::pow(std::max(1.0 - c + z * std::sqrt(c), 1e-3), 3.0);
  if (!(x > 0.0) || !std::isfinite(x)) x = dof;

  double lo = 0.0;
  double hi = kInf;
  for (int iter = 0; iter < 500; ++iter) {
    const double f = tail(x) - target;
    // upper tail decreases in x; lower tail increases.
    const bool x_too_small = upper ? f > 0.0 : f < 0.0;
    if (x_too_small) lo = x; else hi = x;
    const double dens = chi2_pdf(x, dof);
    double next = dens > 0.0 ? x + (upper ? f : -f) / dens : x;
    if (!(next > lo && next < hi) || !std::isfinite(next)) {
      next = std::isinf(hi) ? 2.0 * x + 1.0 : 0.5 * (lo + hi);
    }
    if (std::abs(next - x) <= 1e-15 * x) return next;
    x = next;
  }
  return x;
}

}  // namespace fid::stats
