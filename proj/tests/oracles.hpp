#pragma once

// Independent reference computations shared by the unit and acceptance suites.
// Nothing here calls into the library's filter, likelihood or objective code.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat random_spd(Eigen::Index n, std::mt19937_64& rng, double floor = 0.1) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = g(rng);
  return a * a.transpose() + floor * Mat::Identity(n, n);
}

inline Vec random_vec(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

/// Textbook linear Kalman filter with explicit inverses.
struct Kalman {
  Mat A, B, C, Q, R;
  Vec x;
  Mat P;
  Vec innovation;
  Mat S;

  void step(const Vec* u, const Vec& y) {
    Vec xp = x;
    Mat Pp = P;
    if (u) {
      xp = A * x + B * *u;
      Pp = A * P * A.transpose() + Q;
    }
    S = C * Pp * C.transpose() + R;
    const Mat K = Pp * C.transpose() * S.inverse();
    innovation = y - C * xp;
    x = xp + K * innovation;
    P = (Mat::Identity(x.size(), x.size()) - K * C) * Pp;
  }
};

/// Multivariate normal density evaluated from its closed form.
inline double normal_pdf(const Vec& e, const Mat& S) {
  const double n = static_cast<double>(e.size());
  const double quad = e.dot(S.inverse() * e);
  return std::exp(-0.5 * quad) / std::sqrt(std::pow(2.0 * std::numbers::pi, n) * S.determinant());
}

/// Product-then-root geometric mean of ordered-pair separations.
inline double geometric_objective(const std::vector<Vec>& means, const std::vector<Mat>& covs) {
  const std::size_t n = means.size();
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Vec g = means[i] - means[j];
      prod *= g.dot(covs[j].inverse() * g);
    }
  return std::pow(prod, 1.0 / static_cast<double>(n * n));
}

/// Least-squares slope of y on x.
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace oracle
