#pragma once

// Shared vocabulary types, error hierarchy and random-number plumbing.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

namespace fid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Random source used everywhere randomness enters; always explicitly seeded.
using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ModelEvaluationError : public Error {
 public:
  using Error::Error;
};

class LinearizationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

/// Raised when a filter loses numerical validity (non-SPD innovation covariance,
/// non-finite state). Callers running banks catch it and mark the filter diverged.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_dim(const Vec& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(n) +
                         ", got " + std::to_string(v.size()));
  }
}

/// Symmetric with strictly positive eigenvalues.
inline bool is_spd(const Mat& m, double sym_tol = 1e-9) {
  if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0;
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// SplitMix64 finalizer: maps (master, stream) to a well-mixed 64-bit seed so that
/// per-trial streams depend only on their index, never on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Vec standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = nd(rng);
  return z;
}

/// Draw from N(mean, L Lᵀ) given the lower Cholesky factor L.
inline Vec sample_gaussian(const Vec& mean, const Mat& chol_lower, Rng& rng) {
  return mean + chol_lower * standard_normal(mean.size(), rng);
}

inline Mat cholesky_lower(const Mat& cov, const char* what) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw ConfigError(std::string(what) + ": covariance is not positive definite");
  }
  return llt.matrixL();
}

}  // namespace fid
