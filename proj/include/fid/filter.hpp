#pragma once

// Extended Kalman filtering per hypothesis, innovation statistics and the sticky
// divergence detector that stands in for asymptotic filter stability.

#include <numbers>
#include <span>
#include <tuple>
#include <vector>

#include "fid/models.hpp"

namespace fid {

struct FilterState {
  Vec mean;
  Mat cov;
  Vec predicted_measurement;
  Vec innovation;
  Mat innovation_cov;
  double innovation_stat = 0.0;  ///< eᵀS⁻¹e of the latest update
  double log_density = 0.0;      ///< log N(e; 0, S) of the latest update
  int updates = 0;
  bool diverged = false;
};

inline FilterState initial_filter_state(const Vec& mean, const Mat& cov) {
  if (mean.size() != cov.rows() || !is_spd(cov)) throw ConfigError("initial covariance must be SPD and match the mean");
  FilterState fs;
  fs.mean = mean;
  fs.cov = cov;
  return fs;
}

/// Output of the predict block: x̂_{k|k-1}, Σ_{k|k-1}, ŷ_{k|k-1}, S_k, K_k.
struct PredictedState {
  Vec mean;
  Mat cov;
  Vec measurement;
  Mat innovation_cov;
  Mat gain;
  Mat H;
  Eigen::LLT<Mat> innovation_chol;
};

enum class CovarianceUpdate { standard, joseph };

namespace detail {

inline PredictedState complete_prediction(const SystemModel& model, Vec mean, Mat cov) {
  PredictedState ps;
  ps.H = model.measurement_jacobian(mean);
  ps.measurement = model.measurement(mean);
  ps.mean = std::move(mean);
  ps.cov = symmetrize(cov);
  ps.innovation_cov = symmetrize(ps.H * ps.cov * ps.H.transpose() + model.measurement_cov());
  ps.innovation_chol.compute(ps.innovation_cov);
  if (ps.innovation_chol.info() != Eigen::Success || !ps.innovation_cov.allFinite()) {
    throw DivergenceError("innovation covariance is not positive definite");
  }
  // K = Σ Hᵀ S⁻¹ via the Cholesky factor, never an explicit inverse.
  ps.gain = ps.innovation_chol.solve(ps.H * ps.cov).transpose();
  if (!ps.gain.allFinite() || !ps.mean.allFinite()) throw DivergenceError("non-finite prediction");
  return ps;
}

}  // namespace detail

/// Predict block of the EKF with φ = ∂F/∂x at (x̂_{k-1}, u) and H = ∂G/∂x at x̂_{k|k-1}.
inline PredictedState predict(const FilterState& fs, const SystemModel& model, const Vec& u) {
  if (fs.diverged) throw DivergenceError("predict on a diverged filter");
  Vec mean;
  Mat phi;
  try {
    std::tie(mean, phi) = model.propagate_linearized(fs.mean, u);
  } catch (const ModelEvaluationError& e) {
    throw DivergenceError(e.what());
  } catch (const LinearizationError& e) {
    throw DivergenceError(e.what());
  }
  return detail::complete_prediction(model, std::move(mean), phi * fs.cov * phi.transpose() + model.process_cov());
}

/// Treats the filter's current (prior) estimate as the prediction; used for y_0.
inline PredictedState prior_as_prediction(const FilterState& fs, const SystemModel& model) {
  return detail::complete_prediction(model, fs.mean, fs.cov);
}

inline double log_det_from_chol(const Eigen::LLT<Mat>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// eᵀS⁻¹e through a Cholesky solve.
inline double innovation_stat(const Vec& e, const Mat& S) {
  if (e.size() != S.rows() || S.rows() != S.cols()) throw DimensionError("innovation_stat: shape mismatch");
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) throw DivergenceError("innovation covariance is not positive definite");
  const Vec w = llt.matrixL().solve(e);
  return w.squaredNorm();
}

/// log N(e; 0, S) = -½ eᵀS⁻¹e - ½ log det(2πS).
inline double gaussian_log_density(const Vec& e, const Mat& S) {
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) throw DivergenceError("innovation covariance is not positive definite");
  const double quad = llt.matrixL().solve(e).squaredNorm();
  return -0.5 * quad - 0.5 * (static_cast<double>(e.size()) * std::log(2.0 * std::numbers::pi) + log_det_from_chol(llt));
}

/// Update block: e = y - ŷ, x̂ = x̂⁻ + K e, Σ = (I - K H) Σ⁻ (or Joseph form), symmetrized.
inline FilterState update(const PredictedState& ps, const Vec& y, const SystemModel& model,
                          CovarianceUpdate form = CovarianceUpdate::standard) {
  if (y.size() != ps.measurement.size()) throw DimensionError("update: measurement dimension mismatch");
  if (!y.allFinite()) throw InputError("update: non-finite measurement");
  FilterState fs;
  fs.innovation = model.residual(y, ps.measurement);
  fs.predicted_measurement = ps.measurement;
  fs.innovation_cov = ps.innovation_cov;
  fs.mean = ps.mean + ps.gain * fs.innovation;
  const Eigen::Index n = ps.mean.size();
  const Mat ikh = Mat::Identity(n, n) - ps.gain * ps.H;
  if (form == CovarianceUpdate::joseph) {
    fs.cov = ikh * ps.cov * ikh.transpose() + ps.gain * model.measurement_cov() * ps.gain.transpose();
  } else {
    fs.cov = ikh * ps.cov;
  }
  fs.cov = symmetrize(fs.cov);
  const double quad = ps.innovation_chol.matrixL().solve(fs.innovation).squaredNorm();
  fs.innovation_stat = quad;
  fs.log_density = -0.5 * quad - 0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) +
                                        log_det_from_chol(ps.innovation_chol));
  return fs;
}

struct DivergenceLimits {
  double trace_cap = 1e6;
  double stat_mean_cap = 1e3;
};

/// Sticky divergence test: non-finite estimate, trace(Σ) above cap, or running mean of
/// recent innovation statistics above cap.
inline bool check_divergence(FilterState& fs, std::span<const double> recent_stats, const DivergenceLimits& limits = {}) {
  if (fs.diverged) return true;
  bool bad = !fs.mean.allFinite() || !fs.cov.allFinite() || fs.cov.trace() > limits.trace_cap;
  if (!bad && !recent_stats.empty()) {
    double sum = 0.0;
    for (double s : recent_stats) sum += s;
    const double mean = sum / static_cast<double>(recent_stats.size());
    bad = !std::isfinite(mean) || mean > limits.stat_mean_cap;
  }
  if (bad) fs.diverged = true;
  return fs.diverged;
}

struct FilterOptions {
  CovarianceUpdate covariance_update = CovarianceUpdate::standard;
  DivergenceLimits limits;
};

/// One filter per hypothesis, all fed the same (u_{k-1}, y_k) stream.
class FilterBank {
 public:
  FilterBank(const HypothesisSet& M, const Vec& x0_mean, const Mat& x0_cov, FilterOptions options = {})
      : options_(options), states_(M.size(), initial_filter_state(x0_mean, x0_cov)) {}

  std::size_t size() const { return states_.size(); }
  const FilterState& operator[](std::size_t i) const { return states_.at(i); }
  const std::vector<FilterState>& states() const { return states_; }
  const FilterOptions& options() const { return options_; }

  /// Absorb y_k. `u_prev` is u_{k-1}; pass nullptr at k = 0 to update from the prior.
  void observe(const HypothesisSet& M, const Vec* u_prev, const Vec& y) {
    if (M.size() != states_.size()) throw DimensionError("filter bank size does not match hypothesis set");
    if (!y.allFinite()) throw InputError("observe: non-finite measurement");
    for (std::size_t i = 0; i < states_.size(); ++i) {
      FilterState& fs = states_[i];
      if (fs.diverged) continue;
      const int updates = fs.updates;
      try {
        const PredictedState ps = u_prev ? predict(fs, M[i], *u_prev) : prior_as_prediction(fs, M[i]);
        fs = update(ps, y, M[i], options_.covariance_update);
        fs.updates = updates + 1;
      } catch (const DivergenceError&) {
        fs.diverged = true;
      }
    }
  }

  /// Runs the divergence test on filter i given its recent innovation statistics.
  bool check(std::size_t i, std::span<const double> recent_stats) {
    return check_divergence(states_.at(i), recent_stats, options_.limits);
  }

 private:
  FilterOptions options_;
  std::vector<FilterState> states_;
};

}  // namespace fid
