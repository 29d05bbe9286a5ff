#pragma once

// Active input design: the geometric-mean pairwise separation objective over
// next-step predicted measurement distributions, maximized over the admissible box.

#include <cmath>
#include <vector>

#include "fid/engine.hpp"

namespace fid {

/// Next-step predicted measurement distribution N(ŷ, S) of one hypothesis under u.
struct PredictedMeasurement {
  Vec mean;
  Eigen::LLT<Mat> chol;
  bool valid = false;
};

using PredictedMeasurementSet = std::vector<PredictedMeasurement>;

/// d(f_m, f_m') = (ŷ_m - ŷ_m')ᵀ S_m'⁻¹ (ŷ_m - ŷ_m'); the covariance belongs to m'.
inline double pairwise_distance(const Vec& mean_m, const Vec& mean_other, const Eigen::LLT<Mat>& chol_other) {
  return chol_other.matrixL().solve(mean_m - mean_other).squaredNorm();
}

inline double pairwise_distance(const Vec& mean_m, const Vec& mean_other, const Mat& cov_other) {
  Eigen::LLT<Mat> llt(cov_other);
  if (llt.info() != Eigen::Success) throw DivergenceError("pairwise_distance: covariance is not positive definite");
  return pairwise_distance(mean_m, mean_other, llt);
}

/// Predicted measurement distributions for every live hypothesis under candidate u.
inline PredictedMeasurementSet predict_measurements(const FilterBank& bank, const HypothesisSet& M, const Vec& u,
                                                    const std::vector<bool>& excluded) {
  PredictedMeasurementSet out(M.size());
  for (std::size_t m = 0; m < M.size(); ++m) {
    if ((m < excluded.size() && excluded[m]) || bank[m].diverged) continue;
    try {
      PredictedState ps = predict(bank[m], M[m], u);
      out[m].mean = std::move(ps.measurement);
      out[m].chol = std::move(ps.innovation_chol);
      out[m].valid = true;
    } catch (const DivergenceError&) {
      out[m].valid = false;
    }
  }
  return out;
}

/// Exponent applied to the product of ordered-pair distances.
enum class ObjectiveExponent {
  inverse_square,      ///< |M|^-2
  inverse_pair_count,  ///< 1 / (|M|(|M|-1))
  unit                 ///< 1
};

inline double exponent_value(ObjectiveExponent e, std::size_t live) {
  const double n = static_cast<double>(live);
  switch (e) {
    case ObjectiveExponent::inverse_square: return 1.0 / (n * n);
    case ObjectiveExponent::inverse_pair_count: return 1.0 / (n * (n - 1.0));
    case ObjectiveExponent::unit: return 1.0;
  }
  return 1.0 / (n * n);
}

/// log J = c · Σ_{m≠m'} log d(f_m, f_m') over ordered live pairs; -inf when any
/// distance is zero or fewer than two hypotheses are live.
inline double objective_log(const PredictedMeasurementSet& set, ObjectiveExponent exponent = ObjectiveExponent::inverse_square) {
  std::size_t live = 0;
  for (const auto& p : set) live += p.valid ? 1 : 0;
  if (live < 2) return kNegInf;
  double sum = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set[i].valid) continue;
    for (std::size_t j = 0; j < set.size(); ++j) {
      if (i == j || !set[j].valid) continue;
      const double d = pairwise_distance(set[i].mean, set[j].mean, set[j].chol);
      if (!(d > 0.0)) return kNegInf;
      sum += std::log(d);
    }
  }
  return exponent_value(exponent, live) * sum;
}

inline std::size_t live_count(const PredictedMeasurementSet& set) {
  std::size_t n = 0;
  for (const auto& p : set) n += p.valid ? 1 : 0;
  return n;
}

/// J(u) = (Π_{m≠m'} d(f_m(u), f_m'(u)))^c, evaluated in log space.
inline double objective_J(const Vec& u, const FilterBank& bank, const HypothesisSet& M,
                          const std::vector<bool>& excluded = {},
                          ObjectiveExponent exponent = ObjectiveExponent::inverse_square) {
  const auto set = predict_measurements(bank, M, u, excluded);
  if (live_count(set) < 2) throw InputError("objective_J: fewer than two live hypotheses");
  const double lj = objective_log(set, exponent);
  return lj == kNegInf ? 0.0 : std::exp(lj);
}

/// Deterministic lattice over the admissible box, axis 0 varying slowest.
class ControlGrid {
 public:
  ControlGrid(const ControlBox& box, int per_axis) {
    if (per_axis < 1) throw ConfigError("grid resolution must be >= 1");
    const Eigen::Index nu = box.dim();
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(nu));
    for (Eigen::Index a = 0; a < nu; ++a) {
      auto& ax = axes[static_cast<std::size_t>(a)];
      const double lo = box.lower[a];
      const double hi = box.upper[a];
      if (lo == hi || per_axis == 1) {
        ax.push_back(per_axis == 1 ? 0.5 * (lo + hi) : lo);
      } else {
        for (int i = 0; i < per_axis; ++i) ax.push_back(lo + (hi - lo) * i / (per_axis - 1));
      }
      spacing_.push_back(per_axis > 1 ? (hi - lo) / (per_axis - 1) : (hi - lo));
    }
    std::vector<std::size_t> idx(static_cast<std::size_t>(nu), 0);
    while (true) {
      Vec u(nu);
      for (Eigen::Index a = 0; a < nu; ++a) u[a] = axes[static_cast<std::size_t>(a)][idx[static_cast<std::size_t>(a)]];
      points_.push_back(std::move(u));
      Eigen::Index a = nu - 1;
      for (; a >= 0; --a) {
        auto& i = idx[static_cast<std::size_t>(a)];
        if (++i < axes[static_cast<std::size_t>(a)].size()) break;
        i = 0;
      }
      if (a < 0) break;
    }
  }

  const std::vector<Vec>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<double>& spacing() const { return spacing_; }

 private:
  std::vector<Vec> points_;
  std::vector<double> spacing_;
};

struct ActiveOptions {
  int grid_per_axis = 9;
  int refine_iters = 1;
  double authority_scale = 1.0;  ///< U_a = {s·u : u ∈ box}
  ObjectiveExponent exponent = ObjectiveExponent::inverse_square;
};

struct ControlSelection {
  Vec u;
  double log_objective = kNegInf;
  bool non_informative = false;
  std::size_t evaluations = 0;
};

namespace detail {

struct Candidate {
  double score;
  double norm;
  std::size_t index;
};

// Higher score wins; near-equal scores go to the smaller norm, then the lower index.
inline bool better(const Candidate& a, const Candidate& b) {
  const double tol = 1e-12 * std::max(1.0, std::max(std::abs(a.score), std::abs(b.score)));
  if (a.score == kNegInf && b.score == kNegInf) return false;
  if (std::abs(a.score - b.score) > tol || a.score == kNegInf || b.score == kNegInf) return a.score > b.score;
  const double ntol = 1e-12 * std::max(1.0, std::max(a.norm, b.norm));
  if (std::abs(a.norm - b.norm) > ntol) return a.norm < b.norm;
  return a.index < b.index;
}

}  // namespace detail

/// argmax_{u ∈ U_a} J(u): grid search plus `refine_iters` halving passes around the
/// incumbent. Returns `fallback` flagged non-informative when J vanishes everywhere
/// or fewer than two hypotheses are live.
inline ControlSelection select_control(const FilterBank& bank, const HypothesisSet& M, const std::vector<bool>& excluded,
                                       const ControlBox& box, const ActiveOptions& opts, const Vec& fallback) {
  ControlSelection sel;
  std::size_t live = 0;
  for (std::size_t m = 0; m < M.size(); ++m) live += (!(m < excluded.size() && excluded[m]) && !bank[m].diverged) ? 1 : 0;
  if (live < 2) {
    sel.u = fallback;
    sel.non_informative = true;
    return sel;
  }

  const ControlGrid grid(box, opts.grid_per_axis);
  std::size_t index = 0;
  std::optional<detail::Candidate> best;
  Vec best_u;
  auto consider = [&](const Vec& u) {
    const double score = objective_log(predict_measurements(bank, M, u, excluded), opts.exponent);
    const detail::Candidate c{score, u.norm(), index++};
    ++sel.evaluations;
    if (!best || detail::better(c, *best)) {
      best = c;
      best_u = u;
    }
  };
  for (const auto& u : grid.points()) consider(u);

  if (best->score == kNegInf) {
    sel.u = fallback;
    sel.non_informative = true;
    return sel;
  }

  const Eigen::Index nu = box.dim();
  std::vector<double> step(grid.spacing());
  for (int it = 0; it < opts.refine_iters; ++it) {
    for (double& s : step) s *= 0.5;
    const Vec center = best_u;
    // 3^nu stencil around the incumbent, clamped into the box.
    std::vector<int> offs(static_cast<std::size_t>(nu), -1);
    while (true) {
      Vec u = center;
      bool moved = false;
      for (Eigen::Index a = 0; a < nu; ++a) {
        const int o = offs[static_cast<std::size_t>(a)];
        u[a] += o * step[static_cast<std::size_t>(a)];
        moved = moved || o != 0;
      }
      u = box.clamp(u);
      if (moved && (u - center).cwiseAbs().maxCoeff() > 0.0) consider(u);
      Eigen::Index a = nu - 1;
      for (; a >= 0; --a) {
        auto& o = offs[static_cast<std::size_t>(a)];
        if (++o <= 1) break;
        o = -1;
      }
      if (a < 0) break;
    }
  }
  sel.u = best_u;
  sel.log_objective = best->score;
  return sel;
}

/// Sampled degeneracy test: J constant (within 1e-9 relative) over a lattice on U_a.
inline bool is_degenerate(const ControlBox& box, const FilterBank& bank, const HypothesisSet& M, int samples_per_axis,
                          const std::vector<bool>& excluded = {}) {
  if (samples_per_axis < 2) throw ConfigError("is_degenerate: need at least two samples per axis");
  const ControlGrid grid(box, samples_per_axis);
  double lo = kInf;
  double hi = 0.0;
  for (const auto& u : grid.points()) {
    const double lj = objective_log(predict_measurements(bank, M, u, excluded));
    const double j = lj == kNegInf ? 0.0 : std::exp(lj);
    lo = std::min(lo, j);
    hi = std::max(hi, j);
  }
  return hi - lo <= 1e-9 * hi;
}

/// Control source implementing the input-design step of the active loop.
inline ControlSource active_control_source(ActiveOptions opts) {
  if (!(opts.authority_scale >= 0.0)) throw ConfigError("authority scale must be >= 0");
  return [opts](const ControlContext& c) {
    const ControlBox box = c.scenario.admissible.scaled(opts.authority_scale);
    const Vec fallback = box.clamp(c.scenario.nominal(c.k, c.y));
    ControlSelection sel = select_control(c.bank, c.hypotheses, c.excluded, box, opts, fallback);
    return ControlChoice{std::move(sel.u), sel.non_informative};
  };
}

/// Identification loop with the control chosen at every step by maximizing J over U_a.
inline RunResult active_fid_run(const Scenario& sc, const FidConfig& cfg, const ActiveOptions& opts, Rng& rng) {
  return run_fid(sc, cfg, active_control_source(opts), rng);
}

}  // namespace fid
