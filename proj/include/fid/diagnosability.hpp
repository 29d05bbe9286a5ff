#pragma once

// Monte Carlo estimates of the diagnosability metrics λ^N (truth in M) and λ̄^N
// (truth outside M), and the fundamental-limit predicate.

#include <nlohmann/json.hpp>

#include <cmath>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "fid/engine.hpp"

namespace fid {

struct DiagnosabilityReport {
  int window = 0;
  int horizon = 0;
  int trials = 0;
  std::vector<double> lambda_per_k;  ///< index k - (N-1), k = N-1 .. K
  double lambda_min = kInf;
  int argmin_k = -1;
  std::pair<std::size_t, std::size_t> bottleneck_pair{0, 0};  ///< (reference, competitor)
  double stderr_min = 0.0;           ///< standard error of λ̂ at the minimizing (k, m)
  long diverged_steps = 0;           ///< (trial, m, k) contributions excluded for divergence
};

/// Separation term gapᵀ S⁻¹ gap.
inline double separation_term(const Vec& gap, const Mat& S) { return innovation_stat(gap, S); }

/// True iff λ̂^N <= tol; the default tolerance is three standard errors.
inline bool is_fundamentally_limited(const DiagnosabilityReport& r, std::optional<double> tol = std::nullopt) {
  const double t = tol ? *tol : 3.0 * r.stderr_min;
  return r.lambda_min <= t;
}

inline nlohmann::json to_json(const DiagnosabilityReport& r) {
  return {{"window", r.window},
          {"horizon", r.horizon},
          {"trials", r.trials},
          {"lambda_per_k", r.lambda_per_k},
          {"lambda_min", r.lambda_min},
          {"argmin_k", r.argmin_k},
          {"bottleneck_pair", {r.bottleneck_pair.first, r.bottleneck_pair.second}},
          {"stderr", r.stderr_min},
          {"diverged_steps", r.diverged_steps}};
}

namespace detail {

// values[t][m][i]: separation of competitor m at step i in trial t; NaN marks a
// diverged contribution.
using SeparationTable = std::vector<std::vector<std::vector<double>>>;

inline SeparationTable separation_rollouts(const Scenario& sc, const SystemModel& truth,
                                           std::optional<std::size_t> reference, const ControlSource& control,
                                           int window, int horizon, int trials, const FilterOptions& filter, Rng& rng) {
  const HypothesisSet& M = sc.hypotheses;
  const std::size_t n = M.size();
  const std::uint64_t master = rng();
  SeparationTable table(static_cast<std::size_t>(trials),
                        std::vector<std::vector<double>>(n, std::vector<double>(static_cast<std::size_t>(horizon) + 1)));
  const Mat x0_chol = cholesky_lower(sc.x0_cov, "x0 covariance");

  for (int t = 0; t < trials; ++t) {
    Rng trng(derive_seed(master, static_cast<std::uint64_t>(t)));
    FilterBank bank(M, sc.x0_mean, sc.x0_cov, filter);
    std::vector<std::deque<double>> recent(n);
    std::vector<bool> excluded(n, false);
    Vec x = sample_gaussian(sc.x0_mean, x0_chol, trng);
    Vec u_prev;
    auto& rows = table[static_cast<std::size_t>(t)];
    for (int k = 0; k <= horizon; ++k) {
      const Vec y = measure(truth, x, trng);
      bank.observe(M, k == 0 ? nullptr : &u_prev, y);
      for (std::size_t m = 0; m < n; ++m) {
        if (!bank[m].diverged) {
          recent[m].push_back(bank[m].innovation_stat);
          if (static_cast<int>(recent[m].size()) > window) recent[m].pop_front();
        }
        const std::vector<double> stats(recent[m].begin(), recent[m].end());
        excluded[m] = bank.check(m, stats);
      }
      const bool ref_bad = reference && bank[*reference].diverged;
      for (std::size_t m = 0; m < n; ++m) {
        double& cell = rows[m][static_cast<std::size_t>(k)];
        if (reference && m == *reference) {
          cell = 0.0;
          continue;
        }
        if (bank[m].diverged || ref_bad) {
          cell = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        const Vec gap = reference ? Vec(bank[*reference].predicted_measurement - bank[m].predicted_measurement)
                                  : bank[m].innovation;
        cell = reference ? separation_term(gap, bank[m].innovation_cov) : bank[m].innovation_stat;
      }
      if (k == horizon) break;
      const ControlContext ctx{k, y, bank, M, excluded, sc};
      ControlChoice c = control(ctx);
      x = step_dynamics(truth, x, c.u, trng);
      if (!x.allFinite()) throw SimulationError("true system state became non-finite");
      u_prev = std::move(c.u);
    }
  }
  return table;
}

inline DiagnosabilityReport reduce(const SeparationTable& table, std::optional<std::size_t> reference, int window,
                                   int horizon, int trials) {
  DiagnosabilityReport r;
  r.window = window;
  r.horizon = horizon;
  r.trials = trials;
  const std::size_t n = table.front().size();
  for (const auto& rows : table) {
    for (std::size_t m = 0; m < n; ++m) {
      for (double v : rows[m]) r.diverged_steps += std::isnan(v) ? 1 : 0;
    }
  }
  for (int k = window - 1; k <= horizon; ++k) {
    double lambda_k = kInf;
    for (std::size_t m = 0; m < n; ++m) {
      if (reference && m == *reference) continue;
      // Trial-level window averages; trials with a diverged step in the window are skipped.
      double sum = 0.0;
      double sumsq = 0.0;
      int count = 0;
      for (const auto& rows : table) {
        double acc = 0.0;
        bool ok = true;
        for (int i = k - window + 1; i <= k; ++i) {
          const double v = rows[m][static_cast<std::size_t>(i)];
          if (std::isnan(v)) {
            ok = false;
            break;
          }
          acc += v;
        }
        if (!ok) continue;
        acc /= window;
        sum += acc;
        sumsq += acc * acc;
        ++count;
      }
      if (count == 0) continue;
      const double mean = sum / count;
      const double var = count > 1 ? std::max(0.0, (sumsq - count * mean * mean) / (count - 1)) : 0.0;
      if (mean < lambda_k) lambda_k = mean;
      if (mean < r.lambda_min) {
        r.lambda_min = mean;
        r.argmin_k = k;
        r.bottleneck_pair = {reference.value_or(m), m};
        r.stderr_min = std::sqrt(var / count);
      }
    }
    r.lambda_per_k.push_back(lambda_k);
  }
  return r;
}

inline void check_args(int window, int horizon, int trials) {
  if (window < 1) throw ConfigError("diagnosability: N must be >= 1");
  if (trials < 1) throw ConfigError("diagnosability: trials must be >= 1");
  if (horizon < window - 1) throw ConfigError("diagnosability: horizon must be >= N-1");
}

}  // namespace detail

/// λ̂^N: the truth is M[h_star]; the expected windowed separation between its predicted
/// measurements and every competitor's, minimized over competitors and k in [N-1, K].
inline DiagnosabilityReport estimate_lambda(const Scenario& sc, std::size_t h_star, const ControlSource& control,
                                            int window, int horizon, int trials, Rng& rng,
                                            const FilterOptions& filter = {}) {
  if (h_star >= sc.hypotheses.size()) throw ConfigError("estimate_lambda: h_star must index M");
  detail::check_args(window, horizon, trials);
  const auto table = detail::separation_rollouts(sc, sc.hypotheses[h_star], h_star, control, window, horizon,
                                                 trials, filter, rng);
  return detail::reduce(table, h_star, window, horizon, trials);
}

/// λ̄^N: same estimator with the true measurement in place of the reference prediction,
/// i.e. the windowed mean innovation statistic of each hypothesis against an outside truth.
inline DiagnosabilityReport estimate_lambda_bar(const Scenario& sc, const SystemModel& truth, const ControlSource& control,
                                                int window, int horizon, int trials, Rng& rng,
                                                const FilterOptions& filter = {}) {
  detail::check_args(window, horizon, trials);
  if (truth.nx() != sc.hypotheses.nx() || truth.nu() != sc.hypotheses.nu() || truth.ny() != sc.hypotheses.ny()) {
    throw ConfigError("estimate_lambda_bar: truth dimensions do not match M");
  }
  const auto table = detail::separation_rollouts(sc, truth, std::nullopt, control, window, horizon, trials, filter, rng);
  return detail::reduce(table, std::nullopt, window, horizon, trials);
}

}  // namespace fid
