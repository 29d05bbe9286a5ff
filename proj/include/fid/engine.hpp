#pragma once

// Bayesian fault identification: windowed likelihoods, two-sided chi-square
// rejection, belief update with renormalization, and the identification loop.

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fid/filter.hpp"
#include "fid/scenarios.hpp"
#include "fid/stats.hpp"

namespace fid {

/// One absorbed step for one hypothesis.
struct WindowRecord {
  int k = 0;
  Vec u;  ///< u_{k-1}; empty at k = 0
  Vec y;
  Vec innovation;
  Mat innovation_cov;
  double stat = 0.0;         ///< eᵀS⁻¹e
  double log_density = 0.0;  ///< log N(e; 0, S)
  bool valid = true;         ///< false when the filter had diverged
};

/// Moving information window I_k^N: a ring of the last N records per hypothesis.
class Window {
 public:
  Window(std::size_t hypotheses, int capacity) : capacity_(capacity), rings_(hypotheses) {
    if (capacity < 1) throw ConfigError("window length N must be >= 1");
    for (auto& r : rings_) r.reserve(static_cast<std::size_t>(capacity));
  }

  int capacity() const { return capacity_; }
  std::size_t hypotheses() const { return rings_.size(); }
  /// I_k^N is nonempty once N measurements have been absorbed (k >= N-1).
  bool full() const { return absorbed_ >= capacity_; }
  int absorbed() const { return absorbed_; }

  void push(const FilterBank& bank, int k, const Vec* u_prev, const Vec& y) {
    if (bank.size() != rings_.size()) throw DimensionError("window/bank size mismatch");
    const std::size_t slot = static_cast<std::size_t>(absorbed_ % capacity_);
    for (std::size_t m = 0; m < rings_.size(); ++m) {
      const FilterState& fs = bank[m];
      WindowRecord rec{k, u_prev ? *u_prev : Vec(), y, fs.innovation, fs.innovation_cov,
                       fs.innovation_stat, fs.log_density, !fs.diverged};
      if (rings_[m].size() < static_cast<std::size_t>(capacity_)) {
        rings_[m].push_back(std::move(rec));
      } else {
        rings_[m][slot] = std::move(rec);
      }
    }
    ++absorbed_;
  }

  /// Records of hypothesis m in storage order (not necessarily chronological).
  std::span<const WindowRecord> entries(std::size_t m) const { return rings_.at(m); }

  /// χ̄² = (1/N) Σ eᵀS⁻¹e over the window; +inf if any record is invalid.
  double chi_bar(std::size_t m) const {
    double sum = 0.0;
    for (const auto& r : rings_.at(m)) {
      if (!r.valid) return kInf;
      sum += r.stat;
    }
    return sum / static_cast<double>(rings_.at(m).size());
  }

  std::vector<double> recent_stats(std::size_t m) const {
    std::vector<double> out;
    for (const auto& r : rings_.at(m)) {
      if (r.valid) out.push_back(r.stat);
    }
    return out;
  }

 private:
  int capacity_;
  int absorbed_ = 0;
  std::vector<std::vector<WindowRecord>> rings_;
};

/// log p(I_k^N | m) = Σ log N(e_i; 0, S_i); -inf if any record is unusable.
inline double log_likelihood(std::span<const WindowRecord> records) {
  if (records.empty()) throw InputError("log_likelihood: empty window");
  double sum = 0.0;
  for (const auto& r : records) {
    if (!r.valid || !std::isfinite(r.log_density)) return kNegInf;
    sum += r.log_density;
  }
  return sum;
}

enum class TestOutcome { accept, reject };

/// Two-sided chi-square acceptance interval for the window-mean statistic:
/// accept iff chi2inv(α/2, n_y N)/N <= χ̄² <= chi2inv(1-α/2, n_y N)/N.
class ChiSquareTest {
 public:
  ChiSquareTest(int window, Eigen::Index ny, double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("significance alpha must lie in (0, 1)");
    if (window < 1 || ny < 1) throw ConfigError("chi-square test needs N >= 1 and n_y >= 1");
    const double dof = static_cast<double>(ny) * window;
    lower_ = stats::chi2_quantile(alpha / 2.0, dof) / window;
    upper_ = stats::chi2_quantile(1.0 - alpha / 2.0, dof) / window;
  }

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double alpha() const { return alpha_; }

  TestOutcome operator()(double chi_bar) const {
    if (!(chi_bar >= lower_ && chi_bar <= upper_)) return TestOutcome::reject;
    return TestOutcome::accept;
  }

 private:
  double alpha_;
  double lower_;
  double upper_;
};

inline TestOutcome hypothesis_test(double chi_bar, int window, Eigen::Index ny, double alpha) {
  if (!(chi_bar >= 0.0)) throw InputError("hypothesis_test: chi_bar must be >= 0");
  return ChiSquareTest(window, ny, alpha)(chi_bar);
}

/// Probability vector over M.
class Belief {
 public:
  Belief() = default;
  explicit Belief(std::vector<double> p) : p_(std::move(p)) {
    if (p_.empty()) throw ConfigError("belief must be nonempty");
    double sum = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("belief entries must lie in [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("belief must sum to 1");
  }

  static Belief uniform(std::size_t n) { return Belief(std::vector<double>(n, 1.0 / static_cast<double>(n))); }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_.at(i); }
  const std::vector<double>& values() const { return p_; }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(p_.begin(), p_.end()) - p_.begin());
  }

 private:
  std::vector<double> p_;
};

struct BeliefUpdate {
  Belief belief;
  bool renormalized = false;  ///< every hypothesis rejected, belief reset to uniform
  bool prior_reset = false;   ///< surviving hypotheses all had zero prior mass; prior reset to uniform
};

/// Bayes rule in log space with max-subtraction. -inf log-likelihood encodes rejection.
/// If every hypothesis is rejected the belief is reset to uniform (or left unchanged
/// when renormalization is disabled). If the survivors all had zero prior mass, the
/// update restarts from a uniform prior and flags prior_reset.
inline BeliefUpdate belief_update(const Belief& prior, std::span<const double> log_likelihoods, bool renormalize = true) {
  const std::size_t n = prior.size();
  if (log_likelihoods.size() != n) throw DimensionError("belief_update: likelihood count mismatch");
  double max_ll = kNegInf;
  for (double l : log_likelihoods) {
    if (std::isnan(l)) throw InputError("belief_update: NaN log-likelihood");
    max_ll = std::max(max_ll, l);
  }
  if (max_ll == kNegInf) {
    if (renormalize) return {Belief::uniform(n), true, false};
    return {prior, false, false};
  }

  auto posterior = [&](const std::vector<double>& base) {
    std::vector<double> w(n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (log_likelihoods[i] == kNegInf || base[i] == 0.0) continue;
      w[i] = std::exp(log_likelihoods[i] - max_ll) * base[i];
      z += w[i];
    }
    if (z > 0.0) {
      for (double& v : w) v /= z;
    }
    return std::pair{w, z};
  };

  auto [w, z] = posterior(prior.values());
  if (z > 0.0) return {Belief(std::move(w)), false, false};
  // Survivors exist but carry no prior mass: restart from a uniform prior in either mode.
  auto [w2, z2] = posterior(Belief::uniform(n).values());
  return {Belief(std::move(w2)), false, true};
}

struct FidConfig {
  int window = 10;                 ///< N
  int horizon = -1;                ///< K; negative selects the scenario horizon
  double alpha = 0.05;
  double belief_threshold = 0.95;  ///< b_th
  bool reject = true;              ///< chi-square rejection on/off
  bool renormalize = true;         ///< uniform reset on total rejection on/off
  std::optional<std::vector<double>> initial_belief;
  FilterOptions filter;
  bool record_trace = false;
};

struct Decision {
  std::optional<std::size_t> identified;  ///< nullopt encodes NULL
  int step = 0;                           ///< k at which the decision was made (K for NULL)
  Belief belief;

  bool is_null() const { return !identified.has_value(); }
};

struct StepRecord {
  int k = 0;
  bool evaluated = false;  ///< window was full and the test/update ran
  std::vector<double> belief;
  std::vector<double> chi_bar;
  std::vector<bool> rejected;
  std::vector<bool> diverged;
  bool renormalized = false;
  bool prior_reset = false;
  Vec control;  ///< u_k applied after this step (empty on the deciding step)
  bool non_informative = false;
};

struct RunResult {
  Decision decision;
  std::vector<StepRecord> trace;
  std::vector<Vec> controls;
  std::vector<Vec> measurements;
  int non_informative_steps = 0;
};

/// What a control source sees when choosing u_k after absorbing y_k.
struct ControlContext {
  int k;
  const Vec& y;
  const FilterBank& bank;
  const HypothesisSet& hypotheses;
  const std::vector<bool>& excluded;  ///< rejected or diverged at step k
  const Scenario& scenario;
};

/// Chosen control plus a flag for steps where no informative control existed.
struct ControlChoice {
  Vec u;
  bool non_informative = false;
};

using ControlSource = std::function<ControlChoice(const ControlContext&)>;

inline ControlSource nominal_control_source() {
  return [](const ControlContext& c) { return ControlChoice{c.scenario.nominal(c.k, c.y), false}; };
}

inline ControlSource fixed_control_source(std::vector<Vec> sequence) {
  if (sequence.empty()) throw ConfigError("fixed control sequence must be nonempty");
  return [seq = std::move(sequence)](const ControlContext& c) {
    const std::size_t i = std::min(static_cast<std::size_t>(c.k), seq.size() - 1);
    return ControlChoice{seq[i], false};
  };
}

/// The true system's state left the finite range.
class SimulationError : public Error {
 public:
  using Error::Error;
};

inline void validate(const FidConfig& cfg, const HypothesisSet& M) {
  if (cfg.window < 1) throw ConfigError("window length N must be >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const double floor = 1.0 / static_cast<double>(M.size());
  if (!(cfg.belief_threshold >= floor - 1e-15 && cfg.belief_threshold <= 1.0)) {
    throw ConfigError("belief threshold must lie in [1/|M|, 1]");
  }
  if (cfg.initial_belief && cfg.initial_belief->size() != M.size()) {
    throw ConfigError("initial belief size does not match |M|");
  }
}

/// Windowed Bayesian identification loop. The true system is simulated from a draw
/// x_0 ~ N(x̂_0, Σ_0); at each k the bank absorbs y_k, and once I_k^N is nonempty
/// each hypothesis is tested, the belief updated, and the first hypothesis with
/// belief above b_th is returned. The control source picks u_k after every step.
inline RunResult run_fid(const Scenario& sc, const FidConfig& cfg, const ControlSource& control, Rng& rng) {
  const HypothesisSet& M = sc.hypotheses;
  validate(cfg, M);
  if (sc.truth.nx() != M.nx() || sc.truth.nu() != M.nu() || sc.truth.ny() != M.ny()) {
    throw ConfigError("true system dimensions do not match the hypotheses");
  }
  const int horizon = cfg.horizon >= 0 ? cfg.horizon : sc.horizon;
  const std::size_t n = M.size();
  const ChiSquareTest test(cfg.window, M.ny(), cfg.alpha);

  FilterBank bank(M, sc.x0_mean, sc.x0_cov, cfg.filter);
  Window window(n, cfg.window);
  Belief belief = cfg.initial_belief ? Belief(*cfg.initial_belief) : Belief::uniform(n);

  RunResult result;
  Vec x = sample_gaussian(sc.x0_mean, cholesky_lower(sc.x0_cov, "x0 covariance"), rng);
  Vec u_prev;
  std::vector<double> loglik(n);
  std::vector<bool> excluded(n, false);

  for (int k = 0; k <= horizon; ++k) {
    const Vec y = measure(sc.truth, x, rng);
    const Vec* up = k == 0 ? nullptr : &u_prev;
    bank.observe(M, up, y);
    window.push(bank, k, up, y);

    StepRecord rec;
    rec.k = k;
    rec.diverged.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
      const auto stats = window.recent_stats(m);
      rec.diverged[m] = bank.check(m, stats);
      excluded[m] = rec.diverged[m];
    }

    if (window.full()) {
      rec.evaluated = true;
      rec.chi_bar.resize(n);
      rec.rejected.resize(n);
      for (std::size_t m = 0; m < n; ++m) {
        rec.chi_bar[m] = window.chi_bar(m);
        const bool rejected = rec.diverged[m] || (cfg.reject && test(rec.chi_bar[m]) == TestOutcome::reject);
        rec.rejected[m] = rejected;
        excluded[m] = rejected;
        loglik[m] = rejected ? kNegInf : log_likelihood(window.entries(m));
      }
      BeliefUpdate upd = belief_update(belief, loglik, cfg.renormalize);
      belief = std::move(upd.belief);
      rec.renormalized = upd.renormalized;
      rec.prior_reset = upd.prior_reset;
      rec.belief = belief.values();

      const std::size_t best = belief.argmax();
      if (belief[best] > cfg.belief_threshold) {
        result.decision = Decision{best, k, belief};
        if (cfg.record_trace) result.trace.push_back(std::move(rec));
        result.measurements.push_back(y);
        return result;
      }
    } else {
      rec.belief = belief.values();
    }

    const ControlContext ctx{k, y, bank, M, excluded, sc};
    ControlChoice choice = control(ctx);
    if (choice.u.size() != M.nu() || !choice.u.allFinite()) throw ConfigError("control source returned an invalid control");
    if (choice.non_informative) ++result.non_informative_steps;
    rec.control = choice.u;
    rec.non_informative = choice.non_informative;
    if (cfg.record_trace) result.trace.push_back(std::move(rec));
    result.controls.push_back(choice.u);
    result.measurements.push_back(y);

    x = step_dynamics(sc.truth, x, choice.u, rng);
    if (!x.allFinite()) throw SimulationError("true system state became non-finite");
    u_prev = std::move(choice.u);
  }
  result.decision = Decision{std::nullopt, horizon, belief};
  return result;
}

/// Identification loop under the scenario's nominal policy.
inline RunResult passive_fid_run(const Scenario& sc, const FidConfig& cfg, Rng& rng) {
  return run_fid(sc, cfg, nominal_control_source(), rng);
}

/// Identification loop under a fixed open-loop control sequence (last entry held).
inline RunResult passive_fid_run(const Scenario& sc, const FidConfig& cfg, std::vector<Vec> controls, Rng& rng) {
  return run_fid(sc, cfg, fixed_control_source(std::move(controls)), rng);
}

/// 1 iff a modeled truth is misidentified or an unmodeled truth is identified as modeled.
inline int failure_indicator(const Decision& d, std::optional<std::size_t> truth_index) {
  if (truth_index) return d.identified == truth_index ? 0 : 1;
  return d.is_null() ? 0 : 1;
}

}  // namespace fid
