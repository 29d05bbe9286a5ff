#pragma once

// Monte Carlo experiment driver: seeded trials, failure-rate and delay metrics,
// sweeps over N / noise scale / mode, ablations and the model-mismatch study.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fid/active.hpp"
#include "fid/engine.hpp"

namespace fid {

enum class Mode { passive, active };

inline std::string to_string(Mode m) { return m == Mode::active ? "active" : "passive"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "passive") return Mode::passive;
  if (s == "active") return Mode::active;
  throw ConfigError("unknown mode '" + s + "' (expected passive|active)");
}

struct ExperimentConfig {
  std::string name = "experiment";
  ScenarioConfig scenario;
  std::vector<Mode> modes{Mode::passive};
  std::vector<int> windows{5, 10, 25, 50};
  std::vector<double> noise_scales{1.0};
  int trials = 500;
  int horizon = -1;  ///< negative selects the scenario horizon
  double pi_star = 0.8;
  double alpha = 0.05;
  double belief_threshold = 0.95;
  bool reject = true;
  bool renormalize = true;
  ActiveOptions active;
  MismatchKnobs mismatch;
  FilterOptions filter;
  std::uint64_t master_seed = 1;
  int threads = 1;
  int max_redraws = 3;
  int trace_trials = 0;  ///< number of leading trials per point whose traces are written
};

inline void validate(const ExperimentConfig& c) {
  if (c.trials < 1) throw ConfigError("trials must be >= 1");
  if (!(c.pi_star >= 0.0 && c.pi_star <= 1.0)) throw ConfigError("pi_star must lie in [0, 1]");
  if (c.modes.empty() || c.windows.empty() || c.noise_scales.empty()) throw ConfigError("sweep lists must be nonempty");
  for (int n : c.windows) {
    if (n < 1) throw ConfigError("window lengths must be >= 1");
  }
  for (double s : c.noise_scales) {
    if (!(s > 0.0)) throw ConfigError("noise scales must be positive");
  }
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.max_redraws < 0) throw ConfigError("max_redraws must be >= 0");
}

inline FidConfig fid_config(const ExperimentConfig& c, int window) {
  FidConfig f;
  f.window = window;
  f.horizon = c.horizon;
  f.alpha = c.alpha;
  f.belief_threshold = c.belief_threshold;
  f.reject = c.reject;
  f.renormalize = c.renormalize;
  f.filter = c.filter;
  return f;
}

struct TrialResult {
  Decision decision;
  int failure = 0;
  int delay = 0;  ///< decision step; horizon K for NULL
  TruthSpec truth;
  std::string truth_label;
  int redraws = 0;
  int non_informative_steps = 0;
  std::optional<RunResult> run;  ///< kept when a trace was requested
};

/// Draws the truth (in M with probability π*), simulates and scores one trial.
/// Non-finite true-system states trigger a redraw from a derived seed, at most
/// `max_redraws` times.
inline TrialResult run_trial(const Scenario& base, const ExperimentConfig& cfg, Mode mode, int window,
                             std::uint64_t seed, bool keep_trace = false) {
  FidConfig fc = fid_config(cfg, window);
  fc.record_trace = keep_trace;
  const ControlSource source = mode == Mode::active ? active_control_source(cfg.active) : nominal_control_source();
  for (int attempt = 0; attempt <= cfg.max_redraws; ++attempt) {
    Rng rng(attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    const TruthSpec spec = draw_truth(base, cfg.pi_star, rng, cfg.mismatch);
    const Scenario sc = base.with_truth(spec);
    try {
      RunResult run = run_fid(sc, fc, source, rng);
      TrialResult tr;
      tr.decision = run.decision;
      tr.failure = failure_indicator(run.decision, sc.truth_index);
      tr.delay = run.decision.step;
      tr.truth = spec;
      tr.truth_label = sc.truth.label();
      tr.redraws = attempt;
      tr.non_informative_steps = run.non_informative_steps;
      if (keep_trace) tr.run = std::move(run);
      return tr;
    } catch (const SimulationError&) {
      continue;
    }
  }
  throw SimulationError("trial blew up on every redraw attempt (seed " + std::to_string(seed) + ")");
}

struct Metrics {
  Mode mode = Mode::passive;
  int window = 0;
  double noise_scale = 1.0;
  int trials = 0;
  int failures = 0;
  int failures_modeled = 0;    ///< F = 1 with h* in M
  int failures_unmodeled = 0;  ///< F = 1 with h* outside M
  int modeled_trials = 0;
  int correct = 0;             ///< identified the true modeled hypothesis
  int misidentified = 0;       ///< identified a wrong hypothesis (any truth)
  int nulls = 0;
  int redraws = 0;
  long non_informative_steps = 0;
  double failure_rate = 0.0;
  double stderr_rate = 0.0;
  double avg_delay = 0.0;      ///< over correct identifications
  double delay_sd = 0.0;
  double null_rate = 0.0;
  int min_decision_step = -1;  ///< smallest step over non-NULL decisions
  std::vector<int> decision_steps;
};

inline double binomial_stderr(double p, int n) { return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0; }

inline Metrics aggregate(const std::vector<TrialResult>& results, Mode mode, int window, double noise) {
  Metrics m;
  m.mode = mode;
  m.window = window;
  m.noise_scale = noise;
  m.trials = static_cast<int>(results.size());
  double dsum = 0.0;
  double dsq = 0.0;
  for (const auto& r : results) {
    m.failures += r.failure;
    m.redraws += r.redraws;
    m.non_informative_steps += r.non_informative_steps;
    if (r.truth.modeled) {
      ++m.modeled_trials;
      m.failures_modeled += r.failure;
    } else {
      m.failures_unmodeled += r.failure;
    }
    if (r.decision.is_null()) {
      ++m.nulls;
      continue;
    }
    m.decision_steps.push_back(r.delay);
    m.min_decision_step = m.min_decision_step < 0 ? r.delay : std::min(m.min_decision_step, r.delay);
    if (r.failure == 0) {
      ++m.correct;
      dsum += r.delay;
      dsq += static_cast<double>(r.delay) * r.delay;
    } else {
      ++m.misidentified;
    }
  }
  m.failure_rate = static_cast<double>(m.failures) / m.trials;
  m.stderr_rate = binomial_stderr(m.failure_rate, m.trials);
  m.null_rate = static_cast<double>(m.nulls) / m.trials;
  if (m.correct > 0) {
    m.avg_delay = dsum / m.correct;
    m.delay_sd = m.correct > 1 ? std::sqrt(std::max(0.0, (dsq - m.correct * m.avg_delay * m.avg_delay) / (m.correct - 1))) : 0.0;
  }
  return m;
}

/// Runs `count` independent jobs on up to `threads` workers; results are indexed
/// by job so the output does not depend on scheduling.
template <class Job>
auto parallel_map(int count, int threads, Job job) -> std::vector<decltype(job(0))> {
  std::vector<decltype(job(0))> out(static_cast<std::size_t>(count));
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = job(i);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        out[static_cast<std::size_t>(i)] = job(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(threads, count);
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

/// Trial seeds depend only on (master seed, trial index), so every sweep point
/// sees the same truths and noise streams.
inline std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial) {
  return derive_seed(cfg.master_seed, static_cast<std::uint64_t>(trial));
}

struct PointResult {
  Metrics metrics;
  std::vector<TrialResult> trials;
};

inline PointResult run_point(const Scenario& base, const ExperimentConfig& cfg, Mode mode, int window, double noise) {
  auto results = parallel_map(cfg.trials, cfg.threads, [&](int t) {
    return run_trial(base, cfg, mode, window, trial_seed(cfg, t), t < cfg.trace_trials);
  });
  Metrics m = aggregate(results, mode, window, noise);
  return {std::move(m), std::move(results)};
}

inline Scenario scenario_for_noise(const ExperimentConfig& cfg, double noise) {
  ScenarioConfig sc = cfg.scenario;
  sc.noise_scale = cfg.scenario.noise_scale * noise;
  return build_scenario(sc);
}

/// Metrics for every (mode, noise scale, N) point, in that nesting order.
inline std::vector<Metrics> run_monte_carlo(const ExperimentConfig& cfg) {
  validate(cfg);
  std::vector<Metrics> out;
  for (Mode mode : cfg.modes) {
    for (double noise : cfg.noise_scales) {
      const Scenario base = scenario_for_noise(cfg, noise);
      for (int n : cfg.windows) out.push_back(run_point(base, cfg, mode, n, noise).metrics);
    }
  }
  return out;
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"mode", to_string(m.mode)},
          {"N", m.window},
          {"noise", m.noise_scale},
          {"trials", m.trials},
          {"failures", m.failures},
          {"failures_modeled", m.failures_modeled},
          {"failures_unmodeled", m.failures_unmodeled},
          {"modeled_trials", m.modeled_trials},
          {"correct", m.correct},
          {"misidentified", m.misidentified},
          {"nulls", m.nulls},
          {"redraws", m.redraws},
          {"non_informative_steps", m.non_informative_steps},
          {"failure_rate", m.failure_rate},
          {"stderr", m.stderr_rate},
          {"avg_delay", m.avg_delay},
          {"delay_sd", m.delay_sd},
          {"null_rate", m.null_rate}};
}

inline nlohmann::json to_json(const RunResult& r, const HypothesisSet& M) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& m : M) labels.push_back(m.label());
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.trace) {
    nlohmann::json j{{"k", s.k}, {"evaluated", s.evaluated}, {"belief", s.belief}, {"diverged", s.diverged}};
    if (s.evaluated) {
      nlohmann::json chi = nlohmann::json::array();
      for (double c : s.chi_bar) chi.push_back(std::isfinite(c) ? nlohmann::json(c) : nlohmann::json(nullptr));
      j["chi_bar"] = chi;
      j["rejected"] = s.rejected;
      j["renormalized"] = s.renormalized;
      j["prior_reset"] = s.prior_reset;
    }
    if (s.control.size() > 0) j["control"] = std::vector<double>(s.control.data(), s.control.data() + s.control.size());
    j["non_informative"] = s.non_informative;
    steps.push_back(std::move(j));
  }
  nlohmann::json d{{"step", r.decision.step}, {"belief", r.decision.belief.values()}};
  d["identified"] = r.decision.is_null() ? nlohmann::json(nullptr) : nlohmann::json(M[*r.decision.identified].label());
  return {{"hypotheses", labels}, {"decision", d}, {"steps", steps}};
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

/// Writes results/{name}/sweep.csv, summary.json and traces/ under `root`.
inline std::vector<Metrics> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  validate(cfg);
  const auto dir = root / cfg.name;
  std::filesystem::create_directories(dir / "traces");
  std::vector<Metrics> all;
  for (Mode mode : cfg.modes) {
    for (double noise : cfg.noise_scales) {
      const Scenario base = scenario_for_noise(cfg, noise);
      for (int n : cfg.windows) {
        PointResult pr = run_point(base, cfg, mode, n, noise);
        for (int t = 0; t < std::min(cfg.trace_trials, cfg.trials); ++t) {
          const auto& tr = pr.trials[static_cast<std::size_t>(t)];
          if (!tr.run) continue;
          std::ostringstream name;
          name << to_string(mode) << "_N" << n << "_s" << format_number(noise) << "_t" << t << ".json";
          nlohmann::json j = to_json(*tr.run, base.hypotheses);
          j["truth"] = tr.truth_label;
          j["failure"] = tr.failure;
          std::ofstream(dir / "traces" / name.str()) << j.dump(1) << '\n';
        }
        all.push_back(std::move(pr.metrics));
      }
    }
  }

  std::ofstream csv(dir / "sweep.csv");
  csv << "mode,N,noise,failure_rate,stderr,avg_delay,null_rate\n";
  for (const auto& m : all) {
    csv << to_string(m.mode) << ',' << m.window << ',' << format_number(m.noise_scale) << ','
        << format_number(m.failure_rate) << ',' << format_number(m.stderr_rate) << ',' << format_number(m.avg_delay)
        << ',' << format_number(m.null_rate) << '\n';
  }
  nlohmann::json summary{{"name", cfg.name},
                         {"scenario", cfg.scenario.scenario},
                         {"trials", cfg.trials},
                         {"pi_star", cfg.pi_star},
                         {"alpha", cfg.alpha},
                         {"b_th", cfg.belief_threshold},
                         {"reject", cfg.reject},
                         {"renormalize", cfg.renormalize},
                         {"master_seed", cfg.master_seed},
                         {"points", nlohmann::json::array()}};
  for (const auto& m : all) summary["points"].push_back(to_json(m));
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  return all;
}

struct MismatchStudy {
  std::vector<Metrics> baseline;
  std::vector<Metrics> mismatched;
  std::vector<double> delta;  ///< mismatched - baseline failure rate, per point
};

/// Active FID with perturbed true-system parameters against the matched baseline.
/// Both arms use the same trial seeds.
inline MismatchStudy run_mismatch_study(const ExperimentConfig& cfg) {
  ExperimentConfig matched = cfg;
  matched.modes = {Mode::active};
  matched.mismatch = MismatchKnobs{};
  ExperimentConfig perturbed = matched;
  perturbed.mismatch = cfg.mismatch;
  MismatchStudy s;
  s.baseline = run_monte_carlo(matched);
  s.mismatched = run_monte_carlo(perturbed);
  for (std::size_t i = 0; i < s.baseline.size(); ++i) {
    s.delta.push_back(s.mismatched[i].failure_rate - s.baseline[i].failure_rate);
  }
  return s;
}

/// Preset ablation matrix: full algorithm, rejection without renormalization
/// (at α and 2α), and neither.
inline std::vector<std::pair<std::string, ExperimentConfig>> ablation_matrix(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  auto variant = [&](std::string label, bool reject, bool renorm, double alpha) {
    ExperimentConfig c = cfg;
    c.name = cfg.name + "/" + label;
    c.reject = reject;
    c.renormalize = renorm;
    c.alpha = alpha;
    out.emplace_back(std::move(label), std::move(c));
  };
  variant("full", true, true, cfg.alpha);
  variant("no_renorm", true, false, cfg.alpha);
  variant("no_renorm_alpha2x", true, false, std::min(2.0 * cfg.alpha, 0.5));
  variant("no_reject_no_renorm", false, false, cfg.alpha);
  return out;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("scenario")) {
      c.scenario = j.at("scenario").is_string() ? ScenarioConfig{} : scenario_config_from_json(j.at("scenario"));
      if (j.at("scenario").is_string()) c.scenario.scenario = j.at("scenario").get<std::string>();
    }
    if (j.contains("mode")) c.modes = {parse_mode(j.at("mode").get<std::string>())};
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(parse_mode(m.get<std::string>()));
    }
    c.windows = j.value("windows", c.windows);
    c.noise_scales = j.value("noise_scales", c.noise_scales);
    c.trials = j.value("trials", c.trials);
    c.horizon = j.value("horizon", c.horizon);
    c.pi_star = j.value("pi_star", c.pi_star);
    c.alpha = j.value("alpha", c.alpha);
    c.belief_threshold = j.value("b_th", c.belief_threshold);
    c.reject = j.value("reject", c.reject);
    c.renormalize = j.value("renormalize", c.renormalize);
    c.master_seed = j.value("seed", c.master_seed);
    c.threads = j.value("threads", c.threads);
    c.max_redraws = j.value("max_redraws", c.max_redraws);
    c.trace_trials = j.value("trace_trials", c.trace_trials);
    if (j.contains("active")) {
      const auto& a = j.at("active");
      c.active.grid_per_axis = a.value("grid_per_axis", c.active.grid_per_axis);
      c.active.refine_iters = a.value("refine_iters", c.active.refine_iters);
      c.active.authority_scale = a.value("authority_scale", c.active.authority_scale);
    }
    if (j.contains("mismatch")) {
      const auto& m = j.at("mismatch");
      c.mismatch.param_deviation = m.value("param_deviation", c.mismatch.param_deviation);
      c.mismatch.disturbance_fraction = m.value("disturbance_fraction", c.mismatch.disturbance_fraction);
    }
    if (j.contains("filter")) {
      const auto& f = j.at("filter");
      if (f.value("joseph", false)) c.filter.covariance_update = CovarianceUpdate::joseph;
      c.filter.limits.trace_cap = f.value("trace_cap", c.filter.limits.trace_cap);
      c.filter.limits.stat_mean_cap = f.value("stat_mean_cap", c.filter.limits.stat_mean_cap);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.scenario.pi_star = c.pi_star;
  validate(c);
  return c;
}

}  // namespace fid
