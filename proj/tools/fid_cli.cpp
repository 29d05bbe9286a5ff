// fid_cli: single runs, sweeps, diagnosability estimates and ablations.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "fid/fid.hpp"

using namespace fid;

namespace {

struct Common {
  std::string config;
  std::string scenario;
  std::vector<int> windows;
  int horizon = -1;
  int trials = -1;
  double alpha = -1.0;
  double b_th = -1.0;
  double pi_star = -1.0;
  long long seed = -1;
  int threads = 0;
  std::string mode;
  bool no_renorm = false;
  bool no_reject = false;
  int grid = 0;
  double authority = -1.0;
  int refine = -1;
  std::string out = "results";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment JSON file");
  app->add_option("--scenario", c.scenario, "scenario name (two_tank, mars_satellite, example1, custom)");
  app->add_option("--N", c.windows, "window length(s)");
  app->add_option("--K", c.horizon, "horizon");
  app->add_option("--trials", c.trials, "Monte Carlo trials");
  app->add_option("--alpha", c.alpha, "significance level");
  app->add_option("--b-th", c.b_th, "belief threshold");
  app->add_option("--pi-star", c.pi_star, "probability that the truth is in M");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--threads", c.threads, "worker threads");
  app->add_option("--mode", c.mode, "passive or active");
  app->add_flag("--no-renorm", c.no_renorm, "disable uniform reset on total rejection");
  app->add_flag("--no-reject", c.no_reject, "disable chi-square rejection");
  app->add_option("--grid-per-axis", c.grid, "active grid resolution");
  app->add_option("--authority-scale", c.authority, "scale of the admissible control box");
  app->add_option("--refine-iters", c.refine, "active refinement passes");
  app->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : experiment_config_from_json(load_json_file(c.config));
  if (!c.scenario.empty()) {
    cfg.scenario.scenario = c.scenario;
    if (c.config.empty()) cfg.name = c.scenario;
  }
  if (!c.windows.empty()) cfg.windows = c.windows;
  if (c.horizon >= 0) cfg.horizon = c.horizon;
  if (c.trials > 0) cfg.trials = c.trials;
  if (c.alpha > 0) cfg.alpha = c.alpha;
  if (c.b_th > 0) cfg.belief_threshold = c.b_th;
  if (c.pi_star >= 0) cfg.pi_star = cfg.scenario.pi_star = c.pi_star;
  if (c.seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(c.seed);
  if (c.threads > 0) cfg.threads = c.threads;
  if (!c.mode.empty()) cfg.modes = {parse_mode(c.mode)};
  if (c.no_renorm) cfg.renormalize = false;
  if (c.no_reject) cfg.reject = false;
  if (c.grid > 0) cfg.active.grid_per_axis = c.grid;
  if (c.authority >= 0) cfg.active.authority_scale = c.authority;
  if (c.refine >= 0) cfg.active.refine_iters = c.refine;
  validate(cfg);
  return cfg;
}

void print_metrics(const std::vector<Metrics>& ms) {
  std::cout << "mode     N    noise   failure   stderr   delay   null\n";
  for (const auto& m : ms) {
    std::printf("%-7s %3d  %6.3g  %8.4f  %7.4f  %6.2f  %5.3f\n", to_string(m.mode).c_str(), m.window, m.noise_scale,
                m.failure_rate, m.stderr_rate, m.avg_delay, m.null_rate);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault identification under unmodeled faults"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, diag_opts, ablate_opts;

  auto* run = app.add_subcommand("run", "one trial; prints the decision and optionally the trace");
  add_common(run, run_opts);
  int trial = 0;
  bool trace = false;
  run->add_option("--trial", trial, "trial index (selects the seed)");
  run->add_flag("--trace", trace, "include the per-step trace");

  auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over mode, noise scale and N");
  add_common(sweep, sweep_opts);

  auto* diag = app.add_subcommand("diagnose", "estimate lambda (truth in M) or lambda-bar (unmodeled truth)");
  add_common(diag, diag_opts);
  int h_star = 0;
  int unmodeled = -1;
  diag->add_option("--h-star", h_star, "index of the true hypothesis in M");
  diag->add_option("--unmodeled", unmodeled, "index of an unmodeled truth (selects lambda-bar)");

  auto* ablate = app.add_subcommand("ablate", "run the rejection/renormalization ablation matrix");
  add_common(ablate, ablate_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig cfg = resolve(run_opts);
      const Scenario base = build_scenario(cfg.scenario);
      const Mode mode = cfg.modes.front();
      const TrialResult tr = run_trial(base, cfg, mode, cfg.windows.front(), trial_seed(cfg, trial), true);
      nlohmann::json j = to_json(*tr.run, base.hypotheses);
      j["truth"] = tr.truth_label;
      j["failure"] = tr.failure;
      j["mode"] = to_string(mode);
      j["N"] = cfg.windows.front();
      if (!trace) j.erase("steps");
      std::cout << j.dump(2) << '\n';
    } else if (*sweep) {
      const ExperimentConfig cfg = resolve(sweep_opts);
      print_metrics(run_sweep(cfg, sweep_opts.out));
      std::cout << "wrote " << (std::filesystem::path(sweep_opts.out) / cfg.name).string() << '\n';
    } else if (*diag) {
      const ExperimentConfig cfg = resolve(diag_opts);
      const Scenario sc = build_scenario(cfg.scenario);
      const int K = cfg.horizon >= 0 ? cfg.horizon : sc.horizon;
      const ControlSource control =
          cfg.modes.front() == Mode::active ? active_control_source(cfg.active) : nominal_control_source();
      nlohmann::json out = nlohmann::json::array();
      for (int N : cfg.windows) {
        Rng rng(cfg.master_seed);
        DiagnosabilityReport r;
        if (unmodeled >= 0) {
          if (static_cast<std::size_t>(unmodeled) >= sc.unmodeled.size()) throw ConfigError("--unmodeled out of range");
          r = estimate_lambda_bar(sc, sc.unmodeled[static_cast<std::size_t>(unmodeled)], control, N, K, cfg.trials,
                                  rng, cfg.filter);
        } else {
          r = estimate_lambda(sc, static_cast<std::size_t>(h_star), control, N, K, cfg.trials, rng, cfg.filter);
        }
        nlohmann::json j = to_json(r);
        j["fundamentally_limited"] = is_fundamentally_limited(r);
        out.push_back(std::move(j));
      }
      std::cout << out.dump(2) << '\n';
    } else if (*ablate) {
      const ExperimentConfig cfg = resolve(ablate_opts);
      for (const auto& [label, variant] : ablation_matrix(cfg)) {
        std::cout << "== " << label << '\n';
        print_metrics(run_sweep(variant, ablate_opts.out));
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
