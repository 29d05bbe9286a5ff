#pragma once

// Scenario families: the linear two-hypothesis toy problem, a Torricelli two-tank
// process and a rigid-body satellite with MRP attitude kinematics.

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fid/models.hpp"

namespace fid {

/// Axis-aligned admissible control box.
struct ControlBox {
  Vec lower;
  Vec upper;

  ControlBox() = default;
  ControlBox(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw DimensionError("control box: bound dimension mismatch");
    if (!lower.allFinite() || !upper.allFinite()) throw ConfigError("control box: bounds must be finite");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      if (lower[i] > upper[i]) throw ConfigError("control box: lower bound exceeds upper bound");
    }
  }

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Vec& u, double tol = 1e-12) const {
    return u.size() == dim() && (u.array() >= lower.array() - tol).all() && (u.array() <= upper.array() + tol).all();
  }
  Vec clamp(const Vec& u) const { return u.cwiseMax(lower).cwiseMin(upper); }
  /// {s·u : u in box}.
  ControlBox scaled(double s) const {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("control box: scale must be finite and >= 0");
    return ControlBox(lower * s, upper * s);
  }
};

/// Nominal (passive-mode) policy: control applied after observing measurement y_k.
using NominalPolicy = std::function<Vec(int k, const Vec& y)>;

/// Which system is actually running. `modeled` selects M[index], otherwise the
/// index-th unmodeled variant. Deviations and disturbance realize model mismatch.
struct TruthSpec {
  bool modeled = true;
  std::size_t index = 0;
  Vec param_deviation;  ///< relative deviation per fault parameter; empty means none
  Vec disturbance;      ///< constant additive input disturbance; empty means none
};

/// Mismatch knobs for the true system (filters always keep the nominal hypotheses).
struct MismatchKnobs {
  double param_deviation = 0.0;        ///< max relative fault-parameter deviation
  double disturbance_fraction = 0.0;   ///< max disturbance as a fraction of max |control|
};

struct ScenarioConfig {
  std::string scenario = "two_tank";
  int horizon = 0;  ///< 0 selects the scenario default
  double noise_scale = 1.0;          ///< multiplies the baseline measurement covariance R
  double process_noise_scale = 1.0;  ///< multiplies the baseline process covariance Q
  double pi_star = 0.8;
  double dt = 0.0;        ///< 0 selects the scenario default
  int rk4_substeps = 0;   ///< 0 selects the scenario default
  nlohmann::json fault_params = nlohmann::json::object();
  nlohmann::json params = nlohmann::json::object();
  std::optional<ControlBox> control_bounds = std::nullopt;
};

struct Scenario {
  std::string name;
  HypothesisSet hypotheses;
  std::vector<SystemModel> unmodeled;
  SystemModel truth;
  std::optional<std::size_t> truth_index;  ///< set iff the truth is in M
  Vec x0_mean;
  Mat x0_cov;
  NominalPolicy nominal;
  ControlBox admissible;
  int horizon = 0;
  std::size_t fault_param_count = 0;
  std::function<SystemModel(const TruthSpec&)> realize;

  Scenario with_truth(const TruthSpec& spec) const {
    Scenario s = *this;
    s.truth = realize(spec);
    s.truth_index = spec.modeled ? std::optional<std::size_t>(spec.index) : std::nullopt;
    return s;
  }
};

/// h* ∈ M with probability π* (uniform over M), otherwise uniform over the unmodeled variants.
inline TruthSpec draw_truth(const Scenario& sc, double pi_star, Rng& rng, const MismatchKnobs& knobs = {}) {
  if (!(pi_star >= 0.0 && pi_star <= 1.0)) throw ConfigError("pi_star must lie in [0, 1]");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TruthSpec t;
  const double draw = unif(rng);
  t.modeled = sc.unmodeled.empty() || draw < pi_star;
  const std::size_t count = t.modeled ? sc.hypotheses.size() : sc.unmodeled.size();
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  t.index = pick(rng);
  if (knobs.param_deviation > 0.0 && sc.fault_param_count > 0) {
    std::uniform_real_distribution<double> dev(-knobs.param_deviation, knobs.param_deviation);
    t.param_deviation = Vec(static_cast<Eigen::Index>(sc.fault_param_count));
    for (Eigen::Index i = 0; i < t.param_deviation.size(); ++i) t.param_deviation[i] = dev(rng);
  }
  if (knobs.disturbance_fraction > 0.0) {
    const double umax = std::max(sc.admissible.lower.cwiseAbs().maxCoeff(), sc.admissible.upper.cwiseAbs().maxCoeff());
    std::uniform_real_distribution<double> dist(-knobs.disturbance_fraction * umax, knobs.disturbance_fraction * umax);
    t.disturbance = Vec(sc.admissible.dim());
    for (Eigen::Index i = 0; i < t.disturbance.size(); ++i) t.disturbance[i] = dist(rng);
  }
  return t;
}

namespace detail {

inline double param_or(const nlohmann::json& j, const char* key, double fallback) {
  if (j.is_object() && j.contains(key)) return j.at(key).get<double>();
  return fallback;
}

inline std::vector<double> vector_or(const nlohmann::json& j, const char* key, std::vector<double> fallback) {
  if (j.is_object() && j.contains(key)) return j.at(key).get<std::vector<double>>();
  return fallback;
}

inline Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

inline Mat diag_cov(const Vec& std_devs, double scale) {
  return Mat((std_devs.array().square() * scale).matrix().asDiagonal());
}

inline double nonneg_param(const nlohmann::json& j, const char* key, double fallback) {
  const double v = param_or(j, key, fallback);
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("invalid fault parameter '") + key + "': must be >= 0");
  return v;
}

inline double deviated(double value, const TruthSpec& t, Eigen::Index i) {
  if (t.param_deviation.size() > i) return value * (1.0 + t.param_deviation[i]);
  return value;
}

inline Vec disturbance_or_zero(const TruthSpec& t, Eigen::Index nu) {
  if (t.disturbance.size() == nu) return t.disturbance;
  return Vec::Zero(nu);
}

inline int horizon_or(const ScenarioConfig& c, int fallback) {
  const int k = c.horizon > 0 ? c.horizon : fallback;
  if (k < 0) throw ConfigError("horizon must be >= 0");
  return k;
}

inline ControlBox bounds_or(const ScenarioConfig& c, ControlBox fallback, Eigen::Index nu) {
  ControlBox box = c.control_bounds ? *c.control_bounds : std::move(fallback);
  if (box.dim() != nu) throw DimensionError("control bounds dimension does not match the scenario");
  return box;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear toy problem: x' = x + B u, y = x with B = I (h*) or diag(1, 0.5) (m).

inline Scenario build_example1(const ScenarioConfig& cfg) {
  const double q = detail::param_or(cfg.params, "process_std", 0.05);
  const double r = detail::param_or(cfg.params, "measurement_std", 0.1);
  const double gain = detail::param_or(cfg.fault_params, "axis2_gain", 0.5);
  const double unmodeled_gain = detail::param_or(cfg.fault_params, "unmodeled_axis2_gain", 0.75);
  if (!(gain > 0.0) || !(unmodeled_gain > 0.0)) throw ConfigError("example1: input gains must be positive");
  const Mat Q = Mat::Identity(2, 2) * q * q * cfg.process_noise_scale;
  const Mat R = Mat::Identity(2, 2) * r * r * cfg.noise_scale;
  const Mat I2 = Mat::Identity(2, 2);

  auto make = [Q, R, I2](std::string label, double g2, const TruthSpec* t) {
    Mat B = I2;
    B(1, 1) = t ? detail::deviated(g2, *t, 0) : g2;
    if (t && t->disturbance.size() == 2) {
      // Disturbance enters as a constant additive input.
      const Vec d = t->disturbance;
      ModelSpec s = linear_model(label, I2, B, I2, Q, R).spec();
      s.dynamics = [B, d](const Vec& x, const Vec& u) -> Vec { return x + B * (u + d); };
      return SystemModel(std::move(s));
    }
    return linear_model(std::move(label), I2, B, I2, Q, R);
  };

  std::vector<SystemModel> models{make("h*", 1.0, nullptr), make("m", gain, nullptr)};
  const std::vector<double> gains{1.0, gain};

  const std::vector<double> u_nom = detail::vector_or(cfg.params, "nominal_control", {1.0, 0.0});
  const Vec u_nominal = detail::to_vec(u_nom);
  Scenario sc{
      "example1",
      HypothesisSet(models),
      {make("unmodeled", unmodeled_gain, nullptr)},
      models[0],
      0,
      detail::to_vec(detail::vector_or(cfg.params, "x0", {0.0, 0.0})),
      Mat::Identity(2, 2) * std::pow(detail::param_or(cfg.params, "x0_std", 0.1), 2),
      [u_nominal](int, const Vec&) { return u_nominal; },
      detail::bounds_or(cfg, ControlBox(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)), 2),
      detail::horizon_or(cfg, 50),
      1,
      {}};
  sc.realize = [make, gains, unmodeled_gain](const TruthSpec& t) {
    const double g = t.modeled ? gains.at(t.index) : unmodeled_gain;
    return make(t.modeled ? (t.index == 0 ? "h*" : "m") : "unmodeled", g, &t);
  };
  if (!is_spd(sc.x0_cov)) throw ConfigError("example1: x0 covariance must be positive definite");
  return sc;
}

// ---------------------------------------------------------------------------
// Scalar linear family x' = a x + g u, y = x, one hypothesis per input gain.

inline Scenario build_custom_linear(const ScenarioConfig& cfg) {
  const double a = detail::param_or(cfg.params, "a", 0.9);
  const double q = detail::param_or(cfg.params, "process_std", 0.01);
  const double r = detail::param_or(cfg.params, "measurement_std", 0.01);
  const std::vector<double> gains = detail::vector_or(cfg.fault_params, "gains", {1.0, 5.0});
  const std::vector<double> unmodeled = detail::vector_or(cfg.fault_params, "unmodeled_gains", {3.0});
  const Mat Q = Mat::Constant(1, 1, q * q * cfg.process_noise_scale);
  const Mat R = Mat::Constant(1, 1, r * r * cfg.noise_scale);

  auto make = [a, Q, R](const std::string& label, double g, const TruthSpec* t) {
    const double gain = t ? detail::deviated(g, *t, 0) : g;
    const double d = (t && t->disturbance.size() == 1) ? t->disturbance[0] : 0.0;
    ModelSpec s = linear_model(label, Mat::Constant(1, 1, a), Mat::Constant(1, 1, gain), Mat::Identity(1, 1), Q, R).spec();
    if (d != 0.0) s.dynamics = [a, gain, d](const Vec& x, const Vec& u) -> Vec { return a * x + gain * (u.array() + d).matrix(); };
    return SystemModel(std::move(s));
  };
  auto label_of = [](const char* prefix, double g) {
    std::ostringstream os;
    os << prefix << g;
    return os.str();
  };

  std::vector<SystemModel> models;
  for (double g : gains) models.push_back(make(label_of("gain_", g), g, nullptr));
  std::vector<SystemModel> extra;
  for (double g : unmodeled) extra.push_back(make(label_of("unmodeled_gain_", g), g, nullptr));

  const double u_nominal = detail::param_or(cfg.params, "nominal_control", 1.0);
  Scenario sc{"custom",
              HypothesisSet(models),
              extra,
              models[0],
              0,
              Vec::Constant(1, detail::param_or(cfg.params, "x0", 0.0)),
              Mat::Constant(1, 1, std::pow(detail::param_or(cfg.params, "x0_std", 0.01), 2)),
              [u_nominal](int, const Vec&) { return Vec::Constant(1, u_nominal); },
              detail::bounds_or(cfg, ControlBox(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)), 1),
              detail::horizon_or(cfg, 200),
              1,
              {}};
  sc.realize = [make, gains, unmodeled, label_of](const TruthSpec& t) {
    const double g = t.modeled ? gains.at(t.index) : unmodeled.at(t.index);
    return make(label_of(t.modeled ? "gain_" : "unmodeled_gain_", g), g, &t);
  };
  return sc;
}

// ---------------------------------------------------------------------------
// Two-tank process. State (h1, h2), inflow u into tank 1, Torricelli outflow
// q = c·sqrt(h) from tank 1 into tank 2 and from tank 2 to the drain. Faults add
// leak orifices: tank 1 to ambient, tank 1 to tank 2, tank 2 to ambient.

struct TwoTankParams {
  double area1 = 1.0;
  double area2 = 1.0;
  double c12 = 0.5;  ///< nominal tank1 -> tank2 orifice
  double c2 = 0.5;   ///< nominal tank2 drain orifice
  double leak1 = 0.0;
  double leak12 = 0.0;
  double leak2 = 0.0;
  double dt = 1.0;
  int substeps = 4;
};

namespace detail {

inline double torricelli(double h) { return std::sqrt(std::max(h, 0.0)); }
inline double torricelli_slope(double h) { return h > 1e-12 ? 0.5 / std::sqrt(h) : 0.0; }

}  // namespace detail

inline Vec two_tank_field(const TwoTankParams& p, const Vec& x, const Vec& u) {
  const double s1 = detail::torricelli(x[0]);
  const double s2 = detail::torricelli(x[1]);
  const double q12 = (p.c12 + p.leak12) * s1;
  Vec dx(2);
  dx[0] = (u[0] - q12 - p.leak1 * s1) / p.area1;
  dx[1] = (q12 - (p.c2 + p.leak2) * s2) / p.area2;
  return dx;
}

inline Mat two_tank_field_jacobian(const TwoTankParams& p, const Vec& x, const Vec&) {
  const double d1 = detail::torricelli_slope(x[0]);
  const double d2 = detail::torricelli_slope(x[1]);
  Mat J(2, 2);
  J(0, 0) = -(p.c12 + p.leak12 + p.leak1) * d1 / p.area1;
  J(0, 1) = 0.0;
  J(1, 0) = (p.c12 + p.leak12) * d1 / p.area2;
  J(1, 1) = -(p.c2 + p.leak2) * d2 / p.area2;
  return J;
}

inline SystemModel make_two_tank_model(std::string label, const TwoTankParams& p, const Mat& Q, const Mat& R,
                                       bool measure_both, Vec disturbance = Vec()) {
  if (p.leak1 < 0 || p.leak12 < 0 || p.leak2 < 0) throw ConfigError("two_tank: leak coefficients must be >= 0");
  if (!(p.area1 > 0 && p.area2 > 0 && p.c12 > 0 && p.c2 > 0 && p.dt > 0 && p.substeps > 0)) {
    throw ConfigError("two_tank: physical constants must be positive");
  }
  const Vec d = disturbance.size() == 1 ? disturbance : Vec::Zero(1);
  auto field = [p, d](const Vec& x, const Vec& u) { return two_tank_field(p, x, u + d); };
  auto jac = [p](const Vec& x, const Vec& u) { return two_tank_field_jacobian(p, x, u); };
  Mat C = measure_both ? Mat(Mat::Identity(2, 2)) : Mat(Mat::Zero(1, 2));
  if (!measure_both) C(0, 1) = 1.0;

  ModelSpec s;
  s.label = std::move(label);
  s.nx = 2;
  s.nu = 1;
  s.ny = C.rows();
  s.dynamics = [=](const Vec& x, const Vec& u) { return rk4_integrate(field, x, u, p.dt, p.substeps); };
  s.linearized_dynamics = [=](const Vec& x, const Vec& u) {
    return rk4_integrate_linearized(field, jac, x, u, p.dt, p.substeps);
  };
  s.measurement = [C](const Vec& x) -> Vec { return C * x; };
  s.measurement_jacobian = [C](const Vec&) -> Mat { return C; };
  s.process_cov = Q;
  s.measurement_cov = R;
  return SystemModel(std::move(s));
}

inline Scenario build_two_tank(const ScenarioConfig& cfg) {
  using detail::param_or;
  TwoTankParams base;
  base.area1 = param_or(cfg.params, "area1", base.area1);
  base.area2 = param_or(cfg.params, "area2", base.area2);
  base.c12 = param_or(cfg.params, "c12", base.c12);
  base.c2 = param_or(cfg.params, "c2", base.c2);
  base.dt = cfg.dt > 0 ? cfg.dt : 1.0;
  base.substeps = cfg.rk4_substeps > 0 ? cfg.rk4_substeps : 4;

  const std::array<double, 3> leaks{detail::nonneg_param(cfg.fault_params, "leak_tank1", 0.1),
                                    detail::nonneg_param(cfg.fault_params, "leak_tank1_to_tank2", 0.1),
                                    detail::nonneg_param(cfg.fault_params, "leak_tank2", 0.1)};
  const double unmodeled_fraction = detail::nonneg_param(cfg.fault_params, "unmodeled_fraction", 0.5);

  const std::string measured = cfg.params.value("measured", std::string("both"));
  if (measured != "both" && measured != "tank2") throw ConfigError("two_tank: 'measured' must be 'both' or 'tank2'");
  const bool both = measured == "both";
  const double q = param_or(cfg.params, "process_std", 0.005);
  const double r = param_or(cfg.params, "measurement_std", 0.06);
  const Mat Q = Mat::Identity(2, 2) * q * q * cfg.process_noise_scale;
  const Mat R = Mat::Identity(both ? 2 : 1, both ? 2 : 1) * r * r * cfg.noise_scale;

  static const std::array<const char*, 4> kLabels{"nominal", "leak_tank1", "leak_tank1_to_tank2", "leak_tank2"};
  // Fault f in {0 (nominal), 1, 2, 3}; `scale` multiplies the leak magnitude.
  auto params_for = [base, leaks](std::size_t fault, double scale, const TruthSpec* t) {
    TwoTankParams p = base;
    const std::array<double, 3> dev{t ? detail::deviated(leaks[0], *t, 0) : leaks[0],
                                    t ? detail::deviated(leaks[1], *t, 1) : leaks[1],
                                    t ? detail::deviated(leaks[2], *t, 2) : leaks[2]};
    if (fault == 1) p.leak1 = scale * dev[0];
    if (fault == 2) p.leak12 = scale * dev[1];
    if (fault == 3) p.leak2 = scale * dev[2];
    return p;
  };

  std::vector<SystemModel> models;
  for (std::size_t f = 0; f < 4; ++f) models.push_back(make_two_tank_model(kLabels[f], params_for(f, 1.0, nullptr), Q, R, both));
  std::vector<SystemModel> extra;
  for (std::size_t f = 1; f < 4; ++f) {
    extra.push_back(make_two_tank_model(std::string("unmodeled_") + kLabels[f],
                                        params_for(f, unmodeled_fraction, nullptr), Q, R, both));
  }

  const double h_ref = param_or(cfg.params, "level_reference", 1.0);
  const double kp = param_or(cfg.params, "kp", 0.5);
  const double u_ss = base.c2 * std::sqrt(h_ref);
  ControlBox box = detail::bounds_or(cfg, ControlBox(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0)), 1);
  const Eigen::Index level_index = both ? 1 : 0;
  NominalPolicy policy = [=](int, const Vec& y) {
    return box.clamp(Vec::Constant(1, u_ss + kp * (h_ref - y[level_index])));
  };

  const double x0_std = param_or(cfg.params, "x0_std", 0.05);
  Scenario sc{"two_tank",
              HypothesisSet(models),
              extra,
              models[0],
              0,
              detail::to_vec(detail::vector_or(cfg.params, "x0", {h_ref, h_ref})),
              Mat::Identity(2, 2) * x0_std * x0_std,
              policy,
              box,
              detail::horizon_or(cfg, 100),
              3,
              {}};
  sc.realize = [params_for, Q, R, both, unmodeled_fraction](const TruthSpec& t) {
    const std::size_t fault = t.modeled ? t.index : t.index + 1;
    const double scale = t.modeled ? 1.0 : unmodeled_fraction;
    std::string label = t.modeled ? kLabels.at(fault) : std::string("unmodeled_") + kLabels.at(fault);
    return make_two_tank_model(std::move(label), params_for(fault, scale, &t), Q, R, both, t.disturbance);
  };
  return sc;
}

// ---------------------------------------------------------------------------
// Rigid-body satellite. State (σ, ω): MRP attitude and body rates. Control is body
// torque; a fault scales the torque on one principal axis.

struct SatelliteParams {
  Eigen::Vector3d inertia{1.0, 1.2, 1.5};
  Eigen::Vector3d torque_factor{1.0, 1.0, 1.0};
  Eigen::Vector3d disturbance{0.0, 0.0, 0.0};
  double dt = 0.1;
  int substeps = 2;
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

inline Vec satellite_field(const SatelliteParams& p, const Vec& x, const Vec& u) {
  const Eigen::Vector3d sigma = x.head<3>();
  const Eigen::Vector3d omega = x.tail<3>();
  const Eigen::Vector3d torque = p.torque_factor.cwiseProduct(u.head<3>()) + p.disturbance;
  const Eigen::Vector3d h = p.inertia.cwiseProduct(omega);
  const Eigen::Matrix3d B = (1.0 - sigma.squaredNorm()) * Eigen::Matrix3d::Identity() + 2.0 * skew(sigma) +
                            2.0 * sigma * sigma.transpose();
  Vec dx(6);
  dx.head<3>() = 0.25 * B * omega;
  dx.tail<3>() = (torque - omega.cross(h)).cwiseQuotient(p.inertia);
  return dx;
}

inline Mat satellite_field_jacobian(const SatelliteParams& p, const Vec& x, const Vec&) {
  const Eigen::Vector3d sigma = x.head<3>();
  const Eigen::Vector3d omega = x.tail<3>();
  const Eigen::Matrix3d I3 = Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d B = (1.0 - sigma.squaredNorm()) * I3 + 2.0 * skew(sigma) + 2.0 * sigma * sigma.transpose();
  Mat J = Mat::Zero(6, 6);
  J.block<3, 3>(0, 0) = 0.25 * (-2.0 * omega * sigma.transpose() - 2.0 * skew(omega) +
                                2.0 * sigma.dot(omega) * I3 + 2.0 * sigma * omega.transpose());
  J.block<3, 3>(0, 3) = 0.25 * B;
  const Eigen::Matrix3d Jm = p.inertia.asDiagonal();
  const Eigen::Matrix3d dgyro = -skew(omega) * Jm + skew(Jm * omega);
  J.block<3, 3>(3, 3) = p.inertia.cwiseInverse().asDiagonal() * dgyro;
  return J;
}

/// Picks whichever MRP representation of the measured attitude (σ or its shadow) is
/// closest to the prediction before differencing.
inline Vec mrp_residual(const Vec& y, const Vec& y_pred) {
  Vec e = y - y_pred;
  const Eigen::Vector3d s = y.head<3>();
  const double n2 = s.squaredNorm();
  if (n2 > 1e-12) {
    const Eigen::Vector3d alt = -s / n2;
    if ((alt - y_pred.head<3>()).squaredNorm() < e.head<3>().squaredNorm()) e.head<3>() = alt - y_pred.head<3>();
  }
  return e;
}

inline SystemModel make_satellite_model(std::string label, const SatelliteParams& p, const Mat& Q, const Mat& R) {
  if ((p.inertia.array() <= 0).any() || !(p.dt > 0) || p.substeps <= 0) {
    throw ConfigError("mars_satellite: inertia, dt and substeps must be positive");
  }
  if ((p.torque_factor.array() < 0).any()) throw ConfigError("mars_satellite: torque factors must be >= 0");
  auto field = [p](const Vec& x, const Vec& u) { return satellite_field(p, x, u); };
  auto jac = [p](const Vec& x, const Vec& u) { return satellite_field_jacobian(p, x, u); };

  ModelSpec s;
  s.label = std::move(label);
  s.nx = 6;
  s.nu = 3;
  s.ny = 6;
  s.dynamics = [=](const Vec& x, const Vec& u) {
    Vec next = rk4_integrate(field, x, u, p.dt, p.substeps);
    next.head<3>() = mrp_shadow(next.head<3>());
    return next;
  };
  s.linearized_dynamics = [=](const Vec& x, const Vec& u) {
    auto [next, phi] = rk4_integrate_linearized(field, jac, x, u, p.dt, p.substeps);
    const Eigen::Vector3d sigma = next.head<3>();
    if (sigma.squaredNorm() > 1.0) {
      phi.topRows<3>() = mrp_shadow_jacobian(sigma) * phi.topRows<3>();
      next.head<3>() = mrp_shadow(sigma);
    }
    return std::pair<Vec, Mat>{next, phi};
  };
  s.measurement = [](const Vec& x) -> Vec { return x; };
  s.measurement_jacobian = [](const Vec&) -> Mat { return Mat::Identity(6, 6); };
  s.residual = mrp_residual;
  s.process_cov = Q;
  s.measurement_cov = R;
  return SystemModel(std::move(s));
}

inline Scenario build_mars_satellite(const ScenarioConfig& cfg) {
  using detail::param_or;
  SatelliteParams base;
  const auto inertia = detail::vector_or(cfg.params, "inertia", {1.0, 1.2, 1.5});
  if (inertia.size() != 3) throw ConfigError("mars_satellite: inertia needs three entries");
  base.inertia = Eigen::Vector3d(inertia[0], inertia[1], inertia[2]);
  base.dt = cfg.dt > 0 ? cfg.dt : 0.1;
  base.substeps = cfg.rk4_substeps > 0 ? cfg.rk4_substeps : 2;

  const double factor = detail::nonneg_param(cfg.fault_params, "torque_factor", 0.5);
  const double unmodeled_factor = detail::nonneg_param(cfg.fault_params, "unmodeled_torque_factor", 0.75);
  if (factor >= 1.0) throw ConfigError("mars_satellite: torque_factor must be < 1");

  const double q_sigma = param_or(cfg.params, "process_std_sigma", 1e-4);
  const double q_omega = param_or(cfg.params, "process_std_omega", 1e-4);
  const double r_sigma = param_or(cfg.params, "measurement_std_sigma", 5e-3);
  const double r_omega = param_or(cfg.params, "measurement_std_omega", 5e-3);
  Vec qd(6), rd(6);
  qd << q_sigma, q_sigma, q_sigma, q_omega, q_omega, q_omega;
  rd << r_sigma, r_sigma, r_sigma, r_omega, r_omega, r_omega;
  const Mat Q = detail::diag_cov(qd, cfg.process_noise_scale);
  const Mat R = detail::diag_cov(rd, cfg.noise_scale);

  auto params_for = [base](std::size_t axis_plus_one, double f, const TruthSpec* t) {
    SatelliteParams p = base;
    if (axis_plus_one > 0) p.torque_factor[static_cast<Eigen::Index>(axis_plus_one - 1)] = f;
    if (t) {
      for (Eigen::Index i = 0; i < 3; ++i) p.torque_factor[i] = detail::deviated(p.torque_factor[i], *t, i);
      if (t->disturbance.size() == 3) p.disturbance = t->disturbance;
    }
    return p;
  };

  std::vector<SystemModel> models;
  for (std::size_t a = 0; a < 4; ++a) models.push_back(make_satellite_model(std::to_string(a), params_for(a, factor, nullptr), Q, R));
  std::vector<SystemModel> extra;
  for (std::size_t a = 1; a < 4; ++a) {
    extra.push_back(make_satellite_model("unmodeled_" + std::to_string(a), params_for(a, unmodeled_factor, nullptr), Q, R));
  }

  const double torque_max = param_or(cfg.params, "torque_max", 0.1);
  ControlBox box = detail::bounds_or(cfg, ControlBox(Vec::Constant(3, -torque_max), Vec::Constant(3, torque_max)), 3);

  // MRP/rate PD tracking of a slow single-axis sinusoidal slew.
  const double kp = param_or(cfg.params, "kp", 0.2);
  const double kd = param_or(cfg.params, "kd", 0.6);
  const double amp = param_or(cfg.params, "reference_amplitude", 0.005);
  const double period = param_or(cfg.params, "reference_period", 20.0);
  const double dt = base.dt;
  NominalPolicy policy = [=](int k, const Vec& y) {
    const double w = 2.0 * std::numbers::pi / period;
    const double t = k * dt;
    Eigen::Vector3d sigma_ref(amp * std::sin(w * t), 0.0, 0.0);
    Eigen::Vector3d omega_ref(4.0 * amp * w * std::cos(w * t), 0.0, 0.0);
    const Vec e = mrp_residual(y, (Vec(6) << sigma_ref, omega_ref).finished());
    const Vec u = -kp * e.head<3>() - kd * e.tail<3>();
    return box.clamp(u);
  };

  const auto x0 = detail::vector_or(cfg.params, "x0", {0.02, -0.02, 0.02, 0.0, 0.0, 0.0});
  if (x0.size() != 6) throw ConfigError("mars_satellite: x0 needs six entries");
  Vec x0_std(6);
  const double s0 = param_or(cfg.params, "x0_std_sigma", 0.01);
  const double w0 = param_or(cfg.params, "x0_std_omega", 0.002);
  x0_std << s0, s0, s0, w0, w0, w0;

  Scenario sc{"mars_satellite",
              HypothesisSet(models),
              extra,
              models[0],
              0,
              detail::to_vec(x0),
              detail::diag_cov(x0_std, 1.0),
              policy,
              box,
              detail::horizon_or(cfg, 80),
              3,
              {}};
  sc.realize = [params_for, factor, unmodeled_factor, Q, R](const TruthSpec& t) {
    const std::size_t axis = t.modeled ? t.index : t.index + 1;
    const double f = t.modeled ? factor : unmodeled_factor;
    std::string label = t.modeled ? std::to_string(axis) : "unmodeled_" + std::to_string(axis);
    return make_satellite_model(std::move(label), params_for(axis, f, &t), Q, R);
  };
  return sc;
}

// ---------------------------------------------------------------------------

inline Scenario build_scenario(const std::string& name, const ScenarioConfig& cfg) {
  if (!(cfg.noise_scale > 0.0) || !(cfg.process_noise_scale > 0.0)) throw ConfigError("noise scales must be positive");
  if (name == "two_tank") return build_two_tank(cfg);
  if (name == "mars_satellite") return build_mars_satellite(cfg);
  if (name == "example1") return build_example1(cfg);
  if (name == "custom") return build_custom_linear(cfg);
  throw ConfigError("unknown scenario '" + name + "'");
}

inline Scenario build_scenario(const ScenarioConfig& cfg) { return build_scenario(cfg.scenario, cfg); }

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    c.scenario = j.value("scenario", c.scenario);
    c.horizon = j.value("horizon", c.horizon);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.process_noise_scale = j.value("process_noise_scale", c.process_noise_scale);
    c.pi_star = j.value("pi_star", c.pi_star);
    c.dt = j.value("dt", c.dt);
    c.rk4_substeps = j.value("rk4_substeps", c.rk4_substeps);
    if (j.contains("fault_params")) c.fault_params = j.at("fault_params");
    if (j.contains("params")) c.params = j.at("params");
    if (j.contains("control_bounds")) {
      const auto& b = j.at("control_bounds");
      c.control_bounds = ControlBox(detail::to_vec(b.at("lower").get<std::vector<double>>()),
                                    detail::to_vec(b.at("upper").get<std::vector<double>>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
  if (!(c.pi_star >= 0.0 && c.pi_star <= 1.0)) throw ConfigError("scenario config: pi_star must lie in [0, 1]");
  return c;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

}  // namespace fid
