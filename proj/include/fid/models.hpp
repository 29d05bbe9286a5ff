#pragma once

// Fault-parameterized system models x_{k+1} = F_h(x_k, u_k) + w_k, y_k = G(x_k) + v_k,
// and the finite hypothesis set built from them.

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fid/core.hpp"

namespace fid {

using DynamicsFn = std::function<Vec(const Vec& x, const Vec& u)>;
using MeasurementFn = std::function<Vec(const Vec& x)>;
using DynamicsJacobianFn = std::function<Mat(const Vec& x, const Vec& u)>;
using MeasurementJacobianFn = std::function<Mat(const Vec& x)>;
/// Value and state Jacobian of the dynamics in one pass.
using LinearizedDynamicsFn = std::function<std::pair<Vec, Mat>(const Vec& x, const Vec& u)>;
/// Innovation y - ŷ; overridable for measurements living on a manifold.
using ResidualFn = std::function<Vec(const Vec& y, const Vec& y_pred)>;

struct ModelSpec {
  std::string label;
  Eigen::Index nx = 0;
  Eigen::Index nu = 0;
  Eigen::Index ny = 0;
  DynamicsFn dynamics;
  MeasurementFn measurement;
  Mat process_cov;
  Mat measurement_cov;
  // Optional analytic overrides. Central finite differences are used otherwise.
  DynamicsJacobianFn dynamics_jacobian;
  LinearizedDynamicsFn linearized_dynamics;
  MeasurementJacobianFn measurement_jacobian;
  ResidualFn residual;
};

/// Central-difference Jacobian with per-coordinate step 1e-6 * max(1, |x_i|).
template <typename F>
Mat finite_difference_jacobian(F&& f, const Vec& x) {
  const Vec f0 = f(x);
  Mat jac(f0.size(), x.size());
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const Vec fp = f(xp);
    xp[i] = x[i] - h;
    const Vec fm = f(xp);
    xp[i] = x[i];
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

class SystemModel {
 public:
  explicit SystemModel(ModelSpec spec) : spec_(std::move(spec)) {
    if (spec_.nx <= 0 || spec_.nu < 0 || spec_.ny <= 0) {
      throw ConfigError("model '" + spec_.label + "': invalid dimensions");
    }
    if (!spec_.dynamics || !spec_.measurement) {
      throw ConfigError("model '" + spec_.label + "': dynamics and measurement are required");
    }
    if (spec_.process_cov.rows() != spec_.nx || !is_spd(spec_.process_cov)) {
      throw ConfigError("model '" + spec_.label + "': Q must be symmetric positive definite");
    }
    if (spec_.measurement_cov.rows() != spec_.ny || !is_spd(spec_.measurement_cov)) {
      throw ConfigError("model '" + spec_.label + "': R must be symmetric positive definite");
    }
    q_chol_ = cholesky_lower(spec_.process_cov, "Q");
    r_chol_ = cholesky_lower(spec_.measurement_cov, "R");
  }

  const std::string& label() const { return spec_.label; }
  Eigen::Index nx() const { return spec_.nx; }
  Eigen::Index nu() const { return spec_.nu; }
  Eigen::Index ny() const { return spec_.ny; }
  const Mat& process_cov() const { return spec_.process_cov; }
  const Mat& measurement_cov() const { return spec_.measurement_cov; }
  const Mat& process_chol() const { return q_chol_; }
  const Mat& measurement_chol() const { return r_chol_; }
  const ModelSpec& spec() const { return spec_; }

  bool has_analytic_dynamics_jacobian() const {
    return static_cast<bool>(spec_.dynamics_jacobian) || static_cast<bool>(spec_.linearized_dynamics);
  }

  /// Deterministic part F_h(x, u).
  Vec dynamics(const Vec& x, const Vec& u) const {
    require_dim(x, nx(), "state");
    require_dim(u, nu(), "control");
    Vec out = spec_.dynamics(x, u);
    if (out.size() != nx() || !out.allFinite()) {
      throw ModelEvaluationError("model '" + label() + "': dynamics produced non-finite output");
    }
    return out;
  }

  /// Deterministic part G(x).
  Vec measurement(const Vec& x) const {
    require_dim(x, nx(), "state");
    Vec out = spec_.measurement(x);
    if (out.size() != ny() || !out.allFinite()) {
      throw ModelEvaluationError("model '" + label() + "': measurement produced non-finite output");
    }
    return out;
  }

  Mat dynamics_jacobian(const Vec& x, const Vec& u) const {
    return propagate_linearized(x, u).second;
  }

  /// F_h(x, u) together with ∂F_h/∂x at (x, u).
  std::pair<Vec, Mat> propagate_linearized(const Vec& x, const Vec& u) const {
    require_dim(x, nx(), "state");
    require_dim(u, nu(), "control");
    std::pair<Vec, Mat> out;
    if (spec_.linearized_dynamics) {
      out = spec_.linearized_dynamics(x, u);
    } else {
      out.first = spec_.dynamics(x, u);
      out.second = spec_.dynamics_jacobian
                       ? spec_.dynamics_jacobian(x, u)
                       : finite_difference_jacobian([&](const Vec& z) { return spec_.dynamics(z, u); }, x);
    }
    if (out.first.size() != nx() || !out.first.allFinite()) {
      throw ModelEvaluationError("model '" + label() + "': dynamics produced non-finite output");
    }
    if (out.second.rows() != nx() || out.second.cols() != nx() || !out.second.allFinite()) {
      throw LinearizationError("model '" + label() + "': non-finite dynamics Jacobian");
    }
    return out;
  }

  Mat measurement_jacobian(const Vec& x) const {
    require_dim(x, nx(), "state");
    Mat jac = spec_.measurement_jacobian
                  ? spec_.measurement_jacobian(x)
                  : finite_difference_jacobian([&](const Vec& z) { return spec_.measurement(z); }, x);
    if (jac.rows() != ny() || jac.cols() != nx() || !jac.allFinite()) {
      throw LinearizationError("model '" + label() + "': non-finite measurement Jacobian");
    }
    return jac;
  }

  Vec residual(const Vec& y, const Vec& y_pred) const {
    return spec_.residual ? spec_.residual(y, y_pred) : Vec(y - y_pred);
  }

  /// Same model with replaced noise covariances (noise-level sweeps, test overrides).
  SystemModel with_noise(Mat process_cov, Mat measurement_cov) const {
    ModelSpec s = spec_;
    s.process_cov = std::move(process_cov);
    s.measurement_cov = std::move(measurement_cov);
    return SystemModel(std::move(s));
  }

  SystemModel with_label(std::string label) const {
    ModelSpec s = spec_;
    s.label = std::move(label);
    return SystemModel(std::move(s));
  }

 private:
  ModelSpec spec_;
  Mat q_chol_;
  Mat r_chol_;
};

enum class Noise { sampled, zero };

/// x_{k+1} = F_h(x, u) + w, w ~ N(0, Q). Noise::zero drops w.
inline Vec step_dynamics(const SystemModel& model, const Vec& x, const Vec& u, Rng& rng,
                         Noise noise = Noise::sampled) {
  Vec next = model.dynamics(x, u);
  if (noise == Noise::sampled) next += model.process_chol() * standard_normal(model.nx(), rng);
  return next;
}

/// y = G(x) + v, v ~ N(0, R). Noise::zero drops v.
inline Vec measure(const SystemModel& model, const Vec& x, Rng& rng, Noise noise = Noise::sampled) {
  Vec y = model.measurement(x);
  if (noise == Noise::sampled) y += model.measurement_chol() * standard_normal(model.ny(), rng);
  return y;
}

struct Linearization {
  Mat phi;  ///< ∂F/∂x at (x, u)
  Mat H;    ///< ∂G/∂x at the predicted state F(x, u)
};

inline Linearization linearize(const SystemModel& model, const Vec& x, const Vec& u) {
  auto [pred, phi] = model.propagate_linearized(x, u);
  return {std::move(phi), model.measurement_jacobian(pred)};
}

/// Linear-Gaussian model x' = A x + B u, y = C x with analytic Jacobians.
inline SystemModel linear_model(std::string label, const Mat& A, const Mat& B, const Mat& C, const Mat& Q,
                                const Mat& R) {
  if (A.rows() != A.cols() || B.rows() != A.rows() || C.cols() != A.rows()) {
    throw DimensionError("linear_model: inconsistent A/B/C shapes");
  }
  ModelSpec s;
  s.label = std::move(label);
  s.nx = A.rows();
  s.nu = B.cols();
  s.ny = C.rows();
  s.dynamics = [A, B](const Vec& x, const Vec& u) -> Vec { return A * x + B * u; };
  s.measurement = [C](const Vec& x) -> Vec { return C * x; };
  s.dynamics_jacobian = [A](const Vec&, const Vec&) -> Mat { return A; };
  s.measurement_jacobian = [C](const Vec&) -> Mat { return C; };
  s.process_cov = Q;
  s.measurement_cov = R;
  return SystemModel(std::move(s));
}

/// One fixed-step RK4 integration of xdot = f(x, u) over dt split into substeps.
template <typename F>
Vec rk4_integrate(F&& f, const Vec& x, const Vec& u, double dt, int substeps) {
  const double h = dt / substeps;
  Vec z = x;
  for (int s = 0; s < substeps; ++s) {
    const Vec k1 = f(z, u);
    const Vec k2 = f(z + 0.5 * h * k1, u);
    const Vec k3 = f(z + 0.5 * h * k2, u);
    const Vec k4 = f(z + h * k3, u);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return z;
}

/// RK4 plus its exact state Jacobian, obtained by pushing the tangent map through
/// every stage. `dfdx(x, u)` is the Jacobian of the continuous-time field.
template <typename F, typename DF>
std::pair<Vec, Mat> rk4_integrate_linearized(F&& f, DF&& dfdx, const Vec& x, const Vec& u, double dt,
                                             int substeps) {
  const double h = dt / substeps;
  const Eigen::Index n = x.size();
  const Mat eye = Mat::Identity(n, n);
  Vec z = x;
  Mat jac = eye;
  for (int s = 0; s < substeps; ++s) {
    const Vec k1 = f(z, u);
    const Mat d1 = dfdx(z, u);
    const Vec z2 = z + 0.5 * h * k1;
    const Vec k2 = f(z2, u);
    const Mat d2 = dfdx(z2, u) * (eye + 0.5 * h * d1);
    const Vec z3 = z + 0.5 * h * k2;
    const Vec k3 = f(z3, u);
    const Mat d3 = dfdx(z3, u) * (eye + 0.5 * h * d2);
    const Vec z4 = z + h * k3;
    const Vec k4 = f(z4, u);
    const Mat d4 = dfdx(z4, u) * (eye + h * d3);
    z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    jac = (eye + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)) * jac;
  }
  return {z, jac};
}

/// MRP shadow-set switch: -σ/(σᵀσ) when |σ| > 1, σ otherwise.
inline Eigen::Vector3d mrp_shadow(const Eigen::Vector3d& sigma) {
  const double n2 = sigma.squaredNorm();
  if (n2 > 1.0) return -sigma / n2;
  return sigma;
}

/// Jacobian of the shadow map at σ (identity inside the unit ball).
inline Eigen::Matrix3d mrp_shadow_jacobian(const Eigen::Vector3d& sigma) {
  const double n2 = sigma.squaredNorm();
  if (n2 <= 1.0) return Eigen::Matrix3d::Identity();
  return (2.0 * sigma * sigma.transpose() - n2 * Eigen::Matrix3d::Identity()) / (n2 * n2);
}

/// A fixed pseudo-random probe set used to confirm hypotheses have distinct dynamics.
struct ProbePoint {
  Vec x;
  Vec u;
};

inline std::vector<ProbePoint> default_probe_grid(Eigen::Index nx, Eigen::Index nu, int count = 64) {
  Rng rng(0x5eedULL);
  std::uniform_real_distribution<double> dist(-1.0, 2.0);
  std::vector<ProbePoint> probes;
  probes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    ProbePoint p{Vec(nx), Vec(nu)};
    for (Eigen::Index j = 0; j < nx; ++j) p.x[j] = dist(rng);
    for (Eigen::Index j = 0; j < nu; ++j) p.u[j] = dist(rng);
    probes.push_back(std::move(p));
  }
  return probes;
}

/// True if F_a and F_b differ at some probe point.
inline bool dynamics_differ(const SystemModel& a, const SystemModel& b, std::span<const ProbePoint> probes) {
  for (const auto& p : probes) {
    Vec fa, fb;
    try {
      fa = a.dynamics(p.x, p.u);
      fb = b.dynamics(p.x, p.u);
    } catch (const ModelEvaluationError&) {
      continue;
    }
    const double scale = 1.0 + std::max(fa.cwiseAbs().maxCoeff(), fb.cwiseAbs().maxCoeff());
    if ((fa - fb).cwiseAbs().maxCoeff() > 1e-12 * scale) return true;
  }
  return false;
}

/// Ordered, label-unique set of modeled hypotheses M.
class HypothesisSet {
 public:
  enum class Check { distinct, none };

  explicit HypothesisSet(std::vector<SystemModel> models, Check check = Check::distinct,
                         std::optional<std::vector<ProbePoint>> probes = std::nullopt)
      : models_(std::move(models)) {
    if (models_.size() < 2) throw ConfigError("hypothesis set needs at least two models");
    std::unordered_set<std::string> labels;
    for (const auto& m : models_) {
      if (!labels.insert(m.label()).second) throw ConfigError("duplicate hypothesis label '" + m.label() + "'");
      if (m.nx() != models_[0].nx() || m.nu() != models_[0].nu() || m.ny() != models_[0].ny()) {
        throw DimensionError("hypotheses must share state/control/measurement dimensions");
      }
    }
    if (check == Check::distinct) {
      const auto grid = probes ? std::move(*probes) : default_probe_grid(nx(), nu());
      for (std::size_t i = 0; i < models_.size(); ++i) {
        for (std::size_t j = i + 1; j < models_.size(); ++j) {
          if (!dynamics_differ(models_[i], models_[j], grid)) {
            throw ConfigError("hypotheses '" + models_[i].label() + "' and '" + models_[j].label() +
                              "' have indistinguishable dynamics on the probe grid");
          }
        }
      }
    }
  }

  std::size_t size() const { return models_.size(); }
  const SystemModel& operator[](std::size_t i) const { return models_.at(i); }
  auto begin() const { return models_.begin(); }
  auto end() const { return models_.end(); }
  Eigen::Index nx() const { return models_[0].nx(); }
  Eigen::Index nu() const { return models_[0].nu(); }
  Eigen::Index ny() const { return models_[0].ny(); }

  std::optional<std::size_t> index_of(const std::string& label) const {
    for (std::size_t i = 0; i < models_.size(); ++i) {
      if (models_[i].label() == label) return i;
    }
    return std::nullopt;
  }

 private:
  std::vector<SystemModel> models_;
};

}  // namespace fid
