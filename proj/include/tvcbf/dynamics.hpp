#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include <tvcbf/core.hpp>

namespace tvcbf {

/// Control-affine right-hand side f(x, u) = g0(x) + G(x) u with box-bounded
/// inputs. Filters exploit this structure for exact vertex enumeration.
struct AffineInputDynamics {
  std::function<Vector(const Vector&)> g0;
  std::function<Matrix(const Vector&)> G;
  Box input_box;
};

/// A named dynamics model. `affine` is present only when f is genuinely
/// affine in the input; consumers must fall back to sampling otherwise.
struct DynamicsModel {
  std::string name;
  int state_dim = 0;
  int input_dim = 0;
  Box input_box;
  std::function<Vector(const Vector&, const Vector&)> f;
  std::optional<AffineInputDynamics> affine;

  Vector rhs(const Vector& x, const Vector& u) const {
    if (x.size() != state_dim) throw std::invalid_argument("DynamicsModel '" + name + "': bad state dimension");
    if (u.size() != input_dim) throw std::invalid_argument("DynamicsModel '" + name + "': bad input dimension");
    if (!all_finite(x) || !all_finite(u)) throw std::invalid_argument("DynamicsModel '" + name + "': non-finite argument");
    return f(x, u);
  }
};

namespace dynamics {

/// xdot = u on R^n.
inline DynamicsModel single_integrator(int n, Box input_box = {}) {
  if (n < 1) throw std::invalid_argument("single_integrator: dimension must be >= 1");
  if (input_box.dim() == 0) input_box = Box::centered(n, 1.0);
  if (input_box.dim() != n) throw std::invalid_argument("single_integrator: input box dimension mismatch");
  DynamicsModel m;
  m.name = "single_integrator";
  m.state_dim = n;
  m.input_dim = n;
  m.input_box = input_box;
  m.f = [](const Vector& /*x*/, const Vector& u) { return u; };
  m.affine = AffineInputDynamics{
      [n](const Vector&) { return Vector::Zero(n).eval(); },
      [n](const Vector&) { return Matrix::Identity(n, n).eval(); },
      input_box};
  return m;
}

/// State (q, qdot) in R^{2n}, qddot = u.
inline DynamicsModel double_integrator(int n, Box input_box = {}) {
  if (n < 1) throw std::invalid_argument("double_integrator: dimension must be >= 1");
  if (input_box.dim() == 0) input_box = Box::centered(n, 7.5);
  if (input_box.dim() != n) throw std::invalid_argument("double_integrator: input box dimension mismatch");
  DynamicsModel m;
  m.name = "double_integrator";
  m.state_dim = 2 * n;
  m.input_dim = n;
  m.input_box = input_box;
  m.f = [n](const Vector& x, const Vector& u) {
    Vector dx(2 * n);
    dx.head(n) = x.tail(n);
    dx.tail(n) = u;
    return dx;
  };
  m.affine = AffineInputDynamics{
      [n](const Vector& x) {
        Vector g(2 * n);
        g.head(n) = x.tail(n);
        g.tail(n).setZero();
        return g;
      },
      [n](const Vector&) {
        Matrix G = Matrix::Zero(2 * n, n);
        G.bottomRows(n).setIdentity();
        return G;
      },
      input_box};
  return m;
}

/// State (x, y, psi); inputs (v, omega) with v in [1, 2] (no stopping) and
/// omega in [-0.9, 0.9].
inline DynamicsModel unicycle(Box input_box = {}) {
  if (input_box.dim() == 0) {
    Vector lo(2), hi(2);
    lo << 1.0, -0.9;
    hi << 2.0, 0.9;
    input_box = Box(lo, hi);
  }
  if (input_box.dim() != 2) throw std::invalid_argument("unicycle: input box must be 2-dimensional");
  DynamicsModel m;
  m.name = "unicycle";
  m.state_dim = 3;
  m.input_dim = 2;
  m.input_box = input_box;
  m.f = [](const Vector& x, const Vector& u) {
    Vector dx(3);
    dx << u[0] * std::cos(x[2]), u[0] * std::sin(x[2]), u[1];
    return dx;
  };
  m.affine = AffineInputDynamics{
      [](const Vector&) { return Vector::Zero(3).eval(); },
      [](const Vector& x) {
        Matrix G(3, 2);
        G << std::cos(x[2]), 0.0, std::sin(x[2]), 0.0, 0.0, 1.0;
        return G;
      },
      input_box};
  return m;
}

/// Kinematic bicycle with sideslip beta(zeta) = arctan(lr_ratio * tan(zeta)).
/// State (x, y, psi); inputs (v, zeta). Not affine in the input, so no
/// AffineInputDynamics view is exposed.
inline DynamicsModel bicycle(double wheelbase = 1.0, double lr_ratio = 0.5,
                             double steer_limit = 20.0 * M_PI / 180.0, Box input_box = {}) {
  if (!(wheelbase > 0.0)) throw std::invalid_argument("bicycle: wheelbase must be > 0");
  if (!(lr_ratio > 0.0 && lr_ratio < 1.0)) throw std::invalid_argument("bicycle: lr_ratio must be in (0,1)");
  if (!(steer_limit > 0.0 && steer_limit < M_PI / 2.0)) throw std::invalid_argument("bicycle: steer limit must be in (0, pi/2)");
  if (input_box.dim() == 0) {
    Vector lo(2), hi(2);
    lo << 1.0, -steer_limit;
    hi << 2.0, steer_limit;
    input_box = Box(lo, hi);
  }
  if (input_box.dim() != 2) throw std::invalid_argument("bicycle: input box must be 2-dimensional");
  DynamicsModel m;
  m.name = "bicycle";
  m.state_dim = 3;
  m.input_dim = 2;
  m.input_box = input_box;
  m.f = [wheelbase, lr_ratio](const Vector& x, const Vector& u) {
    const double beta = std::atan(lr_ratio * std::tan(u[1]));
    Vector dx(3);
    dx << u[0] * std::cos(x[2] + beta), u[0] * std::sin(x[2] + beta),
        u[0] * std::cos(beta) * std::tan(u[1]) / wheelbase;
    return dx;
  };
  return m;
}

}  // namespace dynamics

/// Builds a model from a JSON spec, e.g.
///   {"name": "double_integrator", "dim": 2}
///   {"name": "bicycle", "steer_limit_deg": 45}
/// An optional "input_box" {"lo": [...], "hi": [...]} overrides the default.
inline DynamicsModel make_dynamics(const nlohmann::json& spec) {
  const auto name = spec.at("name").get<std::string>();
  Box box;
  if (spec.contains("input_box")) box = spec.at("input_box").get<Box>();
  if (name == "single_integrator") return dynamics::single_integrator(spec.value("dim", 2), box);
  if (name == "double_integrator") return dynamics::double_integrator(spec.value("dim", 2), box);
  if (name == "unicycle") return dynamics::unicycle(box);
  if (name == "bicycle") {
    const double limit = spec.value("steer_limit_deg", 20.0) * M_PI / 180.0;
    return dynamics::bicycle(spec.value("wheelbase", 1.0), spec.value("lr_ratio", 0.5), limit, box);
  }
  throw std::invalid_argument("make_dynamics: unknown model '" + name + "'");
}

}  // namespace tvcbf
