#pragma once

// Built-in barrier fields addressable by name in configs:
//   neg_norm     b(x) = -|x|, keep-in ball via shifted copies
//   backstep_di  b(x, xdot) = -x_hat' xdot + alpha_inner(-|x|), the
//                backstepped keep-in barrier for acceleration-controlled
//                agents; valid near the constraint boundary only
//   vel_cap      b(q, qdot) = cap - |qdot|
//   disk_dist    b(x) = |pos - c| - r, keep-out disk on the first two
//                state coordinates

#include <cmath>
#include <stdexcept>
#include <string>

#include <tvcbf/comparison.hpp>
#include <tvcbf/core.hpp>
#include <tvcbf/scalar_field.hpp>

namespace tvcbf::fields {

constexpr double kLocusRadius = 1e-12;

inline ScalarField neg_norm(int dim) {
  if (dim < 1) throw std::invalid_argument("neg_norm: dimension must be >= 1");
  ScalarField f;
  f.name = "neg_norm";
  f.dim = dim;
  f.eval = [](const Vector& x) { return -x.norm(); };
  f.gradient = [](const Vector& x) { return (-x / x.norm()).eval(); };
  f.nondifferentiable_at = [](const Vector& x) { return x.norm() < kLocusRadius; };
  return f;
}

/// State layout (q, qdot) with q in R^n. The field is discontinuous at q = 0;
/// all verification is meant to run on an annulus around the constraint
/// radius intersected with the velocity ball (see backstep_di_region).
inline ScalarField backstep_di(int n = 2, ExtendedKeFn alpha_inner = ExtendedKeFn::sigmoid(1.0, 8.0)) {
  if (n < 1) throw std::invalid_argument("backstep_di: dimension must be >= 1");
  ScalarField f;
  f.name = "backstep_di";
  f.dim = 2 * n;
  f.eval = [n, alpha_inner](const Vector& x) {
    const Vector q = x.head(n);
    const Vector v = x.tail(n);
    const double r = q.norm();
    if (r < kLocusRadius) throw std::domain_error("backstep_di: undefined at the position origin");
    return -q.dot(v) / r + alpha_inner(-r);
  };
  f.gradient = [n, alpha_inner](const Vector& x) {
    const Vector q = x.head(n);
    const Vector v = x.tail(n);
    const double r = q.norm();
    const Vector q_hat = q / r;
    Vector g(2 * n);
    g.head(n) = -(v - q_hat.dot(v) * q_hat) / r - alpha_inner.derivative(-r) * q_hat;
    g.tail(n) = -q_hat;
    return g;
  };
  f.nondifferentiable_at = [n](const Vector& x) { return x.head(n).norm() < kLocusRadius; };
  return f;
}

/// Membership predicate for the region where backstep_di is a valid barrier:
/// position norm within `band` of `r` and velocity inside the `vel_limit`
/// ball (the latter enforced jointly by the vel_cap barrier).
inline std::function<bool(const Vector&)> backstep_di_region(int n = 2, double r = 0.4,
                                                             double band = 0.1,
                                                             double vel_limit = 1.0) {
  return [n, r, band, vel_limit](const Vector& x) {
    const double pr = x.head(n).norm();
    return std::abs(pr - r) <= band && x.tail(n).norm() <= vel_limit;
  };
}

/// State layout (q, qdot); b = cap - |qdot|.
inline ScalarField vel_cap(int n = 2, double cap = 1.0) {
  if (n < 1) throw std::invalid_argument("vel_cap: dimension must be >= 1");
  if (!(cap > 0.0)) throw std::invalid_argument("vel_cap: cap must be > 0");
  ScalarField f;
  f.name = "vel_cap";
  f.dim = 2 * n;
  f.eval = [n, cap](const Vector& x) { return cap - x.tail(n).norm(); };
  f.gradient = [n](const Vector& x) {
    const Vector v = x.tail(n);
    Vector g = Vector::Zero(2 * n);
    g.tail(n) = -v / v.norm();
    return g;
  };
  f.nondifferentiable_at = [n](const Vector& x) { return x.tail(n).norm() < kLocusRadius; };
  return f;
}

/// Signed distance to a keep-out disk, measured on the first two state
/// coordinates so the same field serves planar integrators and pose models.
inline ScalarField disk_dist(int state_dim, const Eigen::Vector2d& center, double radius) {
  if (state_dim < 2) throw std::invalid_argument("disk_dist: state dimension must be >= 2");
  if (radius < 0.0) throw std::invalid_argument("disk_dist: radius must be >= 0");
  ScalarField f;
  f.name = "disk_dist";
  f.dim = state_dim;
  f.eval = [center, radius](const Vector& x) { return (x.head<2>() - center).norm() - radius; };
  f.gradient = [state_dim, center](const Vector& x) {
    const Eigen::Vector2d d = x.head<2>() - center;
    Vector g = Vector::Zero(state_dim);
    g.head<2>() = d / d.norm();
    return g;
  };
  f.nondifferentiable_at = [center](const Vector& x) {
    return (x.head<2>() - center).norm() < kLocusRadius;
  };
  return f;
}

/// Builds a field from a JSON spec, e.g.
///   {"name": "neg_norm", "dim": 2}
///   {"name": "backstep_di", "dim": 2, "alpha_inner": {"kind": "sigmoid", "c1": 1, "c2": 8}}
///   {"name": "vel_cap", "dim": 2, "cap": 1.0}
///   {"name": "disk_dist", "state_dim": 2, "center": [0, 0], "radius": 6.0}
inline ScalarField make_field(const nlohmann::json& spec) {
  const auto name = spec.at("name").get<std::string>();
  if (name == "neg_norm") return neg_norm(spec.value("dim", 2));
  if (name == "backstep_di") {
    ExtendedKeFn alpha = ExtendedKeFn::sigmoid(1.0, 8.0);
    if (spec.contains("alpha_inner")) alpha = spec.at("alpha_inner").get<ExtendedKeFn>();
    return backstep_di(spec.value("dim", 2), alpha);
  }
  if (name == "vel_cap") return vel_cap(spec.value("dim", 2), spec.value("cap", 1.0));
  if (name == "disk_dist") {
    const auto c = spec.at("center").get<std::vector<double>>();
    if (c.size() != 2) throw std::invalid_argument("disk_dist: center must have 2 entries");
    return disk_dist(spec.value("state_dim", 2), Eigen::Vector2d(c[0], c[1]),
                     spec.at("radius").get<double>());
  }
  throw std::invalid_argument("make_field: unknown field '" + name + "'");
}

}  // namespace tvcbf::fields
