#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include <tvcbf/cbf.hpp>
#include <tvcbf/core.hpp>
#include <tvcbf/dynamics.hpp>
#include <tvcbf/scalar_field.hpp>

namespace tvcbf {

/// A parameterized diffeomorphism family D(.;p) with optional analytic
/// Jacobians, an input isomorphism (identity unless set), and the parameter
/// domain. `equivariance_box` is the subset of `param_set` on which the
/// defining identity f(D(x;p), D_u(u;p)) = J_x(x;p) f(x,u) actually holds;
/// verification samples are drawn from it. For plain translations the two
/// boxes coincide, but e.g. the position+velocity translation of a
/// double integrator is only equivariant on its zero-velocity-shift slice
/// (shifting velocities perturbs the position derivative; the rate
/// conditions absorb that term, so transforms over the full box stay sound).
struct DiffeoFamily {
  std::string name = "diffeo";
  int state_dim = 0;
  int param_dim = 0;
  std::function<Vector(const Vector&, const Vector&)> apply;      // (x, p) -> y
  std::function<Vector(const Vector&, const Vector&)> inverse;    // optional
  std::function<Matrix(const Vector&, const Vector&)> jac_x;      // optional analytic
  std::function<Matrix(const Vector&, const Vector&)> jac_p;      // optional analytic
  std::function<Vector(const Vector&, const Vector&)> input_iso;  // optional; identity
  std::function<Box(const Box&, const Vector&)> transform_box;    // optional; pushforward of a state box
  Box param_set;
  Box equivariance_box;  // defaults to param_set when left empty
  std::optional<double> lipschitz_p;

  void validate_args(const Vector& x, const Vector& p) const {
    if (x.size() != state_dim) throw std::invalid_argument("DiffeoFamily '" + name + "': bad state dimension");
    if (p.size() != param_dim) throw std::invalid_argument("DiffeoFamily '" + name + "': bad parameter dimension");
    if (!all_finite(x) || !all_finite(p)) throw std::invalid_argument("DiffeoFamily '" + name + "': non-finite argument");
  }

  Vector map(const Vector& x, const Vector& p) const {
    validate_args(x, p);
    return apply(x, p);
  }

  Vector map_input(const Vector& u, const Vector& p) const {
    return input_iso ? input_iso(u, p) : u;
  }

  const Box& verification_params() const {
    return equivariance_box.dim() > 0 ? equivariance_box : param_set;
  }
};

/// Analytic Jacobians when supplied, central differences (step 1e-6)
/// otherwise. Returns (J_x: n x n, J_p: n x k).
inline std::pair<Matrix, Matrix> jacobians(const DiffeoFamily& D, const Vector& x, const Vector& p,
                                           double h = 1e-6) {
  D.validate_args(x, p);
  Matrix Jx, Jp;
  if (D.jac_x) {
    Jx = D.jac_x(x, p);
  } else {
    Jx.resize(D.state_dim, D.state_dim);
    Vector xp = x;
    for (int i = 0; i < D.state_dim; ++i) {
      const double xi = x[i];
      xp[i] = xi + h;
      const Vector fwd = D.apply(xp, p);
      xp[i] = xi - h;
      const Vector bwd = D.apply(xp, p);
      xp[i] = xi;
      Jx.col(i) = (fwd - bwd) / (2.0 * h);
    }
  }
  if (D.jac_p) {
    Jp = D.jac_p(x, p);
  } else {
    Jp.resize(D.state_dim, D.param_dim);
    Vector pp = p;
    for (int i = 0; i < D.param_dim; ++i) {
      const double pi = p[i];
      pp[i] = pi + h;
      const Vector fwd = D.apply(x, pp);
      pp[i] = pi - h;
      const Vector bwd = D.apply(x, pp);
      pp[i] = pi;
      Jp.col(i) = (fwd - bwd) / (2.0 * h);
    }
  }
  return {Jx, Jp};
}

struct EquivarianceReport {
  bool pass = false;
  double max_residual = 0.0;
  double tolerance = 0.0;
  bool inverse_roundtrip_ok = true;
  bool input_iso_contained = true;
  Vector worst_x, worst_u, worst_p;
  int samples = 0;
  std::string message;
};

/// Samples (x, u, p) triples and measures the defining-identity residual
/// |f(D(x;p), D_u(u;p)) - J_x(x;p) f(x,u)|; also spot-checks the inverse
/// round trip and that the input isomorphism maps the input box into
/// itself. Tolerance 1e-9 with analytic J_x, 1e-5 with differenced ones.
inline EquivarianceReport verify_equivariance(const DynamicsModel& dyn, const DiffeoFamily& D,
                                              int n_samples = 200, unsigned seed = kDefaultSeed,
                                              Box state_box = {}) {
  if (n_samples < 1) throw std::invalid_argument("verify_equivariance: need at least 1 sample");
  if (dyn.state_dim != D.state_dim) throw std::invalid_argument("verify_equivariance: dynamics/diffeo dimension mismatch");
  if (state_box.dim() == 0) state_box = Box::centered(dyn.state_dim, 2.0);
  Rng rng(seed);
  EquivarianceReport rep;
  rep.tolerance = D.jac_x ? 1e-9 : 1e-5;
  rep.samples = n_samples;
  for (int i = 0; i < n_samples; ++i) {
    const Vector x = state_box.sample(rng);
    const Vector u = dyn.input_box.sample(rng);
    const Vector p = D.verification_params().sample(rng);
    const Vector y = D.map(x, p);
    const Vector v = D.map_input(u, p);
    if (!dyn.input_box.contains(v, 1e-12)) rep.input_iso_contained = false;
    const Matrix Jx = jacobians(D, x, p).first;
    const double residual = (dyn.rhs(y, v) - Jx * dyn.rhs(x, u)).norm();
    if (residual > rep.max_residual) {
      rep.max_residual = residual;
      rep.worst_x = x;
      rep.worst_u = u;
      rep.worst_p = p;
    }
    if (D.inverse && (D.inverse(y, p) - x).norm() > 1e-9) rep.inverse_roundtrip_ok = false;
  }
  rep.pass = rep.max_residual <= rep.tolerance && rep.inverse_roundtrip_ok && rep.input_iso_contained;
  rep.message = rep.pass                   ? "defining identity holds at all samples"
                : !rep.inverse_roundtrip_ok ? "inverse round trip failed"
                : !rep.input_iso_contained  ? "input isomorphism leaves the input box"
                                            : "defining identity violated";
  return rep;
}

/// Largest sampled operator norm of J_p over the state box and parameter
/// set, inflated by 1.05; returns the family's declared constant when set.
inline double resolve_lipschitz_p(const DiffeoFamily& D, const Box& state_box,
                                  int n_samples = 2000, unsigned seed = kDefaultSeed) {
  if (D.lipschitz_p) return *D.lipschitz_p;
  if (state_box.dim() != D.state_dim) throw std::invalid_argument("resolve_lipschitz_p: state box dimension mismatch");
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vector x = state_box.sample(rng);
    const Vector p = D.param_set.sample(rng);
    const Matrix Jp = jacobians(D, x, p).second;
    worst = std::max(worst, Eigen::JacobiSVD<Matrix>(Jp).singularValues()(0));
  }
  return 1.05 * worst;
}

/// The transformed barrier x -> b(D(x;p)) with the pullback gradient
/// J_x' grad b(D(x;p)); same alpha and capacity. The verification box and
/// region follow the transform (via transform_box when the family provides
/// the pushforward, unchanged otherwise).
inline ShiftableCbf transform_cbf(const ShiftableCbf& b, const DiffeoFamily& D, const Vector& p) {
  b.validate();
  if (b.field.dim != D.state_dim) throw std::invalid_argument("transform_cbf: field/diffeo dimension mismatch");
  if (p.size() != D.param_dim || !all_finite(p)) throw std::invalid_argument("transform_cbf: bad parameter");
  if (!D.param_set.contains(p, 1e-12)) throw std::invalid_argument("transform_cbf: parameter outside the family's parameter set");

  ShiftableCbf out;
  out.alpha = b.alpha;
  out.capacity = b.capacity;
  out.name = b.name + "_shifted";
  out.field.name = b.field.name + "_shifted";
  out.field.dim = b.field.dim;
  const ScalarField base = b.field;
  out.field.eval = [base, D, p](const Vector& x) { return base.eval(D.map(x, p)); };
  if (base.gradient) {
    out.field.gradient = [base, D, p](const Vector& x) {
      const Vector y = D.map(x, p);
      return (jacobians(D, x, p).first.transpose() * base.gradient(y)).eval();
    };
  }
  if (base.nondifferentiable_at) {
    out.field.nondifferentiable_at = [base, D, p](const Vector& x) {
      return base.nondifferentiable_at(D.map(x, p));
    };
  }
  out.domain_box = D.transform_box ? D.transform_box(b.domain_box, p) : b.domain_box;
  if (b.region) {
    const auto region = b.region;
    out.region = [region, D, p](const Vector& x) { return region(D.map(x, p)); };
  }
  return out;
}

namespace diffeos {

/// Full-state translation D(x;p) = x - p.
inline DiffeoFamily translate_full(int n, double param_max = 10.0) {
  if (n < 1) throw std::invalid_argument("translate_full: dimension must be >= 1");
  DiffeoFamily D;
  D.name = "translate_full";
  D.state_dim = n;
  D.param_dim = n;
  D.apply = [](const Vector& x, const Vector& p) { return (x - p).eval(); };
  D.inverse = [](const Vector& y, const Vector& p) { return (y + p).eval(); };
  D.jac_x = [n](const Vector&, const Vector&) { return Matrix::Identity(n, n).eval(); };
  D.jac_p = [n](const Vector&, const Vector&) { return (-Matrix::Identity(n, n)).eval(); };
  D.transform_box = [](const Box& box, const Vector& p) { return Box(box.lo + p, box.hi + p); };
  D.param_set = Box::centered(n, param_max);
  D.equivariance_box = D.param_set;
  D.lipschitz_p = 1.0;
  return D;
}

/// Planar-position translation for pose states (x, y, psi); the heading is
/// untouched, so heading-dependent dynamics stay equivariant.
inline DiffeoFamily translate_pose_xy(double param_max = 20.0) {
  DiffeoFamily D;
  D.name = "translate_pose_xy";
  D.state_dim = 3;
  D.param_dim = 2;
  D.apply = [](const Vector& x, const Vector& p) {
    Vector y = x;
    y.head(2) -= p;
    return y;
  };
  D.inverse = [](const Vector& y, const Vector& p) {
    Vector x = y;
    x.head(2) += p;
    return x;
  };
  D.jac_x = [](const Vector&, const Vector&) { return Matrix::Identity(3, 3).eval(); };
  D.jac_p = [](const Vector&, const Vector&) {
    Matrix J = Matrix::Zero(3, 2);
    J.topRows(2) = -Matrix::Identity(2, 2);
    return J;
  };
  D.transform_box = [](const Box& box, const Vector& p) {
    Vector lo = box.lo, hi = box.hi;
    lo.head(2) += p;
    hi.head(2) += p;
    return Box(lo, hi);
  };
  D.param_set = Box::centered(2, param_max);
  D.equivariance_box = D.param_set;
  D.lipschitz_p = 1.0;
  return D;
}

/// Position+velocity translation for double-integrator states
/// (q, qdot) -> (q - p, qdot - pdot), parameter (p, pdot). Only the
/// pdot = 0 slice is an equivariance in the defining-identity sense, so
/// that slice is the verification box; transforms use the full set.
inline DiffeoFamily translate_di(int n = 2, double pos_max = 10.0, double vel_max = 1.0) {
  if (n < 1) throw std::invalid_argument("translate_di: dimension must be >= 1");
  DiffeoFamily D;
  D.name = "translate_di";
  D.state_dim = 2 * n;
  D.param_dim = 2 * n;
  D.apply = [](const Vector& x, const Vector& p) { return (x - p).eval(); };
  D.inverse = [](const Vector& y, const Vector& p) { return (y + p).eval(); };
  D.jac_x = [n](const Vector&, const Vector&) { return Matrix::Identity(2 * n, 2 * n).eval(); };
  D.jac_p = [n](const Vector&, const Vector&) { return (-Matrix::Identity(2 * n, 2 * n)).eval(); };
  D.transform_box = [](const Box& box, const Vector& p) { return Box(box.lo + p, box.hi + p); };
  Vector lo(2 * n), hi(2 * n);
  lo.head(n).setConstant(-pos_max);
  hi.head(n).setConstant(pos_max);
  lo.tail(n).setConstant(-vel_max);
  hi.tail(n).setConstant(vel_max);
  D.param_set = Box(lo, hi);
  Vector elo = lo, ehi = hi;
  elo.tail(n).setZero();
  ehi.tail(n).setZero();
  D.equivariance_box = Box(elo, ehi);
  D.lipschitz_p = 1.0;
  return D;
}

/// Uniform state scaling D(x;s) = s*x. Deliberately not an equivariance of
/// any shipped model with bounded inputs; exists to exercise the verifier's
/// failure path.
inline DiffeoFamily scale_test(int n = 3, double s_min = 0.5, double s_max = 2.0) {
  if (!(0.0 < s_min && s_min <= s_max)) throw std::invalid_argument("scale_test: need 0 < s_min <= s_max");
  DiffeoFamily D;
  D.name = "scale_test";
  D.state_dim = n;
  D.param_dim = 1;
  D.apply = [](const Vector& x, const Vector& p) { return (p[0] * x).eval(); };
  D.inverse = [](const Vector& y, const Vector& p) { return (y / p[0]).eval(); };
  D.jac_x = [n](const Vector&, const Vector& p) { return (p[0] * Matrix::Identity(n, n)).eval(); };
  D.jac_p = [](const Vector& x, const Vector&) { return Matrix(x); };
  Vector lo(1), hi(1);
  lo << s_min;
  hi << s_max;
  D.param_set = Box(lo, hi);
  D.equivariance_box = D.param_set;
  return D;
}

}  // namespace diffeos

/// Builds a family from a JSON spec, e.g.
///   {"name": "translate_full", "dim": 2, "param_max": 10}
///   {"name": "translate_di", "dim": 2, "pos_max": 10, "vel_max": 1}
inline DiffeoFamily make_diffeo(const nlohmann::json& spec) {
  const auto name = spec.at("name").get<std::string>();
  if (name == "translate_full")
    return diffeos::translate_full(spec.value("dim", 2), spec.value("param_max", 10.0));
  if (name == "translate_pose_xy") return diffeos::translate_pose_xy(spec.value("param_max", 20.0));
  if (name == "translate_di")
    return diffeos::translate_di(spec.value("dim", 2), spec.value("pos_max", 10.0),
                                 spec.value("vel_max", 1.0));
  if (name == "scale_test")
    return diffeos::scale_test(spec.value("dim", 3), spec.value("s_min", 0.5),
                               spec.value("s_max", 2.0));
  throw std::invalid_argument("make_diffeo: unknown family '" + name + "'");
}

}  // namespace tvcbf
