#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include <tvcbf/core.hpp>

namespace tvcbf {

/// A scalar function of the state with an optional analytic gradient and an
/// optional predicate marking states where the function is not differentiable.
/// Barrier functions built from norms are Lipschitz but have such a locus
/// (e.g. the origin for -|x|); derivative-based code must route around it.
struct ScalarField {
  int dim = 0;
  std::function<double(const Vector&)> eval;
  std::function<Vector(const Vector&)> gradient;            // empty: numeric fallback
  std::function<bool(const Vector&)> nondifferentiable_at;  // empty: smooth everywhere
  std::string name = "field";

  double operator()(const Vector& x) const {
    if (!eval) throw std::logic_error("ScalarField: eval not set");
    if (x.size() != dim) throw std::invalid_argument("ScalarField '" + name + "': expected dim " + std::to_string(dim) + ", got " + std::to_string(x.size()));
    if (!all_finite(x)) throw std::invalid_argument("ScalarField '" + name + "': non-finite state");
    return eval(x);
  }

  bool has_gradient() const { return static_cast<bool>(gradient); }

  bool differentiable_at(const Vector& x) const {
    return !nondifferentiable_at || !nondifferentiable_at(x);
  }
};

/// Central-difference gradient. Only meaningful away from the
/// nondifferentiable locus; callers are expected to perturb off it first.
inline Vector numeric_gradient(const ScalarField& phi, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  Vector xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = phi(xp);
    xp[i] = xi - h;
    const double fm = phi(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Gradient of phi at x, analytic when available, numeric otherwise.
inline Vector field_gradient(const ScalarField& phi, const Vector& x) {
  if (phi.has_gradient()) return phi.gradient(x);
  return numeric_gradient(phi, x);
}

/// Nudges x off the nondifferentiable locus of phi by a deterministic
/// pseudo-random step of size `step`. The result is indistinguishable from x
/// for any tolerance coarser than the step but admits a classical gradient.
inline Vector perturb_off_locus(const ScalarField& phi, const Vector& x, Rng& rng,
                                double step = 1e-9) {
  if (phi.differentiable_at(x)) return x;
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector y = x;
  for (int attempt = 0; attempt < 32; ++attempt) {
    Vector dir(x.size());
    for (int i = 0; i < x.size(); ++i) dir[i] = gauss(rng);
    const double n = dir.norm();
    if (n < 1e-300) continue;
    y = x + (step / n) * dir;
    if (phi.differentiable_at(y)) return y;
    step *= 2.0;
  }
  throw std::runtime_error("ScalarField '" + phi.name + "': could not leave nondifferentiable locus near a state");
}

/// Lower directional Dini derivative of phi at x along v.
///
/// At differentiable states with an analytic gradient this is the plain
/// inner product. Otherwise it is estimated as the minimum forward
/// difference quotient over a fixed shrinking step schedule; taking the
/// minimum biases toward the lower derivative, which is the conservative
/// side for barrier conditions.
inline double dini_directional(const ScalarField& phi, const Vector& x, const Vector& v) {
  if (v.size() != x.size()) throw std::invalid_argument("dini_directional: direction dim mismatch");
  if (!all_finite(v)) throw std::invalid_argument("dini_directional: non-finite direction");
  if (phi.has_gradient() && phi.differentiable_at(x)) {
    return phi.gradient(x).dot(v);
  }
  constexpr double kEps[] = {1e-4, 1e-5, 1e-6, 1e-7};
  const double f0 = phi(x);
  double best = std::numeric_limits<double>::infinity();
  for (const double eps : kEps) {
    const double q = (phi(x + eps * v) - f0) / eps;
    best = std::min(best, q);
  }
  return best;
}

}  // namespace tvcbf
