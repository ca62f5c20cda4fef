#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <tvcbf/core.hpp>
#include <tvcbf/scalar_field.hpp>

namespace tvcbf {

/// Sampling region for Lipschitz estimation: an axis-aligned box, optionally
/// restricted to the epsilon-neighborhood of a level set
/// {x : |m(x) + lambda| <= epsilon} (boundary mode) and an arbitrary accept
/// predicate. `membership` defaults to the field being estimated.
struct LipschitzRegion {
  Box box;
  std::optional<double> boundary_lambda;
  double boundary_epsilon = 0.0;
  std::optional<ScalarField> membership;
  std::function<bool(const Vector&)> accept;

  static LipschitzRegion global(Box b) {
    LipschitzRegion r;
    r.box = std::move(b);
    return r;
  }

  static LipschitzRegion boundary(Box b, double lambda, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("LipschitzRegion: epsilon must be > 0");
    LipschitzRegion r;
    r.box = std::move(b);
    r.boundary_lambda = lambda;
    r.boundary_epsilon = epsilon;
    return r;
  }
};

struct LipschitzEstimate {
  double value = 0.0;    // raw_max inflated by the 1.05 safety factor
  double raw_max = 0.0;  // largest sampled gradient norm
  std::string mode;      // "global" or "boundary"
  int samples_used = 0;
};

/// Largest gradient norm over accepted samples, inflated by 1.05 because
/// sampling can only underestimate a supremum. Nondifferentiable samples are
/// nudged off the locus before the gradient is taken.
inline LipschitzEstimate estimate_lipschitz(const ScalarField& phi, const LipschitzRegion& region,
                                            int n_samples = 20000, unsigned seed = kDefaultSeed) {
  if (n_samples < 2) throw std::invalid_argument("estimate_lipschitz: need at least 2 samples");
  if (region.box.dim() != phi.dim) throw std::invalid_argument("estimate_lipschitz: region box dimension mismatch");
  const ScalarField& membership = region.membership ? *region.membership : phi;
  if (membership.dim != phi.dim) throw std::invalid_argument("estimate_lipschitz: membership field dimension mismatch");

  Rng rng(seed);
  LipschitzEstimate est;
  est.mode = region.boundary_lambda ? "boundary" : "global";
  for (int i = 0; i < n_samples; ++i) {
    Vector x = region.box.sample(rng);
    if (region.boundary_lambda &&
        std::abs(membership(x) + *region.boundary_lambda) > region.boundary_epsilon)
      continue;
    if (region.accept && !region.accept(x)) continue;
    if (!phi.differentiable_at(x)) x = perturb_off_locus(phi, x, rng);
    est.raw_max = std::max(est.raw_max, field_gradient(phi, x).norm());
    ++est.samples_used;
  }
  if (est.samples_used < 2)
    throw std::runtime_error("estimate_lipschitz: fewer than 2 samples accepted in region");
  est.value = 1.05 * est.raw_max;
  return est;
}

}  // namespace tvcbf
