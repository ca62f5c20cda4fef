#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <tvcbf/comparison.hpp>
#include <tvcbf/core.hpp>
#include <tvcbf/dynamics.hpp>
#include <tvcbf/scalar_field.hpp>

namespace tvcbf {

/// A barrier that stays a barrier under shifts of its zero level by up to
/// `capacity`: the decrease condition must hold on all of
/// C_Lambda = {x : b(x) >= -capacity}, optionally intersected with `region`
/// for barriers that are only locally valid.
struct ShiftableCbf {
  ScalarField field;
  ExtendedKeFn alpha = ExtendedKeFn::sigmoid(1.0, 8.0);
  double capacity = 0.0;
  Box domain_box;
  std::function<bool(const Vector&)> region;  // empty: no extra restriction
  std::string name = "cbf";

  void validate() const {
    if (!(capacity > 0.0)) throw std::invalid_argument("ShiftableCbf '" + name + "': capacity must be > 0");
    if (domain_box.dim() != field.dim) throw std::invalid_argument("ShiftableCbf '" + name + "': domain box dimension mismatch");
  }

  bool in_region(const Vector& x) const {
    return field(x) >= -capacity && (!region || region(x));
  }
};

/// How the sup over the input set is approximated when the dynamics carry no
/// affine structure. For affine dynamics with box inputs the sup of an
/// affine-in-u function is attained at a box vertex, so vertex enumeration
/// is exact and is the automatic choice.
struct InputProbe {
  enum class Mode { automatic, box_vertices, uniform };
  Mode mode = Mode::automatic;
  int n_samples = 512;
  unsigned seed = kDefaultSeed;
};

/// Candidate inputs realizing (or approximating) the sup over the input box.
inline std::vector<Vector> probe_inputs(const DynamicsModel& dyn, const InputProbe& probe) {
  const bool use_vertices =
      probe.mode == InputProbe::Mode::box_vertices ||
      (probe.mode == InputProbe::Mode::automatic && dyn.affine.has_value() && dyn.input_dim <= 20);
  if (use_vertices) return dyn.input_box.vertices();
  if (probe.n_samples < 1) throw std::invalid_argument("probe_inputs: empty input sample set");
  Rng rng(probe.seed);
  std::vector<Vector> samples;
  samples.reserve(static_cast<std::size_t>(probe.n_samples));
  for (int i = 0; i < probe.n_samples; ++i) samples.push_back(dyn.input_box.sample(rng));
  return samples;
}

/// sup_u db(x; f(x,u)) + alpha(b(x)); the barrier decrease condition holds
/// at x iff this is >= 0. States on the nondifferentiable locus are nudged
/// off it first (deterministically, given probe.seed).
inline double cbf_condition_margin(const ShiftableCbf& b, const DynamicsModel& dyn, Vector x,
                                   const InputProbe& probe = {}) {
  b.validate();
  if (dyn.state_dim != b.field.dim) throw std::invalid_argument("cbf_condition_margin: dynamics/field dimension mismatch");
  if (!b.domain_box.contains(x, 1e-9)) throw std::invalid_argument("cbf_condition_margin: state outside domain box");
  if (!b.field.differentiable_at(x)) {
    Rng rng(probe.seed ^ 0x9e3779b97f4a7c15ull);
    x = perturb_off_locus(b.field, x, rng);
  }
  const auto inputs = probe_inputs(dyn, probe);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& u : inputs) best = std::max(best, dini_directional(b.field, x, dyn.rhs(x, u)));
  return best + b.alpha(b.field(x));
}

struct ShiftableReport {
  bool pass = false;
  double worst_margin = std::numeric_limits<double>::quiet_NaN();
  Vector worst_state;
  int samples_accepted = 0;
  std::string message;
};

/// Samples domain_box, keeps the states inside C_Lambda (and `region` if
/// set), and checks the decrease condition at each. Pass tolerance -1e-6
/// absorbs difference-quotient noise at nondifferentiable states.
inline ShiftableReport verify_shiftable(const ShiftableCbf& b, const DynamicsModel& dyn,
                                        int n_samples = 10000, unsigned seed = kDefaultSeed,
                                        const InputProbe& probe = {}) {
  b.validate();
  if (n_samples < 1) throw std::invalid_argument("verify_shiftable: need at least 1 sample");
  Rng rng(seed);
  ShiftableReport report;
  report.worst_margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_samples; ++i) {
    const Vector x = b.domain_box.sample(rng);
    if (!b.in_region(x)) continue;
    const double margin = cbf_condition_margin(b, dyn, x, probe);
    ++report.samples_accepted;
    if (margin < report.worst_margin) {
      report.worst_margin = margin;
      report.worst_state = x;
    }
  }
  if (report.samples_accepted == 0) {
    report.pass = false;
    report.worst_margin = std::numeric_limits<double>::quiet_NaN();
    report.message = "no samples in C_Lambda";
    return report;
  }
  report.pass = report.worst_margin >= -1e-6;
  report.message = report.pass ? "decrease condition holds at all accepted samples"
                               : "decrease condition violated";
  return report;
}

}  // namespace tvcbf
