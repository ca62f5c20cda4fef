#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <tvcbf/cbf.hpp>
#include <tvcbf/comparison.hpp>
#include <tvcbf/equivariance.hpp>
#include <tvcbf/trajectory.hpp>

namespace tvcbf {

/// Outcome of a parameter-rate certificate check. Margins live on the rate
/// scale: how much slack the path speed has below its admissible bound at
/// the worst time. With that convention the zero-rate-offset reduction of
/// the jump-aware check reproduces the constant-offset check exactly.
struct RateReport {
  bool pass = false;
  double worst_margin = std::numeric_limits<double>::infinity();
  double worst_t = 0.0;
  double tolerance = 1e-12;
  int times_checked = 0;
  int jumps_skipped = 0;
  std::string check;
  std::string message;
};

namespace detail {

inline void require_rate_inputs(const ExtendedKeFn& alpha_p, double ell_b, double ell_D) {
  if (!(ell_b > 0.0) || !std::isfinite(ell_b)) throw std::invalid_argument("rate check: ell_b must be positive");
  if (!(ell_D > 0.0) || !std::isfinite(ell_D)) throw std::invalid_argument("rate check: ell_D must be positive");
  (void)alpha_p;
}

}  // namespace detail

/// Certificate for a constant offset lambda: the path speed ||dp(t;1)|| may
/// not exceed alpha_p(lambda) / (ell_b * ell_D) anywhere. Checked on the
/// supplied grid joined with the path's own knots (the right-hand slope at
/// each knot covers the whole segment for piecewise-linear paths).
inline RateReport check_rate_thm1(const ParamTrajectory& p, double lambda,
                                  const ExtendedKeFn& alpha_p, double ell_b, double ell_D,
                                  const std::vector<double>& time_grid) {
  detail::require_rate_inputs(alpha_p, ell_b, ell_D);
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("check_rate_thm1: lambda must be finite and >= 0");
  const double bound = alpha_p(lambda) / (ell_b * ell_D);

  RateReport r;
  r.check = "check_rate_thm1";
  const auto times = merge_times({time_grid, p.knot_times()});
  if (times.empty()) throw std::invalid_argument("check_rate_thm1: empty time grid");
  for (const double t : times) {
    const double margin = bound - p.rate(t).norm();
    ++r.times_checked;
    if (margin < r.worst_margin) {
      r.worst_margin = margin;
      r.worst_t = t;
    }
  }
  r.pass = r.worst_margin >= -r.tolerance;
  r.message = r.pass ? "path speed within bound " + std::to_string(bound)
                     : "path speed exceeds bound " + std::to_string(bound) + " at t=" +
                           std::to_string(r.worst_t);
  return r;
}

/// Certificate for a time-varying offset: at every non-jump time,
/// ell_b * ell_D * ||dp(t;1)|| - dlambda(t;1) <= alpha_p(lambda(t)).
/// Upward jumps only help and are skipped; the offset's structural
/// admissibility is checked first and violations surface as errors naming
/// the time. Margins are reported on the rate scale,
/// (alpha_p(lambda) + dlambda) / (ell_b * ell_D) - ||dp||.
inline RateReport check_rate_thm2(const ParamTrajectory& p, const OffsetTrajectory& offset,
                                  const ExtendedKeFn& alpha_p, double ell_b, double ell_D,
                                  const std::vector<double>& time_grid) {
  detail::require_rate_inputs(alpha_p, ell_b, ell_D);
  offset.validate_structure();

  RateReport r;
  r.check = "check_rate_thm2";
  const auto times = merge_times({time_grid, p.knot_times(), offset.knot_times(), offset.jump_times()});
  if (times.empty()) throw std::invalid_argument("check_rate_thm2: empty time grid");
  for (const double t : times) {
    if (offset.is_jump(t)) {
      ++r.jumps_skipped;
      continue;
    }
    const double lam = offset.value(t);
    if (!(lam >= -1e-12))
      throw std::invalid_argument("check_rate_thm2: offset is negative at t=" + std::to_string(t));
    const double margin = (alpha_p(std::max(lam, 0.0)) + offset.rate(t)) / (ell_b * ell_D) - p.rate(t).norm();
    ++r.times_checked;
    if (margin < r.worst_margin) {
      r.worst_margin = margin;
      r.worst_t = t;
    }
  }
  r.pass = r.worst_margin >= -r.tolerance;
  r.message = r.pass ? "path and offset rates compatible"
                     : "rate condition violated at t=" + std::to_string(r.worst_t);
  return r;
}

/// Admissible-rate margin at a single time, on the rate scale:
/// (alpha_p(lambda(t)) + dlambda(t;1)) / (ell_b * ell_D). Positive means the
/// path may still move at that speed; querying a jump time is an error since
/// the one-sided rates disagree there.
inline double p_margin(const ExtendedKeFn& alpha_p, const OffsetTrajectory& offset,
                       double ell_b, double ell_D, double t) {
  detail::require_rate_inputs(alpha_p, ell_b, ell_D);
  if (offset.is_jump(t))
    throw std::domain_error("p_margin: t=" + std::to_string(t) + " is a jump time of the offset");
  return (alpha_p(offset.value(t)) + offset.rate(t)) / (ell_b * ell_D);
}

/// Monotone reparameterization tau (new time -> original time) that caps the
/// composite path speed at `bound`, plus the rescaled path p(tau(.)).
struct TimeRescaling {
  std::vector<std::pair<double, double>> tau;  // (new time, original time) samples
  ParamTrajectory p_rescaled;
};

/// Slows a path down just enough that ||d(p o tau)/dt|| <= bound, by
/// integrating dtau/dt = min(1, bound / max(||dp(tau)||, 1e-12)) from
/// tau(0) = 0. Piecewise-linear paths get the exact closed form (the slope
/// is constant per segment, so tau is itself piecewise linear and the knot
/// values are preserved verbatim); analytic paths are integrated on the
/// grid, and the rescaled rate applies the exact slowdown factor at the
/// mapped time so the cap holds regardless of tabulation error.
inline TimeRescaling rescale_time(const ParamTrajectory& p, double bound,
                                  const std::vector<double>& time_grid) {
  if (!(bound > 0.0) || !std::isfinite(bound)) throw std::invalid_argument("rescale_time: bound must be positive");
  const auto slowdown = [&p, bound](double original_t) {
    return std::min(1.0, bound / std::max(p.rate(original_t).norm(), 1e-12));
  };

  if (p.kind() == ParamTrajectory::Kind::piecewise_linear) {
    const auto& knots = p.knots();
    TimeRescaling out{{}, p};
    std::vector<std::pair<double, Vector>> new_knots;
    new_knots.reserve(knots.size());
    // The path is constant before its first knot, so tau is the identity
    // there and the first knot keeps its time.
    double T = knots.front().first;
    if (T > 0.0) out.tau.emplace_back(0.0, 0.0);
    out.tau.emplace_back(T, knots.front().first);
    new_knots.emplace_back(T, knots.front().second);
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      const double dt = knots[i + 1].first - knots[i].first;
      T += dt / slowdown(knots[i].first);
      out.tau.emplace_back(T, knots[i + 1].first);
      new_knots.emplace_back(T, knots[i + 1].second);
    }
    out.p_rescaled = ParamTrajectory::piecewise_linear(std::move(new_knots));
    return out;
  }

  // Analytic path: RK4 on the supplied grid in the new time variable.
  auto grid = time_grid;
  std::sort(grid.begin(), grid.end());
  if (grid.size() < 2) throw std::invalid_argument("rescale_time: analytic paths need a grid of >= 2 times");
  TimeRescaling out{{}, p};
  std::vector<std::pair<double, double>> table;
  double tau = 0.0;
  table.emplace_back(grid.front(), tau);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double h = grid[i + 1] - grid[i];
    const double k1 = slowdown(tau);
    const double k2 = slowdown(tau + 0.5 * h * k1);
    const double k3 = slowdown(tau + 0.5 * h * k2);
    const double k4 = slowdown(tau + h * k3);
    tau += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    table.emplace_back(grid[i + 1], tau);
  }
  out.tau = table;
  const auto tau_at = [table](double T) {
    if (T <= table.front().first) return table.front().second;
    if (T >= table.back().first) return table.back().second;
    auto it = std::upper_bound(table.begin(), table.end(), T,
                               [](double v, const auto& e) { return v < e.first; });
    const auto& [T1, tau1] = *it;
    const auto& [T0, tau0] = *(it - 1);
    const double s = (T - T0) / (T1 - T0);
    return (1.0 - s) * tau0 + s * tau1;
  };
  // The rescaled rate applies the exact slowdown factor at the mapped time,
  // so the cap holds even where the tau table only approximates the flow.
  const ParamTrajectory base = p;
  out.p_rescaled = ParamTrajectory::analytic(
      p.dim(), [tau_at, base](double T) { return base.value(tau_at(T)); },
      [tau_at, base, bound](double T) {
        const double u = tau_at(T);
        const double s = std::min(1.0, bound / std::max(base.rate(u).norm(), 1e-12));
        return Vector(s * base.rate(u));
      });
  return out;
}

/// Time-varying barrier B(t, x) = b(D(x; p(t))) + lambda(t) assembled from a
/// shiftable barrier, a diffeomorphism family, a parameter path, and an
/// offset. `certificate` records the most recent rate-check outcome;
/// `certified` mirrors its pass flag and gates the claims a simulation is
/// allowed to make.
struct TimeVaryingCbf {
  ShiftableCbf base;
  DiffeoFamily family;
  ParamTrajectory p_traj = ParamTrajectory::constant(Vector::Zero(1));
  OffsetTrajectory offset = OffsetTrajectory::constant(0.0);
  ExtendedKeFn alpha_p = ExtendedKeFn::sigmoid(1.0, 8.0);
  bool certified = false;
  std::optional<RateReport> certificate;
  std::string name = "tv_cbf";

  /// Dimension wiring and offset admissibility. Analytic offsets are sampled
  /// over [0, horizon]; tabulated ones are checked exactly at their knots.
  void validate(double horizon = 0.0) const {
    base.validate();
    if (family.state_dim != base.field.dim)
      throw std::invalid_argument(name + ": family state dimension does not match the barrier");
    if (p_traj.dim() != family.param_dim)
      throw std::invalid_argument(name + ": parameter path dimension does not match the family");
    // Piecewise-linear paths live in the convex param box iff their knots do.
    if (p_traj.kind() == ParamTrajectory::Kind::piecewise_linear && family.param_set.dim() > 0)
      for (const auto& [t, v] : p_traj.knots())
        if (!family.param_set.contains(v, 1e-12))
          throw std::invalid_argument(name + ": path leaves the family's parameter set at t=" +
                                      std::to_string(t));
    offset.validate_structure();
    std::vector<double> grid;
    if (offset.kind() == OffsetTrajectory::Kind::analytic && horizon > 0.0)
      grid = uniform_grid(0.0, horizon, 1001);
    offset.validate_range(0.0, base.capacity, grid);
  }

  double eval(double t, const Vector& x) const {
    if (t < 0.0) throw std::invalid_argument(name + ": time must be >= 0");
    return base.field(family.map(x, p_traj.value(t))) + offset.value(t);
  }

  Vector gradient(double t, const Vector& x) const {
    if (t < 0.0) throw std::invalid_argument(name + ": time must be >= 0");
    const Vector p = p_traj.value(t);
    const Matrix Jx = family.jac_x ? family.jac_x(x, p) : jacobians(family, x, p).first;
    return Jx.transpose() * field_gradient(base.field, family.map(x, p));
  }

  /// Frozen-time slice as a plain shiftable barrier (offset not included;
  /// callers add offset.value(t) where the full composite is needed).
  ShiftableCbf at_time(double t) const {
    if (t < 0.0) throw std::invalid_argument(name + ": time must be >= 0");
    return transform_cbf(base, family, p_traj.value(t));
  }

  /// Whether the barrier's validity region covers x at time t. Barriers
  /// without a region restriction are active everywhere.
  bool active(double t, const Vector& x) const {
    if (!base.region) return true;
    return base.region(family.map(x, p_traj.value(t)));
  }
};

/// Exact composite evaluation of the time-varying barrier.
inline double eval_B(const TimeVaryingCbf& B, double t, const Vector& x) { return B.eval(t, x); }

/// Runs the applicable rate certificate (constant-offset form when the
/// offset is constant, jump-aware form otherwise), stores it on the barrier,
/// and flips `certified` accordingly.
inline RateReport certify(TimeVaryingCbf& B, double ell_b, double ell_D,
                          const std::vector<double>& time_grid) {
  RateReport r = (B.offset.kind() == OffsetTrajectory::Kind::constant)
                     ? check_rate_thm1(B.p_traj, B.offset.value(0.0), B.alpha_p, ell_b, ell_D, time_grid)
                     : check_rate_thm2(B.p_traj, B.offset, B.alpha_p, ell_b, ell_D, time_grid);
  B.certificate = r;
  B.certified = r.pass;
  return r;
}

/// Time-varying keep-out constraint h(t, x) = hbar(D(x; q(t))) + gamma(t)
/// that a barrier under-approximates.
struct TvConstraint {
  ScalarField hbar;
  DiffeoFamily family;
  ParamTrajectory q_traj = ParamTrajectory::constant(Vector::Zero(1));
  OffsetTrajectory gamma = OffsetTrajectory::constant(0.0);
  std::string name = "constraint";

  double eval(double t, const Vector& x) const {
    if (t < 0.0) throw std::invalid_argument(name + ": time must be >= 0");
    return hbar(family.map(x, q_traj.value(t))) + gamma.value(t);
  }
};

struct UnderapproxReport {
  bool pass = false;
  double worst_state_gap = std::numeric_limits<double>::infinity();  // min over samples of hbar - b
  Vector worst_state;
  double worst_offset_gap = std::numeric_limits<double>::infinity();  // min over times of gamma - lambda
  double worst_t = 0.0;
  int states_checked = 0;
  int times_checked = 0;
  std::string message;
};

/// Checks that the barrier under-approximates the constraint in the
/// decomposed sense: b <= hbar pointwise on sampled states, and
/// lambda <= gamma pointwise on the merged time grid (knots plus a uniform
/// refinement of their hull). Both parts use one-sided tolerances.
inline UnderapproxReport check_underapprox(const ShiftableCbf& b, const TvConstraint& constraint,
                                           const OffsetTrajectory& offset,
                                           const std::vector<Vector>& state_samples) {
  if (constraint.hbar.dim != b.field.dim)
    throw std::invalid_argument("check_underapprox: state dimension mismatch");
  UnderapproxReport r;
  r.worst_state = Vector::Zero(b.field.dim);

  for (const Vector& x : state_samples) {
    const double gap = constraint.hbar(x) - b.field(x);
    ++r.states_checked;
    if (gap < r.worst_state_gap) {
      r.worst_state_gap = gap;
      r.worst_state = x;
    }
  }

  auto times = merge_times({offset.knot_times(), offset.jump_times(), constraint.gamma.knot_times(),
                            constraint.gamma.jump_times()});
  double t_lo = 0.0, t_hi = 1.0;
  if (!times.empty()) {
    t_lo = std::min(0.0, times.front());
    t_hi = std::max(t_lo + 1.0, times.back());
  }
  times = merge_times({times, uniform_grid(t_lo, t_hi, 1001)});
  for (const double t : times) {
    const double gap = constraint.gamma.value(t) - offset.value(t);
    ++r.times_checked;
    if (gap < r.worst_offset_gap) {
      r.worst_offset_gap = gap;
      r.worst_t = t;
    }
  }

  const bool states_ok = r.states_checked == 0 || r.worst_state_gap >= -1e-9;
  const bool times_ok = r.worst_offset_gap >= -1e-12;
  r.pass = states_ok && times_ok;
  if (!states_ok)
    r.message = "barrier exceeds the constraint field by " + std::to_string(-r.worst_state_gap);
  else if (!times_ok)
    r.message = "offset exceeds the constraint offset by " + std::to_string(-r.worst_offset_gap) +
                " at t=" + std::to_string(r.worst_t);
  else
    r.message = "under-approximation holds";
  return r;
}

}  // namespace tvcbf
