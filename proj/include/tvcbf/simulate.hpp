#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <tvcbf/dynamics.hpp>
#include <tvcbf/safety_filter.hpp>
#include <tvcbf/tv_cbf.hpp>

namespace tvcbf {

/// Classical 4th-order Runge-Kutta step with the input held constant.
/// The increment is combined as dt * (k1 + 2 k2 + 2 k3 + k4) / 6, so a
/// constant right-hand side advances by exactly dt * f when the stage sum
/// rounds cleanly.
inline Vector step_rk4(const DynamicsModel& dyn, const Vector& x, const Vector& u, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step_rk4: dt must be positive");
  if (!dyn.input_box.contains(u, 0.0))
    throw std::invalid_argument("step_rk4: input outside the input box");
  const Vector k1 = dyn.rhs(x, u);
  const Vector k2 = dyn.rhs(x + (dt / 2.0) * k1, u);
  const Vector k3 = dyn.rhs(x + (dt / 2.0) * k2, u);
  const Vector k4 = dyn.rhs(x + dt * k3, u);
  Vector next = x + dt * ((k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0);
  if (!all_finite(next)) throw std::runtime_error("step_rk4: state became non-finite");
  return next;
}

/// Piecewise-linear parameter trajectory through the waypoints in order at
/// constant speed min(0.99 * rate_bound, requested_speed), pausing `dwell`
/// seconds at the start and after each arrival. The 1% speed reserve keeps
/// the strict rate-bound certificate passing with margin 0.01 * bound when
/// the comparison function's value at the offset equals the bound.
inline ParamTrajectory generate_waypoint_path(const std::vector<Vector>& waypoints,
                                              double rate_bound, double dwell = 0.0,
                                              double requested_speed =
                                                  std::numeric_limits<double>::infinity()) {
  if (waypoints.empty()) throw std::invalid_argument("generate_waypoint_path: need at least one waypoint");
  if (!(rate_bound > 0.0) || !std::isfinite(rate_bound))
    throw std::invalid_argument("generate_waypoint_path: rate bound must be positive");
  if (!(requested_speed > 0.0))
    throw std::invalid_argument("generate_waypoint_path: requested speed must be positive");
  if (!(dwell >= 0.0) || !std::isfinite(dwell))
    throw std::invalid_argument("generate_waypoint_path: dwell must be >= 0");
  const Eigen::Index dim = waypoints.front().size();
  for (const auto& w : waypoints) {
    if (w.size() != dim) throw std::invalid_argument("generate_waypoint_path: inconsistent waypoint dimensions");
    if (!all_finite(w)) throw std::invalid_argument("generate_waypoint_path: non-finite waypoint");
  }

  const double speed = std::min(0.99 * rate_bound, requested_speed);
  std::vector<std::pair<double, Vector>> knots;
  knots.emplace_back(0.0, waypoints.front());
  double t = 0.0;
  if (dwell > 0.0) {
    t += dwell;
    knots.emplace_back(t, waypoints.front());
  }
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const double d = (waypoints[i] - waypoints[i - 1]).norm();
    if (d == 0.0) continue;  // repeated waypoint, nothing to traverse
    t += d / speed;
    knots.emplace_back(t, waypoints[i]);
    if (dwell > 0.0) {
      t += dwell;
      knots.emplace_back(t, waypoints[i]);
    }
  }
  return ParamTrajectory::piecewise_linear(knots);
}

/// Rest-to-rest trapezoidal-speed path through the waypoints for parameter
/// spaces that stack position and velocity: the returned trajectory has
/// value (p(t), pdot(t)) in R^{2n} and rate (pdot(t), pddot(t)). Each leg
/// accelerates at `accel` up to `cruise_speed` (or to the triangular peak on
/// legs too short to reach it), cruises, decelerates back to rest, then
/// pauses `dwell` seconds; an initial dwell precedes the first leg. The
/// position component is C^1; the acceleration jumps at phase boundaries.
inline ParamTrajectory generate_trapezoid_path(const std::vector<Vector>& waypoints,
                                               double cruise_speed, double accel,
                                               double dwell = 0.0) {
  if (waypoints.empty()) throw std::invalid_argument("generate_trapezoid_path: need at least one waypoint");
  if (!(cruise_speed > 0.0) || !std::isfinite(cruise_speed))
    throw std::invalid_argument("generate_trapezoid_path: cruise speed must be positive");
  if (!(accel > 0.0) || !std::isfinite(accel))
    throw std::invalid_argument("generate_trapezoid_path: acceleration must be positive");
  if (!(dwell >= 0.0) || !std::isfinite(dwell))
    throw std::invalid_argument("generate_trapezoid_path: dwell must be >= 0");
  const Eigen::Index n = waypoints.front().size();
  for (const auto& w : waypoints) {
    if (w.size() != n) throw std::invalid_argument("generate_trapezoid_path: inconsistent waypoint dimensions");
    if (!all_finite(w)) throw std::invalid_argument("generate_trapezoid_path: non-finite waypoint");
  }

  struct Leg {
    double t0 = 0.0;       // leg start time
    double ta = 0.0;       // acceleration (= deceleration) duration
    double tc = 0.0;       // cruise duration
    double vpk = 0.0;      // peak speed along the leg
    double d = 0.0;        // leg length
    Vector origin, dir;
  };
  auto legs = std::make_shared<std::vector<Leg>>();
  double t = dwell;
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const double d = (waypoints[i] - waypoints[i - 1]).norm();
    if (d == 0.0) continue;  // repeated waypoint, nothing to traverse
    Leg leg;
    leg.t0 = t;
    leg.d = d;
    leg.origin = waypoints[i - 1];
    leg.dir = (waypoints[i] - waypoints[i - 1]) / d;
    if (d >= cruise_speed * cruise_speed / accel) {
      leg.vpk = cruise_speed;
      leg.ta = cruise_speed / accel;
      leg.tc = (d - cruise_speed * cruise_speed / accel) / cruise_speed;
    } else {
      leg.vpk = std::sqrt(d * accel);
      leg.ta = leg.vpk / accel;
      leg.tc = 0.0;
    }
    legs->push_back(leg);
    t += 2.0 * leg.ta + leg.tc + dwell;
  }

  // Position, velocity, acceleration at time t; parked outside the legs.
  auto state_at = [legs, accel, start = waypoints.front(),
                   n](double t) -> std::array<Vector, 3> {
    const Leg* cur = nullptr;
    for (const auto& leg : *legs) {
      if (leg.t0 <= t) cur = &leg;
      else break;
    }
    Vector p = start, v = Vector::Zero(n), a = Vector::Zero(n);
    if (cur) {
      const double tau = t - cur->t0;
      const double dur = 2.0 * cur->ta + cur->tc;
      double s = cur->d, sv = 0.0, sa = 0.0;
      if (tau < cur->ta) {
        s = 0.5 * accel * tau * tau;
        sv = accel * tau;
        sa = accel;
      } else if (tau < cur->ta + cur->tc) {
        s = 0.5 * cur->vpk * cur->ta + cur->vpk * (tau - cur->ta);
        sv = cur->vpk;
      } else if (tau < dur) {
        const double sigma = tau - cur->ta - cur->tc;
        s = 0.5 * cur->vpk * cur->ta + cur->vpk * cur->tc + cur->vpk * sigma -
            0.5 * accel * sigma * sigma;
        sv = cur->vpk - accel * sigma;
        sa = -accel;
      }
      p = cur->origin + s * cur->dir;
      v = sv * cur->dir;
      a = sa * cur->dir;
    }
    return {p, v, a};
  };

  const int dim = 2 * static_cast<int>(n);
  return ParamTrajectory::analytic(
      dim,
      [state_at, n, dim](double t) {
        const auto s = state_at(t);
        Vector out(dim);
        out.head(n) = s[0];
        out.tail(n) = s[1];
        return out;
      },
      [state_at, n, dim](double t) {
        const auto s = state_at(t);
        Vector out(dim);
        out.head(n) = s[1];
        out.tail(n) = s[2];
        return out;
      });
}

/// First-order parameter-rate estimate from observed samples. `two_point` is
/// false when only one sample exists and the estimate is pinned to zero.
struct RateEstimate {
  Vector dp;
  bool two_point = false;
};

inline RateEstimate estimate_rate_online(const std::vector<std::pair<double, Vector>>& history) {
  if (history.empty()) throw std::invalid_argument("estimate_rate_online: empty history");
  if (history.size() == 1) return {Vector::Zero(history.front().second.size()), false};
  const auto& [t1, p1] = history[history.size() - 2];
  const auto& [t2, p2] = history.back();
  if (!(t2 > t1)) throw std::invalid_argument("estimate_rate_online: samples must have increasing times");
  return {Vector((p2 - p1) / (t2 - t1)), true};
}

/// One control tick of a closed-loop run.
struct TrajectoryRow {
  double t = 0.0;
  Vector x;
  Vector u_ref;
  Vector u;
  FilterStatus status = FilterStatus::optimal;
  std::vector<double> B;        // per barrier; NaN where the barrier is inactive
  std::vector<double> h;        // per logged state constraint
  std::vector<double> dp_hat;   // per barrier, norm of the parameter-rate estimate
  double margin = std::numeric_limits<double>::infinity();
};

struct TrajectoryRecord {
  int state_dim = 0;
  int input_dim = 0;
  std::vector<std::string> barrier_names;
  std::vector<std::string> constraint_names;
  std::vector<TrajectoryRow> rows;
};

/// Closed-loop experiment description. The barriers carry the true parameter
/// and offset trajectories; with online rate estimation the controller is
/// only shown the values observed at past control ticks.
struct Scenario {
  DynamicsModel dynamics;
  std::vector<TimeVaryingCbf> cbfs;
  std::vector<TvConstraint> constraints;  // logged, not enforced
  std::function<Vector(double, const Vector&)> reference;
  Vector x0;
  double dt_sim = 1e-3;
  double dt_control = 1e-2;
  double horizon = 0.0;
  bool online_rate_estimation = false;
  bool use_sampled_filter = false;  // forced on when the model is not input-affine
  int sampled_grid_per_axis = 41;
  FilterOptions filter_options;
  std::string name = "scenario";

  void validate() const {
    if (!dynamics.f) throw std::invalid_argument(name + ": dynamics has no right-hand side");
    if (!reference) throw std::invalid_argument(name + ": no reference law");
    if (x0.size() != dynamics.state_dim) throw std::invalid_argument(name + ": x0 dimension mismatch");
    if (!all_finite(x0)) throw std::invalid_argument(name + ": x0 is not finite");
    if (!(dt_sim > 0.0) || !(dt_control > 0.0) || !std::isfinite(dt_control))
      throw std::invalid_argument(name + ": step sizes must be positive");
    const double ratio = dt_control / dt_sim;
    const auto k = static_cast<long long>(std::llround(ratio));
    if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9 * static_cast<double>(k))
      throw std::invalid_argument(name + ": dt_control must be an integer multiple of dt_sim");
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
      throw std::invalid_argument(name + ": horizon must be finite and >= 0");
    if (sampled_grid_per_axis < 2)
      throw std::invalid_argument(name + ": sampled filter needs at least 2 grid points per axis");
    for (const auto& B : cbfs) {
      B.validate(horizon);
      if (B.family.state_dim != dynamics.state_dim)
        throw std::invalid_argument(name + ": barrier '" + B.name + "' state dimension mismatch");
      if (B.active(0.0, x0) && B.eval(0.0, x0) < 0.0)
        throw std::invalid_argument(name + ": x0 starts outside the safe set of '" + B.name + "'");
    }
    for (const auto& c : constraints)
      if (c.family.state_dim != dynamics.state_dim)
        throw std::invalid_argument(name + ": constraint '" + c.name + "' state dimension mismatch");
  }
};

/// Thrown when integration produces a non-finite state; carries everything
/// recorded up to the last valid control tick.
struct ScenarioBlowup : std::runtime_error {
  TrajectoryRecord record;
  ScenarioBlowup(const std::string& msg, TrajectoryRecord rec)
      : std::runtime_error(msg), record(std::move(rec)) {}
};

/// Runs the closed loop: at each control tick observe the world, filter the
/// reference, hold the input for dt_control while integrating at dt_sim.
/// Rows are recorded at every tick including the final one; a zero-horizon
/// scenario yields exactly one row.
inline TrajectoryRecord run_scenario(const Scenario& s) {
  s.validate();
  const int steps_per_tick = static_cast<int>(std::llround(s.dt_control / s.dt_sim));
  const auto n_ticks = static_cast<long>(std::floor(s.horizon / s.dt_control + 1e-9));

  TrajectoryRecord rec;
  rec.state_dim = s.dynamics.state_dim;
  rec.input_dim = s.dynamics.input_dim;
  for (const auto& B : s.cbfs) rec.barrier_names.push_back(B.name);
  for (const auto& c : s.constraints) rec.constraint_names.push_back(c.name);

  auto ctrl = s.cbfs;  // the controller's view of the barriers
  std::vector<std::vector<std::pair<double, Vector>>> history(s.cbfs.size());
  Vector x = s.x0;

  for (long k = 0; k <= n_ticks; ++k) {
    const double t = static_cast<double>(k) * s.dt_control;

    TrajectoryRow row;
    row.t = t;
    row.x = x;
    row.dp_hat.resize(s.cbfs.size(), 0.0);
    for (std::size_t i = 0; i < s.cbfs.size(); ++i) {
      if (s.online_rate_estimation) {
        const Vector p_obs = s.cbfs[i].p_traj.value(t);
        history[i].emplace_back(t, p_obs);
        if (history[i].size() > 2) history[i].erase(history[i].begin());
        row.dp_hat[i] = estimate_rate_online(history[i]).dp.norm();
        ctrl[i].p_traj = ParamTrajectory::constant(p_obs);
        ctrl[i].offset = OffsetTrajectory::constant(s.cbfs[i].offset.value(t));
      } else {
        row.dp_hat[i] = s.cbfs[i].p_traj.rate(t).norm();
      }
    }

    row.u_ref = s.reference(t, x);
    if (row.u_ref.size() != s.dynamics.input_dim || !all_finite(row.u_ref))
      throw std::runtime_error(s.name + ": reference law returned a bad input at t=" + std::to_string(t));
    const FilterResult fr =
        (s.dynamics.affine && !s.use_sampled_filter)
            ? filter_input(ctrl, *s.dynamics.affine, t, x, row.u_ref, s.filter_options)
            : filter_input_sampled(ctrl, s.dynamics, t, x, row.u_ref, s.sampled_grid_per_axis,
                                   s.filter_options);
    row.u = fr.u;
    row.status = fr.status;
    row.margin = fr.margin;
    for (const auto& B : s.cbfs)
      row.B.push_back(B.active(t, x) ? B.eval(t, x) : std::numeric_limits<double>::quiet_NaN());
    for (const auto& c : s.constraints) row.h.push_back(c.eval(t, x));
    rec.rows.push_back(std::move(row));

    if (k == n_ticks) break;
    try {
      for (int i = 0; i < steps_per_tick; ++i) x = step_rk4(s.dynamics, x, fr.u, s.dt_sim);
    } catch (const std::exception& e) {
      throw ScenarioBlowup(s.name + ": integration failed after t=" + std::to_string(t) + ": " + e.what(),
                           std::move(rec));
    }
  }
  return rec;
}

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace detail

/// CSV with one row per control tick. Header layout:
///   t, x_0.., uref_0.., u_0.., status, B_0.., h_0.., dp_0.., margin
/// Numbers use %.17g so values round-trip bit-exactly; inactive barriers
/// print as nan.
inline void write_csv(const TrajectoryRecord& rec, std::ostream& os) {
  std::string line = "t";
  for (int j = 0; j < rec.state_dim; ++j) line += ",x_" + std::to_string(j);
  for (int j = 0; j < rec.input_dim; ++j) line += ",uref_" + std::to_string(j);
  for (int j = 0; j < rec.input_dim; ++j) line += ",u_" + std::to_string(j);
  line += ",status";
  for (std::size_t j = 0; j < rec.barrier_names.size(); ++j) line += ",B_" + std::to_string(j);
  for (std::size_t j = 0; j < rec.constraint_names.size(); ++j) line += ",h_" + std::to_string(j);
  for (std::size_t j = 0; j < rec.barrier_names.size(); ++j) line += ",dp_" + std::to_string(j);
  line += ",margin\n";
  os << line;

  for (const auto& row : rec.rows) {
    line.clear();
    detail::append_number(line, row.t);
    for (int j = 0; j < rec.state_dim; ++j) {
      line += ',';
      detail::append_number(line, row.x[j]);
    }
    for (int j = 0; j < rec.input_dim; ++j) {
      line += ',';
      detail::append_number(line, row.u_ref[j]);
    }
    for (int j = 0; j < rec.input_dim; ++j) {
      line += ',';
      detail::append_number(line, row.u[j]);
    }
    line += ',';
    line += to_string(row.status);
    for (const double b : row.B) {
      line += ',';
      detail::append_number(line, b);
    }
    for (const double h : row.h) {
      line += ',';
      detail::append_number(line, h);
    }
    for (const double d : row.dp_hat) {
      line += ',';
      detail::append_number(line, d);
    }
    line += ',';
    detail::append_number(line, row.margin);
    line += '\n';
    os << line;
  }
}

inline void write_csv(const TrajectoryRecord& rec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_csv: cannot open '" + path + "'");
  write_csv(rec, os);
}

/// Worst filter status over the run (optimal < clipped < infeasible).
inline FilterStatus worst_status(const TrajectoryRecord& rec) {
  FilterStatus w = FilterStatus::optimal;
  for (const auto& row : rec.rows)
    if (static_cast<int>(row.status) > static_cast<int>(w)) w = row.status;
  return w;
}

/// Run summary for reports: extreme barrier/constraint values, status
/// tallies, and the certificate attached to each barrier. Non-finite
/// extrema (empty runs, all-inactive barriers) serialize as null.
inline nlohmann::ordered_json summary_json(const Scenario& s, const TrajectoryRecord& rec) {
  double min_B = std::numeric_limits<double>::infinity(), min_B_t = 0.0;
  double min_h = std::numeric_limits<double>::infinity(), min_h_t = 0.0;
  double min_margin = std::numeric_limits<double>::infinity(), min_margin_t = 0.0;
  std::size_t n_optimal = 0, n_clipped = 0, n_infeasible = 0;
  for (const auto& row : rec.rows) {
    for (const double b : row.B)
      if (std::isfinite(b) && b < min_B) {
        min_B = b;
        min_B_t = row.t;
      }
    for (const double h : row.h)
      if (std::isfinite(h) && h < min_h) {
        min_h = h;
        min_h_t = row.t;
      }
    if (std::isfinite(row.margin) && row.margin < min_margin) {
      min_margin = row.margin;
      min_margin_t = row.t;
    }
    switch (row.status) {
      case FilterStatus::optimal: ++n_optimal; break;
      case FilterStatus::clipped: ++n_clipped; break;
      case FilterStatus::infeasible_best_effort: ++n_infeasible; break;
    }
  }

  const auto finite_or_null = [](double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  };

  nlohmann::ordered_json j;
  j["scenario"] = s.name;
  j["dynamics"] = s.dynamics.name;
  j["rows"] = rec.rows.size();
  j["dt_sim"] = s.dt_sim;
  j["dt_control"] = s.dt_control;
  j["horizon"] = s.horizon;
  j["online_rate_estimation"] = s.online_rate_estimation;
  j["min_B"] = finite_or_null(min_B);
  j["min_B_t"] = min_B_t;
  j["min_h"] = finite_or_null(min_h);
  j["min_h_t"] = min_h_t;
  j["min_margin"] = finite_or_null(min_margin);
  j["min_margin_t"] = min_margin_t;
  j["worst_status"] = to_string(worst_status(rec));
  j["status_counts"] = {{"optimal", n_optimal},
                        {"clipped", n_clipped},
                        {"infeasible_best_effort", n_infeasible}};
  bool all_certified = true;
  nlohmann::ordered_json certs = nlohmann::ordered_json::array();
  for (const auto& B : s.cbfs) {
    nlohmann::ordered_json c;
    c["name"] = B.name;
    c["certified"] = B.certified;
    if (B.certificate) {
      c["check"] = B.certificate->check;
      c["pass"] = B.certificate->pass;
      c["worst_margin"] = B.certificate->worst_margin;
      c["worst_t"] = B.certificate->worst_t;
    }
    all_certified = all_certified && B.certified;
    certs.push_back(std::move(c));
  }
  j["all_certified"] = all_certified;
  j["certificates"] = std::move(certs);
  if (!rec.rows.empty()) {
    const Vector& xf = rec.rows.back().x;
    j["final_state"] = std::vector<double>(xf.data(), xf.data() + xf.size());
  }
  return j;
}

}  // namespace tvcbf
