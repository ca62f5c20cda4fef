#pragma once

// Shipped closed-loop scenarios. Each builder returns the runnable Scenario
// together with the metadata the verification pipeline needs: Lipschitz
// constants and time grids for the rate certificates, the expected
// certification status, and which logged constraint each barrier
// under-approximates. Builders take a flat JSON object of overrides and
// reject unknown keys so config typos surface as errors instead of silently
// running the defaults.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <tvcbf/fields.hpp>
#include <tvcbf/simulate.hpp>

namespace tvcbf::scenarios {

/// Inputs the verification pipeline needs for one barrier beyond the barrier
/// itself. `expect_certified` distinguishes barriers whose certificates must
/// pass from heuristic ones shipped with advisory checks only.
struct BarrierMeta {
  double ell_b = 1.0;
  double ell_D = 1.0;
  bool expect_certified = true;
  std::vector<double> cert_grid;
  int shiftable_samples = 10000;
};

/// A runnable scenario bundled with its verification metadata.
struct ScenarioSpec {
  Scenario scenario;
  std::vector<BarrierMeta> barrier_meta;               // parallel to scenario.cbfs
  std::vector<std::pair<int, int>> underapprox_pairs;  // (barrier index, constraint index)
  Box underapprox_box;                                 // transformed-state sample region
  int underapprox_samples = 2000;
  std::string description;
};

namespace detail {

inline void require_keys(const nlohmann::json& o, std::initializer_list<const char*> allowed,
                         const char* scenario) {
  if (o.is_null()) return;
  if (!o.is_object()) throw std::invalid_argument(std::string(scenario) + ": overrides must be a JSON object");
  for (const auto& item : o.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument(std::string(scenario) + ": unknown override '" + item.key() + "'");
  }
}

inline double num(const nlohmann::json& o, const char* key, double fallback) {
  if (o.is_null() || !o.contains(key)) return fallback;
  const auto& v = o.at(key);
  if (!v.is_number()) throw std::invalid_argument(std::string("override '") + key + "' must be a number");
  return v.get<double>();
}

inline Vector to_vector(const nlohmann::json& v, const char* key) {
  if (!v.is_array() || v.empty())
    throw std::invalid_argument(std::string("override '") + key + "' must be a non-empty array");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw std::invalid_argument(std::string("override '") + key + "' must contain numbers only");
    out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return out;
}

inline Vector vec(const nlohmann::json& o, const char* key, Vector fallback) {
  if (o.is_null() || !o.contains(key)) return fallback;
  return to_vector(o.at(key), key);
}

inline std::vector<Vector> waypoint_list(const nlohmann::json& o, const char* key,
                                         std::vector<Vector> fallback) {
  if (o.is_null() || !o.contains(key)) return fallback;
  const auto& v = o.at(key);
  if (!v.is_array() || v.empty())
    throw std::invalid_argument(std::string("override '") + key + "' must be a non-empty array of points");
  std::vector<Vector> out;
  out.reserve(v.size());
  for (const auto& point : v) out.push_back(to_vector(point, key));
  return out;
}

/// Scalar overrides every scenario accepts.
inline void apply_common(Scenario& s, const nlohmann::json& o) {
  s.horizon = num(o, "horizon", s.horizon);
  s.dt_sim = num(o, "dt_sim", s.dt_sim);
  s.dt_control = num(o, "dt_control", s.dt_control);
  s.x0 = vec(o, "x0", s.x0);
}

inline std::vector<Vector> square_tour() {
  auto pt = [](double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
  };
  return {pt(0, 0), pt(2, 0), pt(2, 2), pt(0, 2), pt(0, 0)};
}

/// Obstacle centre drifting right while oscillating vertically:
/// c(t) = c0 + (speed t, amplitude sin(2 pi f t)).
inline ParamTrajectory obstacle_center(const Vector& c0, double speed, double amplitude,
                                       double frequency_hz) {
  if (c0.size() != 2) throw std::invalid_argument("obstacle_center: centre must be planar");
  const double w = 2.0 * M_PI * frequency_hz;
  return ParamTrajectory::analytic(
      2,
      [c0, speed, amplitude, w](double t) {
        Vector p(2);
        p << c0[0] + speed * t, c0[1] + amplitude * std::sin(w * t);
        return p;
      },
      [speed, amplitude, w](double t) {
        Vector dp(2);
        dp << speed, amplitude * w * std::cos(w * t);
        return dp;
      });
}

/// Proportional heading / constant speed law toward a fixed goal, clipped to
/// the input box. Serves both pose models (inputs (v, omega) or (v, zeta)).
inline std::function<Vector(double, const Vector&)> pursuit_reference(const Vector& goal,
                                                                      double speed, double gain,
                                                                      const Box& input_box) {
  const double v_lo = input_box.lo[0], v_hi = input_box.hi[0];
  const double s_lo = input_box.lo[1], s_hi = input_box.hi[1];
  return [goal, speed, gain, v_lo, v_hi, s_lo, s_hi](double, const Vector& x) {
    const double err = std::remainder(std::atan2(goal[1] - x[1], goal[0] - x[0]) - x[2], 2.0 * M_PI);
    Vector u(2);
    u << std::clamp(speed, v_lo, v_hi), std::clamp(gain * err, s_lo, s_hi);
    return u;
  };
}

}  // namespace detail

/// Planar single integrator holding a keep-in tube around a dwelling square
/// tour. The realised path speed equals `path_speed` exactly; the rate bound
/// passed to the path builder carries the 1% reserve, so the certificate
/// margin is 1% of the bound at the default speed and the scenario flips to
/// a clean certificate rejection when the speed exceeds the bound.
inline ScenarioSpec waypoint_si(const nlohmann::json& o = {}) {
  detail::require_keys(
      o, {"horizon", "dt_sim", "dt_control", "x0", "waypoints", "path_speed", "dwell", "tube_radius"},
      "waypoint_si");
  const double tube = detail::num(o, "tube_radius", 0.25);
  const double path_speed = detail::num(o, "path_speed", 0.75);
  const double dwell = detail::num(o, "dwell", 1.0);
  if (!(tube > 0.0)) throw std::invalid_argument("waypoint_si: tube_radius must be > 0");
  const auto waypoints = detail::waypoint_list(o, "waypoints", detail::square_tour());
  const auto path = generate_waypoint_path(waypoints, path_speed / 0.99, dwell);

  ScenarioSpec spec;
  Scenario& s = spec.scenario;
  s.name = "waypoint_si";
  s.dynamics = dynamics::single_integrator(2);
  s.x0 = (Vector(2) << 0.05, 0.0).finished();
  s.horizon = 30.0;
  s.reference = [](double, const Vector&) { return Vector::Zero(2).eval(); };

  TimeVaryingCbf B;
  B.base.field = fields::neg_norm(2);
  B.base.alpha = ExtendedKeFn::sigmoid(1.0, 8.0);
  B.base.capacity = tube;
  B.base.domain_box = Box::centered(2, std::max(1.0, 4.0 * tube));
  B.base.name = "neg_dist";
  B.family = diffeos::translate_full(2, 10.0);
  B.p_traj = path;
  B.offset = OffsetTrajectory::constant(tube);
  B.alpha_p = ExtendedKeFn::sigmoid(1.0, 8.0);
  B.name = "keep_in_tube";
  s.cbfs.push_back(B);

  TvConstraint c;
  c.hbar = fields::neg_norm(2);
  c.family = diffeos::translate_full(2, 10.0);
  c.q_traj = path;
  c.gamma = OffsetTrajectory::constant(tube);
  c.name = "tube";
  s.constraints.push_back(c);

  detail::apply_common(s, o);

  BarrierMeta meta;
  meta.cert_grid = uniform_grid(0.0, std::max({s.horizon, path.knot_times().back(), 1.0}), 1001);
  spec.barrier_meta.push_back(meta);
  spec.underapprox_pairs = {{0, 0}};
  spec.underapprox_box = B.base.domain_box;
  spec.description = "single integrator keeping a tube of radius " + std::to_string(tube) +
                     " around a dwelling waypoint tour";

  certify(s.cbfs[0], meta.ell_b, meta.ell_D, meta.cert_grid);
  return spec;
}

/// Planar double integrator tracking a rest-to-rest trapezoidal tour with a
/// backstepping barrier valid on an annulus of tracking errors, jointly
/// filtered with a velocity cap. The backstepping barrier certifies against
/// a sampled Lipschitz estimate inflated to 4.4; the velocity barrier is
/// parameter-constant, so its certificate is the trivial zero-rate one.
inline ScenarioSpec waypoint_di(const nlohmann::json& o = {}) {
  detail::require_keys(
      o, {"horizon", "dt_sim", "dt_control", "x0", "waypoints", "cruise_speed", "accel", "dwell"},
      "waypoint_di");
  const double cruise = detail::num(o, "cruise_speed", 0.4);
  const double accel = detail::num(o, "accel", 0.15);
  const double dwell = detail::num(o, "dwell", 1.0);
  const auto waypoints = detail::waypoint_list(o, "waypoints", detail::square_tour());
  const auto path = generate_trapezoid_path(waypoints, cruise, accel, dwell);

  ScenarioSpec spec;
  Scenario& s = spec.scenario;
  s.name = "waypoint_di";
  s.dynamics = dynamics::double_integrator(2);
  s.x0 = (Vector(4) << waypoints.front()[0] + 0.1, waypoints.front()[1], 0.0, 0.0).finished();
  s.horizon = 40.0;
  s.dt_control = 2e-3;
  s.reference = [](double, const Vector&) { return Vector::Zero(2).eval(); };

  TimeVaryingCbf track;
  track.base.field = fields::backstep_di(2, ExtendedKeFn::sigmoid(1.0, 8.0));
  track.base.alpha = ExtendedKeFn::sigmoid(3.0, 6.0);
  track.base.capacity = 0.4;
  track.base.domain_box = Box::centered(4, 2.0);
  track.base.region = fields::backstep_di_region(2, 0.4, 0.1, 1.0);
  track.base.name = "backstep_di";
  track.family = diffeos::translate_di(2, 10.0, 1.0);
  track.p_traj = path;
  track.offset = OffsetTrajectory::constant(0.4);
  track.alpha_p = ExtendedKeFn::sigmoid(3.0, 6.0);
  track.name = "tracking_di";
  s.cbfs.push_back(track);

  TimeVaryingCbf vel;
  vel.base.field = fields::vel_cap(2, 1.0);
  vel.base.alpha = ExtendedKeFn::sigmoid(3.0, 6.0);
  vel.base.capacity = 0.25;
  vel.base.domain_box = Box::centered(4, 2.5);
  vel.base.name = "vel_cap";
  vel.family = diffeos::translate_di(2, 10.0, 1.0);
  vel.p_traj = ParamTrajectory::constant(Vector::Zero(4));
  vel.offset = OffsetTrajectory::constant(0.0);
  vel.alpha_p = ExtendedKeFn::sigmoid(3.0, 6.0);
  vel.name = "vel_limit";
  s.cbfs.push_back(vel);

  // Logged constraints: the position tube the annulus barrier implies
  // (distance taken on the position block only), and the velocity cap the
  // second barrier enforces exactly.
  ScalarField pos_err;
  pos_err.dim = 4;
  pos_err.name = "neg_pos_dist";
  pos_err.eval = [](const Vector& y) { return -y.head(2).norm(); };
  pos_err.gradient = [](const Vector& y) {
    Vector g = Vector::Zero(4);
    g.head(2) = -y.head(2) / y.head(2).norm();
    return g;
  };
  pos_err.nondifferentiable_at = [](const Vector& y) { return y.head(2).norm() < 1e-12; };

  TvConstraint tube;
  tube.hbar = pos_err;
  tube.family = diffeos::translate_di(2, 10.0, 1.0);
  tube.q_traj = path;
  tube.gamma = OffsetTrajectory::constant(0.5);
  tube.name = "tracking_tube";
  s.constraints.push_back(tube);

  TvConstraint vcap;
  vcap.hbar = fields::vel_cap(2, 1.0);
  vcap.family = diffeos::translate_di(2, 10.0, 1.0);
  vcap.q_traj = ParamTrajectory::constant(Vector::Zero(4));
  vcap.gamma = OffsetTrajectory::constant(0.0);
  vcap.name = "velocity_cap";
  s.constraints.push_back(vcap);

  detail::apply_common(s, o);

  const double t_end = std::max(s.horizon, 1.0);
  BarrierMeta track_meta;
  track_meta.ell_b = 4.4;
  track_meta.ell_D = 1.0;
  track_meta.cert_grid = uniform_grid(0.0, t_end, 2001);
  track_meta.shiftable_samples = 60000;  // annulus x velocity-ball acceptance is ~0.6%
  spec.barrier_meta.push_back(track_meta);

  BarrierMeta vel_meta;
  vel_meta.cert_grid = uniform_grid(0.0, t_end, 11);
  spec.barrier_meta.push_back(vel_meta);

  spec.underapprox_pairs = {{1, 1}};
  spec.underapprox_box = Box::centered(4, 2.0);
  spec.description = "double integrator tracking a trapezoidal tour under a backstepping annulus "
                     "barrier and a velocity cap";

  certify(s.cbfs[0], track_meta.ell_b, track_meta.ell_D, track_meta.cert_grid);
  certify(s.cbfs[1], vel_meta.ell_b, vel_meta.ell_D, vel_meta.cert_grid);
  return spec;
}

namespace detail {

/// Shared body of the single-integrator disk-avoidance scenarios. A keep-out
/// disk of radius r(t) <= 3 is encoded through the base barrier
/// b = distance - 6 with offset lambda(t) = r(t), so the guaranteed set
/// {B >= 0} = {distance >= 6 - r(t)} sits inside the true safe set
/// {distance >= r(t)} exactly when r(t) <= 3. The logged clearance
/// constraint h = distance - r(t) comes from the same field with
/// gamma(t) = 6 - r(t), which dominates lambda on the same condition.
inline ScenarioSpec disk_si_scenario(const nlohmann::json& o, const char* name,
                                     OffsetTrajectory lambda, OffsetTrajectory gamma,
                                     bool online) {
  require_keys(o, {"horizon", "dt_sim", "dt_control", "x0", "obstacle_speed", "amplitude",
                   "frequency_hz", "obstacle_start"},
               name);
  const double speed = num(o, "obstacle_speed", 0.25);
  const double amplitude = num(o, "amplitude", 1.0);
  const double frequency = num(o, "frequency_hz", 0.1);
  const Vector c0 = vec(o, "obstacle_start", (Vector(2) << -5.0, 0.0).finished());
  const auto center = obstacle_center(c0, speed, amplitude, frequency);

  ScenarioSpec spec;
  Scenario& s = spec.scenario;
  s.name = name;
  s.dynamics = dynamics::single_integrator(2);
  s.x0 = Vector::Zero(2);
  s.horizon = 60.0;
  s.online_rate_estimation = online;
  s.reference = [](double, const Vector&) { return Vector::Zero(2).eval(); };

  TimeVaryingCbf B;
  B.base.field = fields::disk_dist(2, Eigen::Vector2d(0.0, 0.0), 6.0);
  B.base.alpha = ExtendedKeFn::sigmoid(1.0, 4.0);
  B.base.capacity = 3.0;
  B.base.domain_box = Box::centered(2, 40.0);
  B.base.name = "disk_margin";
  B.family = diffeos::translate_full(2, 40.0);
  B.p_traj = center;
  B.offset = lambda;
  B.alpha_p = ExtendedKeFn::sigmoid(1.0, 4.0);
  B.name = "keep_out_disk";
  s.cbfs.push_back(B);

  TvConstraint c;
  c.hbar = fields::disk_dist(2, Eigen::Vector2d(0.0, 0.0), 6.0);
  c.family = diffeos::translate_full(2, 40.0);
  c.q_traj = center;
  c.gamma = gamma;
  c.name = "clearance";
  s.constraints.push_back(c);

  apply_common(s, o);

  BarrierMeta meta;
  meta.cert_grid = uniform_grid(0.0, std::max(s.horizon, 1.0), 2001);
  spec.barrier_meta.push_back(meta);
  spec.underapprox_pairs = {{0, 0}};
  spec.underapprox_box = B.base.domain_box;

  certify(s.cbfs[0], meta.ell_b, meta.ell_D, meta.cert_grid);
  return spec;
}

/// Shared body of the pose-model disk-avoidance scenarios. The distance
/// barrier here is a heuristic stand-in (pose dynamics cannot certify the
/// shiftable condition: the worst heading points at the obstacle faster than
/// alpha absorbs), so it ships uncertified behind an explicit opt-in.
inline ScenarioSpec disk_pose_scenario(const nlohmann::json& o, const char* name,
                                       DynamicsModel model, bool sampled_filter) {
  require_keys(o, {"horizon", "dt_sim", "dt_control", "x0", "obstacle_speed", "amplitude",
                   "frequency_hz", "obstacle_start", "goal", "cruise_speed"},
               name);
  const double speed = num(o, "obstacle_speed", 0.5);
  const double amplitude = num(o, "amplitude", 3.0);
  const double frequency = num(o, "frequency_hz", 0.1);
  const Vector c0 = vec(o, "obstacle_start", (Vector(2) << -10.0, 0.0).finished());
  const Vector goal = vec(o, "goal", (Vector(2) << 0.0, 20.0).finished());
  const double cruise = num(o, "cruise_speed", 1.5);
  const auto center = obstacle_center(c0, speed, amplitude, frequency);

  ScenarioSpec spec;
  Scenario& s = spec.scenario;
  s.name = name;
  s.dynamics = std::move(model);
  s.x0 = (Vector(3) << 0.0, -20.0, M_PI / 2.0).finished();
  s.horizon = 40.0;
  s.online_rate_estimation = true;
  s.use_sampled_filter = sampled_filter;
  s.sampled_grid_per_axis = 21;
  s.filter_options.allow_uncertified = true;
  s.reference = pursuit_reference(goal, cruise, 2.0, s.dynamics.input_box);

  TimeVaryingCbf B;
  B.base.field = fields::disk_dist(3, Eigen::Vector2d(0.0, 0.0), 4.0);
  B.base.alpha = ExtendedKeFn::sigmoid(1.0, 4.0);
  B.base.capacity = 3.0;
  B.base.domain_box = Box::centered(3, 60.0);
  B.base.name = "disk_margin_pose";
  B.family = diffeos::translate_pose_xy(40.0);
  B.p_traj = center;
  B.offset = OffsetTrajectory::constant(2.0);
  B.alpha_p = ExtendedKeFn::sigmoid(1.0, 4.0);
  B.name = "keep_out_disk";
  s.cbfs.push_back(B);

  TvConstraint c;
  c.hbar = fields::disk_dist(3, Eigen::Vector2d(0.0, 0.0), 4.0);
  c.family = diffeos::translate_pose_xy(40.0);
  c.q_traj = center;
  c.gamma = OffsetTrajectory::constant(2.0);
  c.name = "clearance";
  s.constraints.push_back(c);

  apply_common(s, o);

  BarrierMeta meta;
  meta.expect_certified = false;  // advisory checks only; see module notes
  meta.cert_grid = uniform_grid(0.0, std::max(s.horizon, 1.0), 1001);
  spec.barrier_meta.push_back(meta);
  spec.underapprox_pairs = {{0, 0}};
  spec.underapprox_box = B.base.domain_box;
  return spec;
}

}  // namespace detail

/// Single integrator dodging a drifting, oscillating disk of constant
/// radius 2. The enforced zero set keeps distance 6 from the centre, so the
/// run never approaches the true clearance boundary.
inline ScenarioSpec obstacles_const_radius_si(const nlohmann::json& o = {}) {
  auto spec = detail::disk_si_scenario(o, "obstacles_const_radius_si",
                                       OffsetTrajectory::constant(2.0),
                                       OffsetTrajectory::constant(4.0), false);
  spec.description = "single integrator avoiding a constant-radius translating disk";
  return spec;
}

/// Single integrator dodging a disk whose radius breathes as r(t) =
/// 2 + sin(0.2 t), tracked online from observed parameter samples. The
/// jump-aware rate certificate covers the moving centre and the breathing
/// offset jointly.
inline ScenarioSpec obstacles_tv_radius_si(const nlohmann::json& o = {}) {
  auto lambda = OffsetTrajectory::analytic([](double t) { return 2.0 + std::sin(0.2 * t); },
                                           [](double t) { return 0.2 * std::cos(0.2 * t); });
  auto gamma = OffsetTrajectory::analytic([](double t) { return 4.0 - std::sin(0.2 * t); },
                                          [](double t) { return -0.2 * std::cos(0.2 * t); });
  auto spec = detail::disk_si_scenario(o, "obstacles_tv_radius_si", std::move(lambda),
                                       std::move(gamma), true);
  spec.description = "single integrator avoiding a translating disk with time-varying radius, "
                     "rates estimated online";
  return spec;
}

/// Unicycle crossing a moving disk's path en route to a fixed goal. The
/// barrier is heuristic (uncertified): the QP can only modulate speed, not
/// heading, because the distance field has no heading component.
inline ScenarioSpec obstacles_unicycle(const nlohmann::json& o = {}) {
  auto spec = detail::disk_pose_scenario(o, "obstacles_unicycle", dynamics::unicycle(), false);
  spec.description = "unicycle crossing a translating disk's path with a heuristic distance barrier";
  return spec;
}

/// Kinematic bicycle variant with the tighter steering envelope. The model
/// has no input-affine view, so the filter falls back to candidate sampling.
inline ScenarioSpec obstacles_bicycle_b1(const nlohmann::json& o = {}) {
  auto spec = detail::disk_pose_scenario(o, "obstacles_bicycle_b1",
                                         dynamics::bicycle(1.0, 0.5, 20.0 * M_PI / 180.0), true);
  spec.description = "bicycle (20 degree steering) crossing a translating disk's path";
  return spec;
}

/// Kinematic bicycle variant with the wider steering envelope.
inline ScenarioSpec obstacles_bicycle_b2(const nlohmann::json& o = {}) {
  auto spec = detail::disk_pose_scenario(o, "obstacles_bicycle_b2",
                                         dynamics::bicycle(1.0, 0.5, 45.0 * M_PI / 180.0), true);
  spec.description = "bicycle (45 degree steering) crossing a translating disk's path";
  return spec;
}

inline const std::map<std::string, ScenarioSpec (*)(const nlohmann::json&)>& registry() {
  static const std::map<std::string, ScenarioSpec (*)(const nlohmann::json&)> reg = {
      {"waypoint_si", &waypoint_si},
      {"waypoint_di", &waypoint_di},
      {"obstacles_const_radius_si", &obstacles_const_radius_si},
      {"obstacles_tv_radius_si", &obstacles_tv_radius_si},
      {"obstacles_unicycle", &obstacles_unicycle},
      {"obstacles_bicycle_b1", &obstacles_bicycle_b1},
      {"obstacles_bicycle_b2", &obstacles_bicycle_b2},
  };
  return reg;
}

inline std::vector<std::string> names() {
  std::vector<std::string> out;
  out.reserve(registry().size());
  for (const auto& [name, fn] : registry()) out.push_back(name);
  return out;
}

inline ScenarioSpec make_scenario(const std::string& name, const nlohmann::json& overrides = {}) {
  const auto it = registry().find(name);
  if (it == registry().end()) {
    std::string known;
    for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown scenario '" + name + "' (known: " + known + ")");
  }
  return it->second(overrides);
}

}  // namespace tvcbf::scenarios
