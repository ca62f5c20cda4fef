#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <tvcbf/core.hpp>

namespace tvcbf {

/// Locally Lipschitz parameter path p(t) with a right derivative dp(t;1)
/// defined everywhere. Piecewise-linear paths hold their first/last value
/// outside the knot range (zero rate there); rates at knots are the
/// right-hand slopes.
class ParamTrajectory {
 public:
  enum class Kind { piecewise_linear, analytic };

  static ParamTrajectory piecewise_linear(std::vector<std::pair<double, Vector>> knots) {
    if (knots.empty()) throw std::invalid_argument("ParamTrajectory: need at least one knot");
    const Eigen::Index d = knots.front().second.size();
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!std::isfinite(knots[i].first) || !all_finite(knots[i].second))
        throw std::invalid_argument("ParamTrajectory: non-finite knot");
      if (knots[i].second.size() != d) throw std::invalid_argument("ParamTrajectory: inconsistent knot dimensions");
      if (i > 0 && !(knots[i].first > knots[i - 1].first))
        throw std::invalid_argument("ParamTrajectory: knot times must be strictly increasing");
    }
    ParamTrajectory p;
    p.kind_ = Kind::piecewise_linear;
    p.dim_ = static_cast<int>(d);
    p.knots_ = std::move(knots);
    return p;
  }

  static ParamTrajectory constant(Vector value) {
    return piecewise_linear({{0.0, std::move(value)}});
  }

  static ParamTrajectory analytic(int dim, std::function<Vector(double)> value,
                                  std::function<Vector(double)> rate) {
    if (dim < 1) throw std::invalid_argument("ParamTrajectory: dimension must be >= 1");
    if (!value || !rate) throw std::invalid_argument("ParamTrajectory: analytic kind needs value and rate");
    ParamTrajectory p;
    p.kind_ = Kind::analytic;
    p.dim_ = dim;
    p.value_fn_ = std::move(value);
    p.rate_fn_ = std::move(rate);
    return p;
  }

  Vector value(double t) const {
    if (!std::isfinite(t)) throw std::invalid_argument("ParamTrajectory: non-finite time");
    if (kind_ == Kind::analytic) return checked(value_fn_(t));
    if (t <= knots_.front().first) return knots_.front().second;
    if (t >= knots_.back().first) return knots_.back().second;
    const std::size_t i = segment_index(t);
    const auto& [t0, p0] = knots_[i];
    const auto& [t1, p1] = knots_[i + 1];
    const double s = (t - t0) / (t1 - t0);
    return (1.0 - s) * p0 + s * p1;
  }

  /// Right derivative dp(t;1).
  Vector rate(double t) const {
    if (!std::isfinite(t)) throw std::invalid_argument("ParamTrajectory: non-finite time");
    if (kind_ == Kind::analytic) return checked(rate_fn_(t));
    if (t < knots_.front().first || t >= knots_.back().first) return Vector::Zero(dim_);
    const std::size_t i = segment_index(t);
    const auto& [t0, p0] = knots_[i];
    const auto& [t1, p1] = knots_[i + 1];
    return (p1 - p0) / (t1 - t0);
  }

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }

  /// Knot times (empty for analytic paths).
  std::vector<double> knot_times() const {
    std::vector<double> ts;
    ts.reserve(knots_.size());
    for (const auto& [t, p] : knots_) ts.push_back(t);
    return ts;
  }

  const std::vector<std::pair<double, Vector>>& knots() const { return knots_; }

 private:
  Vector checked(Vector v) const {
    if (v.size() != dim_ || !all_finite(v)) throw std::runtime_error("ParamTrajectory: analytic callable returned a bad vector");
    return v;
  }

  std::size_t segment_index(double t) const {
    // Largest i with knots_[i].first <= t; callers guarantee t is interior.
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                     [](double v, const auto& k) { return v < k.first; });
    return static_cast<std::size_t>(std::distance(knots_.begin(), it)) - 1;
  }

  Kind kind_ = Kind::piecewise_linear;
  int dim_ = 0;
  std::vector<std::pair<double, Vector>> knots_;
  std::function<Vector(double)> value_fn_, rate_fn_;
};

inline void to_json(nlohmann::json& j, const ParamTrajectory& p) {
  if (p.kind() == ParamTrajectory::Kind::analytic)
    throw std::invalid_argument("ParamTrajectory: analytic paths have no JSON form");
  if (p.knots().size() == 1) {
    const Vector& v = p.knots().front().second;
    j = {{"kind", "constant"}, {"value", std::vector<double>(v.data(), v.data() + v.size())}};
    return;
  }
  nlohmann::json knots = nlohmann::json::array();
  for (const auto& [t, v] : p.knots())
    knots.push_back({t, std::vector<double>(v.data(), v.data() + v.size())});
  j = {{"kind", "piecewise_linear"}, {"knots", std::move(knots)}};
}

inline void from_json(const nlohmann::json& j, ParamTrajectory& p) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    const auto v = j.at("value").get<std::vector<double>>();
    p = ParamTrajectory::constant(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    return;
  }
  if (kind == "piecewise_linear") {
    std::vector<std::pair<double, Vector>> knots;
    for (const auto& k : j.at("knots")) {
      const auto v = k.at(1).get<std::vector<double>>();
      knots.emplace_back(k.at(0).get<double>(),
                         Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    p = ParamTrajectory::piecewise_linear(std::move(knots));
    return;
  }
  throw std::invalid_argument("ParamTrajectory: unknown kind '" + kind + "'");
}

/// Scalar offset path lambda(t): piecewise differentiable with isolated
/// jumps. A jump is written as two knots sharing a time; the stored value at
/// a jump is the larger one-sided limit (upper semi-continuity), which for
/// the admissible upward jumps is the right limit. Structural admissibility
/// (upward-only jumps) is checked by validate_structure, deliberately not at
/// construction, so verifiers can report the violation themselves.
class OffsetTrajectory {
 public:
  enum class Kind { constant, piecewise_linear, analytic };

  static OffsetTrajectory constant(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("OffsetTrajectory: non-finite value");
    OffsetTrajectory o;
    o.kind_ = Kind::constant;
    o.knots_ = {{0.0, v}};
    return o;
  }

  static OffsetTrajectory piecewise_linear(std::vector<std::pair<double, double>> knots) {
    if (knots.empty()) throw std::invalid_argument("OffsetTrajectory: need at least one knot");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!std::isfinite(knots[i].first) || !std::isfinite(knots[i].second))
        throw std::invalid_argument("OffsetTrajectory: non-finite knot");
      if (i > 0 && knots[i].first < knots[i - 1].first)
        throw std::invalid_argument("OffsetTrajectory: knot times must be non-decreasing");
      if (i > 1 && knots[i].first == knots[i - 1].first && knots[i - 1].first == knots[i - 2].first)
        throw std::invalid_argument("OffsetTrajectory: more than two knots share a time");
    }
    OffsetTrajectory o;
    o.kind_ = Kind::piecewise_linear;
    o.knots_ = std::move(knots);
    return o;
  }

  static OffsetTrajectory analytic(std::function<double(double)> value,
                                   std::function<double(double)> rate,
                                   std::vector<double> jumps = {}) {
    if (!value || !rate) throw std::invalid_argument("OffsetTrajectory: analytic kind needs value and rate");
    OffsetTrajectory o;
    o.kind_ = Kind::analytic;
    o.value_fn_ = std::move(value);
    o.rate_fn_ = std::move(rate);
    o.analytic_jumps_ = std::move(jumps);
    std::sort(o.analytic_jumps_.begin(), o.analytic_jumps_.end());
    return o;
  }

  /// Upper-semicontinuous value: the larger one-sided limit at a jump.
  double value(double t) const {
    if (!std::isfinite(t)) throw std::invalid_argument("OffsetTrajectory: non-finite time");
    if (kind_ == Kind::analytic) return value_fn_(t);
    if (t <= knots_.front().first) return knots_.front().second;
    if (t >= knots_.back().first) return knots_.back().second;
    // lo is the last knot with time <= t; with a duplicated time that is the
    // post-jump copy, which is also the correct left endpoint for
    // interpolation beyond the jump.
    const std::size_t hi = first_past(t);
    const std::size_t lo = hi - 1;
    if (knots_[lo].first == t) {
      double v = knots_[lo].second;
      if (lo > 0 && knots_[lo - 1].first == t) v = std::max(v, knots_[lo - 1].second);
      return v;
    }
    const auto& [t0, v0] = knots_[lo];
    const auto& [t1, v1] = knots_[hi];
    const double s = (t - t0) / (t1 - t0);
    return (1.0 - s) * v0 + s * v1;
  }

  /// Right derivative of the continuous piece at t; at a jump time this is
  /// the slope of the segment that starts there (the jump itself is handled
  /// by callers via is_jump).
  double rate(double t) const {
    if (!std::isfinite(t)) throw std::invalid_argument("OffsetTrajectory: non-finite time");
    if (kind_ == Kind::analytic) return rate_fn_(t);
    if (t < knots_.front().first || t >= knots_.back().first) return 0.0;
    const std::size_t hi = first_past(t);
    const std::size_t lo = hi - 1;
    return (knots_[hi].second - knots_[lo].second) / (knots_[hi].first - knots_[lo].first);
  }

  std::vector<double> jump_times() const {
    if (kind_ == Kind::analytic) return analytic_jumps_;
    std::vector<double> ts;
    for (std::size_t i = 1; i < knots_.size(); ++i)
      if (knots_[i].first == knots_[i - 1].first) ts.push_back(knots_[i].first);
    return ts;
  }

  bool is_jump(double t, double tol = 1e-12) const {
    for (const double tj : jump_times())
      if (std::abs(t - tj) <= tol) return true;
    return false;
  }

  std::vector<double> knot_times() const {
    std::vector<double> ts;
    ts.reserve(knots_.size());
    for (const auto& [t, v] : knots_) ts.push_back(t);
    return ts;
  }

  /// Admissibility of the discontinuities: every jump must go upward.
  /// Throws naming the offending time.
  void validate_structure() const {
    if (kind_ == Kind::analytic) return;  // jump directions are the caller's claim
    for (std::size_t i = 1; i < knots_.size(); ++i) {
      if (knots_[i].first == knots_[i - 1].first && !(knots_[i].second > knots_[i - 1].second))
        throw std::invalid_argument("OffsetTrajectory: non-upward jump at t=" +
                                    std::to_string(knots_[i].first));
    }
  }

  /// Range admissibility over [lo, hi]; exact via knots for the tabulated
  /// kinds, sampled on `grid` for analytic ones.
  void validate_range(double lo, double hi, const std::vector<double>& grid = {}) const {
    if (kind_ != Kind::analytic) {
      for (const auto& [t, v] : knots_)
        if (v < lo - 1e-12 || v > hi + 1e-12)
          throw std::invalid_argument("OffsetTrajectory: value " + std::to_string(v) + " at t=" +
                                      std::to_string(t) + " outside [" + std::to_string(lo) +
                                      ", " + std::to_string(hi) + "]");
      return;
    }
    for (const double t : grid) {
      const double v = value(t);
      if (v < lo - 1e-12 || v > hi + 1e-12)
        throw std::invalid_argument("OffsetTrajectory: value " + std::to_string(v) + " at t=" +
                                    std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                    std::to_string(hi) + "]");
    }
  }

  Kind kind() const { return kind_; }
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }

 private:
  // Index of the first knot with time strictly past t; t interior, so the
  // result is in [1, size-1].
  std::size_t first_past(double t) const {
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                     [](double v, const auto& k) { return v < k.first; });
    return static_cast<std::size_t>(std::distance(knots_.begin(), it));
  }

  Kind kind_ = Kind::constant;
  std::vector<std::pair<double, double>> knots_;
  std::function<double(double)> value_fn_, rate_fn_;
  std::vector<double> analytic_jumps_;
};

inline void to_json(nlohmann::json& j, const OffsetTrajectory& o) {
  if (o.kind() == OffsetTrajectory::Kind::analytic)
    throw std::invalid_argument("OffsetTrajectory: analytic offsets have no JSON form");
  if (o.kind() == OffsetTrajectory::Kind::constant) {
    j = {{"kind", "constant"}, {"value", o.knots().front().second}};
    return;
  }
  nlohmann::json knots = nlohmann::json::array();
  for (const auto& [t, v] : o.knots()) knots.push_back({t, v});
  j = {{"kind", "piecewise_linear"}, {"knots", std::move(knots)}};
  const auto jumps = o.jump_times();
  if (!jumps.empty()) j["jumps"] = jumps;
}

inline void from_json(const nlohmann::json& j, OffsetTrajectory& o) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    o = OffsetTrajectory::constant(j.at("value").get<double>());
    return;
  }
  if (kind == "piecewise_linear") {
    std::vector<std::pair<double, double>> knots;
    for (const auto& k : j.at("knots")) knots.emplace_back(k.at(0).get<double>(), k.at(1).get<double>());
    o = OffsetTrajectory::piecewise_linear(std::move(knots));
    if (j.contains("jumps")) {
      const auto declared = j.at("jumps").get<std::vector<double>>();
      const auto derived = o.jump_times();
      if (declared != derived)
        throw std::invalid_argument("OffsetTrajectory: declared jumps do not match duplicated knot times");
    }
    return;
  }
  throw std::invalid_argument("OffsetTrajectory: unknown kind '" + kind + "'");
}

/// Sorted union of time points, de-duplicated at 1e-12 resolution.
inline std::vector<double> merge_times(std::initializer_list<std::vector<double>> lists) {
  std::vector<double> all;
  for (const auto& l : lists) all.insert(all.end(), l.begin(), l.end());
  std::sort(all.begin(), all.end());
  std::vector<double> out;
  for (const double t : all)
    if (out.empty() || t - out.back() > 1e-12) out.push_back(t);
  return out;
}

}  // namespace tvcbf
