#pragma once

// Comparison functions: extended class-K functions built from sigmoids,
// linear maps, or monotone tables, plus the verifiers and the sup-decomposition
// composition used to merge two rate functions into one.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvcbf/core.hpp"

namespace tvcbf {

/// Saturating sigmoid through the origin: 2*c1*(1/(1+exp(-c2*xi)) - 0.5).
/// Odd, strictly increasing, range (-c1, c1).
inline double sigmoid_eval(double xi, double c1, double c2) {
  if (!std::isfinite(xi)) throw std::invalid_argument("sigmoid_eval: non-finite argument");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw std::invalid_argument("sigmoid_eval: c1, c2 must be > 0");
  return 2.0 * c1 * (1.0 / (1.0 + std::exp(-c2 * xi)) - 0.5);
}

enum class ConvexityTag { convex_on_nonneg, concave_on_nonneg, neither };

inline const char* to_string(ConvexityTag t) {
  switch (t) {
    case ConvexityTag::convex_on_nonneg: return "convex_on_nonneg";
    case ConvexityTag::concave_on_nonneg: return "concave_on_nonneg";
    default: return "neither";
  }
}

/// Extended class-K candidate: scalar, strictly increasing, zero at zero.
/// Three representations share one call interface; tabulated functions
/// interpolate linearly between knots and extend past the ends with the
/// boundary secant slope.
class ExtendedKeFn {
 public:
  enum class Kind { sigmoid, linear, tabulated };

  ExtendedKeFn() : kind_(Kind::linear), slope_(1.0) {}

  static ExtendedKeFn sigmoid(double c1, double c2) {
    if (!(c1 > 0.0) || !(c2 > 0.0))
      throw std::invalid_argument("ExtendedKeFn::sigmoid: c1, c2 must be > 0");
    ExtendedKeFn f;
    f.kind_ = Kind::sigmoid;
    f.c1_ = c1;
    f.c2_ = c2;
    return f;
  }

  static ExtendedKeFn linear(double slope) {
    if (!(slope > 0.0)) throw std::invalid_argument("ExtendedKeFn::linear: slope must be > 0");
    ExtendedKeFn f;
    f.kind_ = Kind::linear;
    f.slope_ = slope;
    return f;
  }

  static ExtendedKeFn tabulated(std::vector<std::pair<double, double>> knots) {
    if (knots.size() < 2) throw std::invalid_argument("ExtendedKeFn::tabulated: need >= 2 knots");
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      if (!(knots[i].first < knots[i + 1].first))
        throw std::invalid_argument("ExtendedKeFn::tabulated: knot abscissae must strictly increase");
      if (!(knots[i].second < knots[i + 1].second))
        throw std::invalid_argument("ExtendedKeFn::tabulated: knot values must strictly increase");
    }
    ExtendedKeFn f;
    f.kind_ = Kind::tabulated;
    f.knots_ = std::move(knots);
    return f;
  }

  double operator()(double xi) const {
    if (!std::isfinite(xi)) throw std::invalid_argument("ExtendedKeFn: non-finite argument");
    switch (kind_) {
      case Kind::sigmoid: return sigmoid_eval(xi, c1_, c2_);
      case Kind::linear: return slope_ * xi;
      case Kind::tabulated: return eval_tabulated(xi);
    }
    return 0.0;
  }

  /// Pointwise derivative; tabulated functions return the slope of the
  /// containing segment (right segment at interior knots).
  double derivative(double xi) const {
    if (!std::isfinite(xi)) throw std::invalid_argument("ExtendedKeFn: non-finite argument");
    switch (kind_) {
      case Kind::sigmoid: {
        const double l = 1.0 / (1.0 + std::exp(-c2_ * xi));
        return 2.0 * c1_ * c2_ * l * (1.0 - l);
      }
      case Kind::linear: return slope_;
      case Kind::tabulated: {
        const auto& k = knots_;
        std::size_t i = 0;
        if (xi >= k[k.size() - 2].first) {
          i = k.size() - 2;
        } else if (xi > k.front().first) {
          i = static_cast<std::size_t>(
              std::distance(k.begin(),
                            std::upper_bound(k.begin(), k.end(), xi,
                                             [](double v, const std::pair<double, double>& kn) {
                                               return v < kn.first;
                                             })) -
              1);
        }
        return (k[i + 1].second - k[i].second) / (k[i + 1].first - k[i].first);
      }
    }
    return 0.0;
  }

  Kind kind() const { return kind_; }
  double c1() const { return c1_; }
  double c2() const { return c2_; }
  double slope() const { return slope_; }
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }

  /// Optional interval the function is intended to be used on (metadata only).
  std::optional<std::pair<double, double>> domain_hint;

 private:
  double eval_tabulated(double xi) const {
    const auto& k = knots_;
    if (xi <= k.front().first) {
      const double sl = (k[1].second - k[0].second) / (k[1].first - k[0].first);
      return k.front().second + sl * (xi - k.front().first);
    }
    if (xi >= k.back().first) {
      const std::size_t n = k.size();
      const double sl =
          (k[n - 1].second - k[n - 2].second) / (k[n - 1].first - k[n - 2].first);
      return k.back().second + sl * (xi - k.back().first);
    }
    auto it = std::upper_bound(k.begin(), k.end(), xi,
                               [](double v, const std::pair<double, double>& kn) {
                                 return v < kn.first;
                               });
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    const double t = (xi - lo.first) / (hi.first - lo.first);
    return lo.second + t * (hi.second - lo.second);
  }

  Kind kind_;
  double c1_ = 1.0;
  double c2_ = 1.0;
  double slope_ = 1.0;
  std::vector<std::pair<double, double>> knots_;
};

inline void to_json(nlohmann::json& j, const ExtendedKeFn& f) {
  switch (f.kind()) {
    case ExtendedKeFn::Kind::sigmoid:
      j = {{"kind", "sigmoid"}, {"c1", f.c1()}, {"c2", f.c2()}};
      break;
    case ExtendedKeFn::Kind::linear:
      j = {{"kind", "linear"}, {"slope", f.slope()}};
      break;
    case ExtendedKeFn::Kind::tabulated: {
      nlohmann::json knots = nlohmann::json::array();
      for (const auto& [x, v] : f.knots()) knots.push_back({x, v});
      j = {{"kind", "tabulated"}, {"knots", std::move(knots)}};
      break;
    }
  }
}

inline void from_json(const nlohmann::json& j, ExtendedKeFn& f) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "sigmoid") {
    f = ExtendedKeFn::sigmoid(j.at("c1").get<double>(), j.at("c2").get<double>());
  } else if (kind == "linear") {
    f = ExtendedKeFn::linear(j.at("slope").get<double>());
  } else if (kind == "tabulated") {
    std::vector<std::pair<double, double>> knots;
    for (const auto& kn : j.at("knots"))
      knots.emplace_back(kn.at(0).get<double>(), kn.at(1).get<double>());
    f = ExtendedKeFn::tabulated(std::move(knots));
  } else {
    throw std::invalid_argument("ExtendedKeFn: unknown kind '" + kind + "'");
  }
}

struct ClassKeReport {
  bool pass = false;
  bool increasing = false;
  bool zero_at_zero = false;
  double value_at_zero = 0.0;
  // First grid pair violating strict monotonicity, if any.
  double violation_x0 = 0.0;
  double violation_x1 = 0.0;
  std::string message;
};

/// Grid check for extended class-K: strictly increasing on the grid and
/// |f(0)| <= 1e-12. The grid must be strictly increasing and contain 0.
/// Accepts any scalar callable so ill-formed candidates can be rejected.
inline ClassKeReport verify_class_ke(const std::function<double(double)>& f,
                                     const std::vector<double>& grid) {
  if (grid.size() < 2) throw std::invalid_argument("verify_class_ke: grid needs >= 2 points");
  bool has_zero = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i + 1 < grid.size() && !(grid[i] < grid[i + 1]))
      throw std::invalid_argument("verify_class_ke: grid must be strictly increasing");
    if (grid[i] == 0.0) has_zero = true;
  }
  if (!has_zero) throw std::invalid_argument("verify_class_ke: grid must contain 0");

  ClassKeReport rep;
  rep.increasing = true;
  double prev = f(grid[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double cur = f(grid[i]);
    if (!(cur > prev)) {
      rep.increasing = false;
      rep.violation_x0 = grid[i - 1];
      rep.violation_x1 = grid[i];
      rep.message = "not strictly increasing between " + std::to_string(grid[i - 1]) + " and " +
                    std::to_string(grid[i]);
      break;
    }
    prev = cur;
  }
  rep.value_at_zero = f(0.0);
  rep.zero_at_zero = std::abs(rep.value_at_zero) <= 1e-12;
  if (!rep.zero_at_zero && rep.message.empty())
    rep.message = "f(0) = " + std::to_string(rep.value_at_zero) + " exceeds 1e-12";
  rep.pass = rep.increasing && rep.zero_at_zero;
  if (rep.pass) rep.message = "ok";
  return rep;
}

/// Sign pattern of second divided differences with tolerance 1e-9.
/// Samples within tolerance of zero count toward the majority sign, so
/// near-linear grids classify as convex (harmless: linear is both).
inline ConvexityTag classify_convexity(const std::function<double(double)>& f,
                                       const std::vector<double>& grid) {
  if (grid.size() < 3) throw std::invalid_argument("classify_convexity: grid needs >= 3 points");
  constexpr double kTol = 1e-9;
  std::size_t pos = 0, neg = 0;
  std::vector<double> vals(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) vals[i] = f(grid[i]);
  for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
    const double dl = (vals[i] - vals[i - 1]) / (grid[i] - grid[i - 1]);
    const double dr = (vals[i + 1] - vals[i]) / (grid[i + 1] - grid[i]);
    const double d2 = (dr - dl) / (grid[i + 1] - grid[i - 1]);
    if (d2 > kTol) ++pos;
    else if (d2 < -kTol) ++neg;
  }
  if (pos > 0 && neg > 0) return ConvexityTag::neither;
  if (neg > 0) return ConvexityTag::concave_on_nonneg;
  return ConvexityTag::convex_on_nonneg;
}

struct AlphaPairReport {
  bool pass = false;
  ClassKeReport alpha_report;    // alpha as class-Ke on [-Lambda, Lambda]
  ClassKeReport alpha_p_report;  // alpha_p as class-K on [0, Lambda]
  ConvexityTag alpha_p_convexity = ConvexityTag::neither;
  bool domination = false;  // alpha(-xi) <= -alpha_p(xi) on [0, Lambda]
  double worst_xi = 0.0;
  double worst_gap = -std::numeric_limits<double>::infinity();  // max alpha(-xi) + alpha_p(xi)
  std::string message;
};

/// Premise check for the rate function alpha_p against the barrier's alpha:
/// alpha_p class-K on [0, Lambda], globally convex or concave there, and
/// alpha(-xi) <= -alpha_p(xi) + 1e-12 for xi in [0, Lambda].
inline AlphaPairReport verify_alpha_p(const ExtendedKeFn& alpha, const ExtendedKeFn& alpha_p,
                                      double Lambda, int grid_size = 1001) {
  if (!(Lambda > 0.0)) throw std::invalid_argument("verify_alpha_p: Lambda must be > 0");
  if (grid_size < 3) throw std::invalid_argument("verify_alpha_p: grid_size too small");

  AlphaPairReport rep;
  rep.alpha_report = verify_class_ke(alpha, uniform_grid(-Lambda, Lambda, grid_size));
  rep.alpha_p_report = verify_class_ke(alpha_p, uniform_grid(0.0, Lambda, grid_size));

  const auto xi_grid = uniform_grid(0.0, Lambda, grid_size);
  rep.alpha_p_convexity = classify_convexity(alpha_p, xi_grid);

  rep.domination = true;
  for (double xi : xi_grid) {
    const double gap = alpha(-xi) + alpha_p(xi);
    if (gap > rep.worst_gap) {
      rep.worst_gap = gap;
      rep.worst_xi = xi;
    }
    if (gap > 1e-12) rep.domination = false;
  }

  rep.pass = rep.alpha_report.pass && rep.alpha_p_report.pass && rep.domination &&
             rep.alpha_p_convexity != ConvexityTag::neither;
  if (!rep.pass) {
    if (!rep.alpha_report.pass) rep.message = "alpha: " + rep.alpha_report.message;
    else if (!rep.alpha_p_report.pass) rep.message = "alpha_p: " + rep.alpha_p_report.message;
    else if (!rep.domination)
      rep.message = "alpha(-xi) <= -alpha_p(xi) fails at xi = " + std::to_string(rep.worst_xi) +
                    " (gap " + std::to_string(rep.worst_gap) + ")";
    else rep.message = "alpha_p is neither convex nor concave on [0, Lambda]";
  } else {
    rep.message = "ok";
  }
  return rep;
}

/// Largest admissible parameter rate for a fixed offset: c_alpha = alpha_p(lambda).
/// lambda must lie in [0, Lambda].
inline double c_alpha(const ExtendedKeFn& alpha_p, double lambda,
                      double Lambda = std::numeric_limits<double>::infinity()) {
  if (!std::isfinite(lambda) || lambda < 0.0 || lambda > Lambda)
    throw std::invalid_argument("c_alpha: lambda outside [0, Lambda]");
  return alpha_p(lambda);
}

/// Sup-decomposition composition
///   beta(s) = sup { alpha(x1) + alpha_p(x2) : x1 + x2 = s, x2 in [0, A], x1 in [-A, inf) }
/// returned as a tabulated ExtendedKeFn on [-A, s_max].
///
/// Construction: x2 runs over a uniform grid with `decomposition_grid` points;
/// the knot grid refines that spacing so every alpha(s - x2) argument lands on a
/// precomputed lattice and the piecewise-linear interpolation sag stays below
/// ~1e-9 for desk-scale curvatures (spacing <= knot_spacing). The result
/// dominates alpha(x1) + alpha_p(x2) for any real x1 and any x2 on the
/// construction grid; between x2 grid points coverage is only up to the grid
/// resolution times the slope of alpha_p.
inline ExtendedKeFn compose_beta(const ExtendedKeFn& alpha, const ExtendedKeFn& alpha_p, double A,
                                 int decomposition_grid = 1001,
                                 double s_max = std::numeric_limits<double>::quiet_NaN(),
                                 double knot_spacing = 2e-5) {
  if (!(A > 0.0)) throw std::invalid_argument("compose_beta: A must be > 0");
  if (decomposition_grid < 2 || decomposition_grid > 200000)
    throw std::invalid_argument("compose_beta: decomposition_grid out of range");
  if (std::isnan(s_max)) s_max = A + 2.0;
  if (!(s_max > 0.0)) throw std::invalid_argument("compose_beta: s_max must be > 0");
  if (!(knot_spacing > 0.0)) throw std::invalid_argument("compose_beta: knot_spacing must be > 0");

  const AlphaPairReport premise = verify_alpha_p(alpha, alpha_p, A);
  if (!premise.pass)
    throw std::invalid_argument("compose_beta: verify_alpha_p failed: " + premise.message);

  const int n2 = decomposition_grid;
  const double dx2 = A / (n2 - 1);
  const long m = std::max<long>(1, static_cast<long>(std::ceil(dx2 / knot_spacing)));
  const double dk = dx2 / static_cast<double>(m);  // knot spacing

  const long k0 = static_cast<long>(n2 - 1) * m;             // index of s = 0
  const long kend = k0 + static_cast<long>(std::ceil(s_max / dk));  // last knot index
  const long n_knots = kend + 1;

  // alpha on the lattice idx*dk for idx in [-2*k0, kend - k0]; every
  // s_k - x2_j lands here because x2_j = (j*m)*dk exactly.
  const long pre_lo = -2 * k0;
  std::vector<double> alpha_pre(static_cast<std::size_t>(kend - k0 - pre_lo + 1));
  for (long idx = pre_lo; idx <= kend - k0; ++idx)
    alpha_pre[static_cast<std::size_t>(idx - pre_lo)] = alpha(static_cast<double>(idx) * dk);

  std::vector<double> ap(static_cast<std::size_t>(n2));
  for (int j = 0; j < n2; ++j)
    ap[static_cast<std::size_t>(j)] = alpha_p(static_cast<double>(j) * m * dk);

  std::vector<double> env(static_cast<std::size_t>(n_knots),
                          -std::numeric_limits<double>::infinity());
  for (int j = 0; j < n2; ++j) {
    const double apj = ap[static_cast<std::size_t>(j)];
    const long base = -k0 - static_cast<long>(j) * m - pre_lo;
    double* envp = env.data();
    const double* prep = alpha_pre.data() + base;
    for (long k = 0; k < n_knots; ++k) {
      const double v = prep[k] + apj;
      if (v > envp[k]) envp[k] = v;
    }
  }

  // The x1 = 0, x2 = 0 decomposition pins beta(0) = 0 up to round-off.
  if (std::abs(env[static_cast<std::size_t>(k0)]) > 5e-12)
    throw std::runtime_error("compose_beta: envelope at 0 deviates from 0 beyond tolerance");
  env[static_cast<std::size_t>(k0)] = 0.0;

  // Enforce strictly increasing values (round-off can flatten saturated tails);
  // only ever raises a knot, so domination is preserved.
  for (long k = 1; k < n_knots; ++k) {
    auto& cur = env[static_cast<std::size_t>(k)];
    const double prev = env[static_cast<std::size_t>(k - 1)];
    if (!(cur > prev)) cur = std::nextafter(prev, std::numeric_limits<double>::infinity());
  }

  std::vector<std::pair<double, double>> knots(static_cast<std::size_t>(n_knots));
  for (long k = 0; k < n_knots; ++k)
    knots[static_cast<std::size_t>(k)] = {static_cast<double>(k - k0) * dk,
                                          env[static_cast<std::size_t>(k)]};
  ExtendedKeFn beta = ExtendedKeFn::tabulated(std::move(knots));
  beta.domain_hint = std::make_pair(-A, s_max);
  return beta;
}

}  // namespace tvcbf
