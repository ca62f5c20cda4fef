#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <tvcbf/dynamics.hpp>
#include <tvcbf/tv_cbf.hpp>

namespace tvcbf {

/// Half-space constraint on the input, feasible set {u : a' u >= b0}.
struct LinearConstraint {
  Vector a;
  double b0 = 0.0;

  void validate(int input_dim) const {
    if (a.size() != input_dim) throw std::invalid_argument("LinearConstraint: coefficient dimension mismatch");
    if (!all_finite(a) || !std::isfinite(b0)) throw std::invalid_argument("LinearConstraint: non-finite coefficients");
  }
};

enum class FilterStatus { optimal, clipped, infeasible_best_effort };

inline std::string to_string(FilterStatus s) {
  switch (s) {
    case FilterStatus::optimal: return "optimal";
    case FilterStatus::clipped: return "clipped";
    case FilterStatus::infeasible_best_effort: return "infeasible_best_effort";
  }
  return "unknown";
}

/// Filtered input plus solver diagnostics. `margin` is the worst constraint
/// slack a' u - b0 at the returned input (+inf with no constraints);
/// `slacks` holds one slack per constraint in input order, and
/// `active_constraints` the indices sitting on their boundary (or violated,
/// for best-effort results). The input always lies inside the box.
struct FilterResult {
  Vector u;
  FilterStatus status = FilterStatus::optimal;
  std::vector<int> active_constraints;
  double margin = std::numeric_limits<double>::infinity();
  std::vector<double> slacks;
};

namespace detail {

constexpr double kQpFeasTol = 1e-9;

inline bool lex_less(const Vector& a, const Vector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

inline bool same_vector(const Vector& a, const Vector& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

// Minimize ||u_F - r_F|| subject to rows of At being equalities; empty
// optional when the equality system is inconsistent.
inline std::optional<Vector> equality_projection(const Vector& r_free, const Matrix& At,
                                                 const Vector& bt) {
  if (At.rows() == 0) return r_free;
  const Vector d = bt - At * r_free;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(At);
  const Vector step = cod.solve(d);
  if ((At * step - d).lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + bt.lpNorm<Eigen::Infinity>()))
    return std::nullopt;  // forced-active set has no solution on this face
  return Vector(r_free + step);
}

}  // namespace detail

/// Exact minimizer of ||u - u_ref||^2 over the input box intersected with
/// half-space constraints, by enumerating every combination of box faces and
/// forced-active constraints (closed-form equality projection on each).
/// Sized for small systems: at most 4 inputs and 4 constraints. When the
/// feasible set is empty the same enumeration minimizes the total hinge
/// violation over the box instead and the status says so. Ties go to the
/// smaller reference distance, then lexicographically.
inline FilterResult solve_box_qp(const Vector& u_ref, const Box& box,
                                 const std::vector<LinearConstraint>& constraints) {
  const int m = static_cast<int>(box.dim());
  if (m < 1) throw std::invalid_argument("solve_box_qp: empty input box");
  if (m > 4) throw std::invalid_argument("solve_box_qp: supports at most 4 inputs");
  if (constraints.size() > 4) throw std::invalid_argument("solve_box_qp: supports at most 4 constraints");
  if (u_ref.size() != m || !all_finite(u_ref)) throw std::invalid_argument("solve_box_qp: bad reference input");
  for (const auto& c : constraints) c.validate(m);
  const int nc = static_cast<int>(constraints.size());

  int pow3 = 1;
  for (int i = 0; i < m; ++i) pow3 *= 3;

  std::optional<Vector> best;
  double best_obj = std::numeric_limits<double>::infinity();
  const auto consider = [&](const Vector& u) {
    for (int j = 0; j < m; ++j)
      if (u[j] < box.lo[j] - detail::kQpFeasTol || u[j] > box.hi[j] + detail::kQpFeasTol) return;
    Vector v = box.clamp(u);
    for (const auto& c : constraints)
      if (c.a.dot(v) - c.b0 < -detail::kQpFeasTol) return;
    // Exact objective comparison with a lexicographic tie-break. Exactness
    // matters: a feasible reference scores exactly zero, so no projection a
    // rounding error away can displace it and the bitwise-return contract
    // holds.
    const double obj = (v - u_ref).squaredNorm();
    if (!best || obj < best_obj || (obj == best_obj && detail::lex_less(v, *best))) {
      best = v;
      best_obj = obj;
    }
  };

  for (int face_code = 0; face_code < pow3; ++face_code) {
    // Per-coordinate digit: 0 free, 1 pinned at lo, 2 pinned at hi.
    std::vector<int> digit(m);
    int code = face_code;
    std::vector<int> free_idx;
    Vector u = Vector::Zero(m);
    for (int j = 0; j < m; ++j, code /= 3) {
      digit[j] = code % 3;
      if (digit[j] == 0)
        free_idx.push_back(j);
      else
        u[j] = digit[j] == 1 ? box.lo[j] : box.hi[j];
    }
    const int nf = static_cast<int>(free_idx.size());

    for (int sub = 0; sub < (1 << nc); ++sub) {
      std::vector<int> active;
      for (int i = 0; i < nc; ++i)
        if (sub & (1 << i)) active.push_back(i);

      if (nf == 0) {
        // Fully pinned: only exact equality survives the forced-active claim.
        bool consistent = true;
        for (const int i : active)
          if (std::abs(constraints[i].a.dot(u) - constraints[i].b0) >
              1e-9 * (1.0 + std::abs(constraints[i].b0)))
            consistent = false;
        if (consistent) consider(u);
        continue;
      }

      Vector r_free(nf);
      for (int j = 0; j < nf; ++j) r_free[j] = u_ref[free_idx[j]];
      Matrix At(static_cast<int>(active.size()), nf);
      Vector bt(static_cast<int>(active.size()));
      for (std::size_t k = 0; k < active.size(); ++k) {
        const auto& c = constraints[active[k]];
        double shift = c.b0;
        for (int j = 0; j < m; ++j)
          if (digit[j] != 0) shift -= c.a[j] * u[j];
        for (int j = 0; j < nf; ++j) At(static_cast<int>(k), j) = c.a[free_idx[j]];
        bt[static_cast<int>(k)] = shift;
      }
      const auto sol = detail::equality_projection(r_free, At, bt);
      if (!sol) continue;
      Vector cand = u;
      for (int j = 0; j < nf; ++j) cand[free_idx[j]] = (*sol)[j];
      consider(cand);
    }
  }

  FilterResult out;
  if (best) {
    out.u = *best;
    out.slacks.reserve(constraints.size());
    bool any_active = false;
    for (int i = 0; i < nc; ++i) {
      const double slack = constraints[i].a.dot(out.u) - constraints[i].b0;
      out.slacks.push_back(slack);
      out.margin = std::min(out.margin, slack);
      if (std::abs(slack) <= 1e-8 * (1.0 + std::abs(constraints[i].b0))) {
        out.active_constraints.push_back(i);
        any_active = true;
      }
    }
    // clipped marks results whose only deviation from the reference is the
    // input box itself; a result shaped by a barrier constraint is optimal.
    out.status = (detail::same_vector(out.u, u_ref) || any_active) ? FilterStatus::optimal
                                                                   : FilterStatus::clipped;
    return out;
  }

  // Empty feasible set: minimize the total hinge violation over the box.
  // The objective is piecewise linear, so its minimizing set is a face of
  // the arrangement of box faces and constraint boundaries. For every
  // subset of up to m such hyperplanes, project the reference onto their
  // intersection; this hits each face at its reference-nearest point, which
  // is exactly what the distance tie-break should select on a flat plateau.
  std::vector<std::pair<Vector, double>> planes;  // (normal, offset): n' u = o
  for (int j = 0; j < m; ++j) {
    Vector e = Vector::Zero(m);
    e[j] = 1.0;
    planes.emplace_back(e, box.lo[j]);
    planes.emplace_back(e, box.hi[j]);
  }
  for (const auto& c : constraints) planes.emplace_back(c.a, c.b0);

  const auto violation = [&](const Vector& u) {
    double v = 0.0;
    for (const auto& c : constraints) v += std::max(0.0, c.b0 - c.a.dot(u));
    return v;
  };

  std::optional<Vector> best_u;
  double best_v = std::numeric_limits<double>::infinity();
  double best_dist = std::numeric_limits<double>::infinity();
  const auto consider_violation = [&](const Vector& u) {
    for (int j = 0; j < m; ++j)
      if (u[j] < box.lo[j] - detail::kQpFeasTol || u[j] > box.hi[j] + detail::kQpFeasTol) return;
    const Vector v = box.clamp(u);
    const double viol = violation(v);
    const double dist = (v - u_ref).squaredNorm();
    if (!best_u || viol < best_v - 1e-12 ||
        (std::abs(viol - best_v) <= 1e-12 &&
         (dist < best_dist - 1e-12 ||
          (std::abs(dist - best_dist) <= 1e-12 && detail::lex_less(v, *best_u))))) {
      best_u = v;
      best_v = viol;
      best_dist = dist;
    }
  };

  const int np = static_cast<int>(planes.size());
  std::vector<int> pick;
  const std::function<void(int)> recurse = [&](int start) {
    {
      const int k = static_cast<int>(pick.size());
      Matrix A(k, m);
      Vector b(k);
      for (int j = 0; j < k; ++j) {
        A.row(j) = planes[pick[j]].first.transpose();
        b[j] = planes[pick[j]].second;
      }
      const auto proj = detail::equality_projection(u_ref, A, b);
      if (proj) consider_violation(*proj);
    }
    if (static_cast<int>(pick.size()) == m) return;
    for (int i = start; i < np; ++i) {
      pick.push_back(i);
      recurse(i + 1);
      pick.pop_back();
    }
  };
  recurse(0);
  consider_violation(box.clamp(u_ref));

  out.u = *best_u;
  out.status = FilterStatus::infeasible_best_effort;
  for (int i = 0; i < nc; ++i) {
    const double slack = constraints[i].a.dot(out.u) - constraints[i].b0;
    out.slacks.push_back(slack);
    out.margin = std::min(out.margin, slack);
    if (slack < -detail::kQpFeasTol) out.active_constraints.push_back(i);
  }
  return out;
}

/// Half-space form of the barrier's gradient condition at (t, x) for
/// input-affine dynamics: with w = J_x' grad b evaluated at the transformed
/// state, a' u >= b0 with a = G(x)' w and b0 = -alpha(b(D)) - w' g0(x).
/// Nondifferentiable points of the transformed field are perturbed away
/// deterministically before taking the gradient; the barrier value itself is
/// kept at the true state.
inline LinearConstraint linearize_cbf_constraint(const TimeVaryingCbf& B,
                                                 const AffineInputDynamics& dyn, double t,
                                                 const Vector& x) {
  if (t < 0.0) throw std::invalid_argument("linearize_cbf_constraint: time must be >= 0");
  const Vector p = B.p_traj.value(t);
  const Vector y = B.family.map(x, p);
  const double b_val = B.base.field(y);

  Vector y_grad = y;
  if (!B.base.field.differentiable_at(y)) {
    Rng rng(kDefaultSeed ^ 0x9e3779b97f4a7c15ull);
    y_grad = perturb_off_locus(B.base.field, y, rng);
  }
  const Vector grad = field_gradient(B.base.field, y_grad);
  const Matrix Jx = B.family.jac_x ? B.family.jac_x(x, p) : jacobians(B.family, x, p).first;
  const Vector w = Jx.transpose() * grad;
  if (!all_finite(w))
    throw std::runtime_error("linearize_cbf_constraint: gradient is not finite for '" + B.name + "'");

  LinearConstraint c;
  c.a = dyn.G(x).transpose() * w;
  c.b0 = -B.base.alpha(b_val) - w.dot(dyn.g0(x));
  if (!all_finite(c.a) || !std::isfinite(c.b0))
    throw std::runtime_error("linearize_cbf_constraint: non-finite constraint for '" + B.name + "'");
  return c;
}

struct FilterOptions {
  bool allow_uncertified = false;  // explicit opt-in for uncertified barriers
};

/// Joint safety filter: linearizes every barrier that is active at (t, x)
/// and solves the box QP against the reference input. Barriers must carry a
/// passing rate certificate unless explicitly allowed through.
inline FilterResult filter_input(const std::vector<TimeVaryingCbf>& cbfs,
                                 const AffineInputDynamics& dyn, double t, const Vector& x,
                                 const Vector& u_ref, const FilterOptions& opts = {}) {
  std::vector<LinearConstraint> constraints;
  constraints.reserve(cbfs.size());
  for (const auto& B : cbfs) {
    if (!B.certified && !opts.allow_uncertified)
      throw std::invalid_argument("filter_input: barrier '" + B.name +
                                  "' has no passing rate certificate (pass allow_uncertified to override)");
    if (!B.active(t, x)) continue;
    constraints.push_back(linearize_cbf_constraint(B, dyn, t, x));
  }
  return solve_box_qp(u_ref, dyn.input_box, constraints);
}

/// Sampled fallback filter for dynamics without an input-affine form: picks
/// the candidate closest to the reference among a per-axis grid, the box
/// vertices, and the clamped reference, feasibility judged by evaluating the
/// gradient condition at f(x, u) directly. Exactness is traded for
/// generality; the grid pitch bounds the suboptimality.
inline FilterResult filter_input_sampled(const std::vector<TimeVaryingCbf>& cbfs,
                                         const DynamicsModel& dyn, double t, const Vector& x,
                                         const Vector& u_ref, int grid_per_axis = 41,
                                         const FilterOptions& opts = {}) {
  if (grid_per_axis < 2) throw std::invalid_argument("filter_input_sampled: need at least 2 grid points per axis");
  const int m = dyn.input_dim;

  struct Row {
    Vector w;        // pullback gradient at (t, x)
    double alpha_b;  // alpha(b(D))
  };
  std::vector<Row> rows;
  for (const auto& B : cbfs) {
    if (!B.certified && !opts.allow_uncertified)
      throw std::invalid_argument("filter_input_sampled: barrier '" + B.name +
                                  "' has no passing rate certificate (pass allow_uncertified to override)");
    if (!B.active(t, x)) continue;
    const Vector p = B.p_traj.value(t);
    const Vector y = B.family.map(x, p);
    Vector y_grad = y;
    if (!B.base.field.differentiable_at(y)) {
      Rng rng(kDefaultSeed ^ 0x9e3779b97f4a7c15ull);
      y_grad = perturb_off_locus(B.base.field, y, rng);
    }
    const Matrix Jx = B.family.jac_x ? B.family.jac_x(x, p) : jacobians(B.family, x, p).first;
    rows.push_back({Vector(Jx.transpose() * field_gradient(B.base.field, y_grad)),
                    B.base.alpha(B.base.field(y))});
  }

  const auto worst_slack = [&](const Vector& u) {
    double s = std::numeric_limits<double>::infinity();
    const Vector xdot = dyn.rhs(x, u);
    for (const auto& row : rows) s = std::min(s, row.w.dot(xdot) + row.alpha_b);
    return s;
  };

  // Candidate set: full grid, box vertices, clamped reference.
  std::vector<Vector> candidates;
  const int total = [&] {
    int n = 1;
    for (int j = 0; j < m; ++j) n *= grid_per_axis;
    return n;
  }();
  for (int k = 0; k < total; ++k) {
    int rem = k;
    Vector u(m);
    for (int j = 0; j < m; ++j, rem /= grid_per_axis) {
      const int i = rem % grid_per_axis;
      const double s = static_cast<double>(i) / (grid_per_axis - 1);
      u[j] = (1.0 - s) * dyn.input_box.lo[j] + s * dyn.input_box.hi[j];
    }
    candidates.push_back(u);
  }
  if (m <= 20)
    for (const auto& v : dyn.input_box.vertices()) candidates.push_back(v);
  candidates.push_back(dyn.input_box.clamp(u_ref));

  std::optional<Vector> best_feas, best_any;
  double best_obj = std::numeric_limits<double>::infinity();
  double best_slack = -std::numeric_limits<double>::infinity();
  double slack_at_best = 0.0;
  for (const auto& u : candidates) {
    const double s = worst_slack(u);
    if (s >= 0.0) {
      // Exact objective comparison so a compliant in-box reference (objective
      // exactly zero) cannot lose to a grid point a rounding error away.
      const double obj = (u - u_ref).squaredNorm();
      if (!best_feas || obj < best_obj || (obj == best_obj && detail::lex_less(u, *best_feas))) {
        best_feas = u;
        best_obj = obj;
        slack_at_best = s;
      }
    }
    if (!best_any || s > best_slack + 1e-12 ||
        (std::abs(s - best_slack) <= 1e-12 && detail::lex_less(u, *best_any))) {
      best_any = u;
      best_slack = s;
    }
  }

  FilterResult out;
  if (best_feas) {
    out.u = *best_feas;
    out.margin = rows.empty() ? std::numeric_limits<double>::infinity() : slack_at_best;
    if (detail::same_vector(out.u, u_ref))
      out.status = FilterStatus::optimal;
    else if (detail::same_vector(out.u, dyn.input_box.clamp(u_ref)))
      out.status = FilterStatus::clipped;  // the box alone moved the reference
    else
      out.status = FilterStatus::optimal;
    return out;
  }
  out.u = *best_any;
  out.margin = best_slack;
  out.status = FilterStatus::infeasible_best_effort;
  return out;
}

}  // namespace tvcbf
