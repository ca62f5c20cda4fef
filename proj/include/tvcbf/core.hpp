#pragma once

// Shared small types: dense vector aliases, axis-aligned boxes used as input
// and sampling domains, seeded RNG helpers, and uniform grids.

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvcbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

constexpr unsigned kDefaultSeed = 20240815u;

/// Axis-aligned box {x : lo <= x <= hi}.
struct Box {
  Vector lo;
  Vector hi;

  Box() = default;
  Box(Vector lo_, Vector hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("Box: lo/hi dimension mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i])) throw std::invalid_argument("Box: lo > hi");
  }

  /// Cube [-half, half]^dim.
  static Box centered(int dim, double half) {
    return Box(Vector::Constant(dim, -half), Vector::Constant(dim, half));
  }

  int dim() const { return static_cast<int>(lo.size()); }

  bool contains(const Vector& x, double tol = 0.0) const {
    if (x.size() != lo.size()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
  }

  Vector clamp(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  Vector sample(Rng& rng) const {
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (lo[i] == hi[i]) {
        x[i] = lo[i];
      } else {
        std::uniform_real_distribution<double> dist(lo[i], hi[i]);
        x[i] = dist(rng);
      }
    }
    return x;
  }

  /// All 2^dim corner points. Intended for small input boxes (dim <= 20).
  std::vector<Vector> vertices() const {
    const int n = dim();
    if (n > 20) throw std::invalid_argument("Box::vertices: dimension too large");
    std::vector<Vector> out;
    out.reserve(std::size_t{1} << n);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
      Vector v(n);
      for (int i = 0; i < n; ++i) v[i] = (mask >> i) & 1 ? hi[i] : lo[i];
      out.push_back(std::move(v));
    }
    return out;
  }
};

/// n >= 2 evenly spaced points on [lo, hi]. If the interval straddles zero and
/// a grid point lands within round-off of it, that point is snapped to exactly
/// 0.0 so the grid "contains zero" in the sense the verifiers require.
inline std::vector<double> uniform_grid(double lo, double hi, int n) {
  if (n < 2) throw std::invalid_argument("uniform_grid: need at least 2 points");
  if (!(lo < hi)) throw std::invalid_argument("uniform_grid: lo must be < hi");
  std::vector<double> g(static_cast<std::size_t>(n));
  const double step = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + i * step;
  g.back() = hi;
  if (lo < 0.0 && hi > 0.0) {
    const double idx = -lo / step;
    const double rounded = std::round(idx);
    if (std::abs(idx - rounded) < 1e-9 && rounded >= 0 && rounded < n)
      g[static_cast<std::size_t>(rounded)] = 0.0;
  }
  return g;
}

inline double sq(double v) { return v * v; }

/// True when every entry of x is finite.
inline bool all_finite(const Vector& x) { return x.allFinite(); }

inline void to_json(nlohmann::json& j, const Box& box) {
  j = nlohmann::json{{"lo", std::vector<double>(box.lo.data(), box.lo.data() + box.lo.size())},
                     {"hi", std::vector<double>(box.hi.data(), box.hi.data() + box.hi.size())}};
}

inline void from_json(const nlohmann::json& j, Box& box) {
  const auto lo = j.at("lo").get<std::vector<double>>();
  const auto hi = j.at("hi").get<std::vector<double>>();
  box = Box(Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size())),
            Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size())));
}

}  // namespace tvcbf
