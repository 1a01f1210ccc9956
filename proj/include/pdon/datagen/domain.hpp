#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdon/error.hpp"
#include "pdon/random.hpp"

namespace pdon::datagen {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Product over dimensions of a union of disjoint closed intervals, together
/// with the global bounds used for normalization and clipping.
class ParameterDomain {
 public:
  ParameterDomain() = default;

  ParameterDomain(std::vector<std::vector<Interval>> intervals, std::vector<Interval> bounds)
      : intervals_(std::move(intervals)), bounds_(std::move(bounds)) {
    if (intervals_.empty()) throw UserError("parameter domain needs at least one dimension");
    if (intervals_.size() != bounds_.size()) throw UserError("parameter domain: bounds/intervals dimension mismatch");
    for (std::size_t d = 0; d < intervals_.size(); ++d) {
      auto& iv = intervals_[d];
      if (iv.empty()) throw UserError("parameter domain: dimension " + std::to_string(d) + " is empty");
      std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
      if (!(bounds_[d].hi > bounds_[d].lo)) throw UserError("parameter domain: degenerate global bounds");
      for (std::size_t k = 0; k < iv.size(); ++k) {
        if (!(iv[k].hi > iv[k].lo)) throw UserError("parameter domain: empty interval");
        if (iv[k].lo < bounds_[d].lo || iv[k].hi > bounds_[d].hi) {
          throw UserError("parameter domain: interval outside global bounds");
        }
        if (k > 0 && iv[k].lo <= iv[k - 1].hi) throw UserError("parameter domain: overlapping intervals");
      }
    }
  }

  /// Single box where the admissible set equals the global bounds.
  static ParameterDomain box(std::vector<Interval> bounds) {
    std::vector<std::vector<Interval>> iv;
    for (const auto& b : bounds) iv.push_back({b});
    return ParameterDomain(std::move(iv), std::move(bounds));
  }

  std::size_t dimension() const { return intervals_.size(); }
  const std::vector<Interval>& intervals(std::size_t d) const { return intervals_.at(d); }
  const Interval& bounds(std::size_t d) const { return bounds_.at(d); }
  std::vector<double> lower() const {
    std::vector<double> v;
    for (const auto& b : bounds_) v.push_back(b.lo);
    return v;
  }
  std::vector<double> upper() const {
    std::vector<double> v;
    for (const auto& b : bounds_) v.push_back(b.hi);
    return v;
  }

  double measure(std::size_t d) const {
    double s = 0.0;
    for (const auto& iv : intervals_.at(d)) s += iv.length();
    return s;
  }

  bool contains(std::span<const double> point) const {
    if (point.size() != dimension()) return false;
    for (std::size_t d = 0; d < dimension(); ++d) {
      bool hit = false;
      for (const auto& iv : intervals_[d]) hit = hit || iv.contains(point[d]);
      if (!hit) return false;
    }
    return true;
  }

  bool within_bounds(std::span<const double> point) const {
    if (point.size() != dimension()) return false;
    for (std::size_t d = 0; d < dimension(); ++d) {
      if (!bounds_[d].contains(point[d])) return false;
    }
    return true;
  }

  /// Inverse CDF of the uniform distribution on the union of intervals in dimension d.
  double quantile(std::size_t d, double u) const {
    const auto& iv = intervals_.at(d);
    double s = std::clamp(u, 0.0, 1.0) * measure(d);
    for (const auto& i : iv) {
      if (s <= i.length()) return i.lo + s;
      s -= i.length();
    }
    return iv.back().hi;
  }

  friend bool operator==(const ParameterDomain&, const ParameterDomain&) = default;

 private:
  std::vector<std::vector<Interval>> intervals_;
  std::vector<Interval> bounds_;
};

/// Latin hypercube sample: in every dimension the n points occupy the n
/// equal-probability strata of the (union) domain exactly once.
inline std::vector<std::vector<double>> lhs_sample(std::size_t n, const ParameterDomain& domain, std::uint64_t seed) {
  if (n == 0) throw UserError("lhs_sample: n must be at least 1");
  if (domain.dimension() == 0) throw UserError("lhs_sample: empty domain");
  Rng rng(seed);
  std::vector<std::vector<double>> points(n, std::vector<double>(domain.dimension()));
  std::vector<std::size_t> order(n);
  for (std::size_t d = 0; d < domain.dimension(); ++d) {
    std::vector<double> strata(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double u = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(n);
      strata[k] = domain.quantile(d, u);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < n; ++i) points[i][d] = strata[order[i]];
  }
  return points;
}

enum class CaseId { c1a, c1b, c1c, c1d };
enum class Role { train, test };

inline std::string_view to_string(CaseId c) {
  switch (c) {
    case CaseId::c1a: return "1a";
    case CaseId::c1b: return "1b";
    case CaseId::c1c: return "1c";
    case CaseId::c1d: return "1d";
  }
  return "?";
}

inline CaseId case_from_string(std::string_view s) {
  if (s == "1a") return CaseId::c1a;
  if (s == "1b") return CaseId::c1b;
  if (s == "1c") return CaseId::c1c;
  if (s == "1d") return CaseId::c1d;
  throw UserError("unknown case '" + std::string(s) + "' (expected 1a, 1b, 1c or 1d)");
}

inline std::string_view to_string(Role r) { return r == Role::train ? "train" : "test"; }

inline Role role_from_string(std::string_view s) {
  if (s == "train") return Role::train;
  if (s == "test") return Role::test;
  throw UserError("unknown role '" + std::string(s) + "' (expected train or test)");
}

/// Stiffness × damping ranges of the Duffing cases. Every case shares the
/// global box [10, 100] × [1, 10], which is also the test domain.
inline ParameterDomain case_domain(CaseId c, Role role) {
  const std::vector<Interval> global{{10.0, 100.0}, {1.0, 10.0}};
  if (role == Role::test) return ParameterDomain::box(global);
  switch (c) {
    case CaseId::c1a: return ParameterDomain::box(global);
    case CaseId::c1b:
      return ParameterDomain({{{10.0, 40.0}, {70.0, 100.0}}, {{1.0, 4.0}, {7.0, 10.0}}}, global);
    case CaseId::c1c: return ParameterDomain({{{40.0, 70.0}}, {{4.0, 7.0}}}, global);
    case CaseId::c1d: return ParameterDomain({{{25.0, 85.0}}, {{2.5, 8.5}}}, global);
  }
  throw UserError("unknown case");
}

}  // namespace pdon::datagen
