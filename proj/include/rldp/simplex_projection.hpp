#pragma once

// Projections onto the probability simplex and onto the simplex with a
// lower floor on every entry.

#include <algorithm>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "rldp/error.hpp"

namespace rldp {

inline constexpr double kInfinityProjection = std::numeric_limits<double>::infinity();

/// Sort-and-threshold projection onto {x >= 0, sum x = 1}, in place.
inline void project_simplex(std::span<double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0;
  double tau = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (s[i] - t > 0.0) tau = t;
  }
  for (double& x : v) x = std::max(x - tau, 0.0);
}

/// Projection onto {x >= floor, sum x = 1}, in place. Returns the number of
/// entries strictly above the floor.
inline std::size_t project_floored_simplex(std::span<double> v, double floor) {
  const double mass = 1.0 - floor * static_cast<double>(v.size());
  if (mass < 0.0) throw PreconditionError("project_floored_simplex: floor too large");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0;
  double tau = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - floor * static_cast<double>(i + 1) - mass) / static_cast<double>(i + 1);
    if (s[i] - floor - t > 0.0) tau = t;
  }
  std::size_t support = 0;
  for (double& x : v) {
    const double above = x - floor - tau;
    if (above > 0.0) ++support;
    x = floor + std::max(above, 0.0);
  }
  return support;
}

/// Projection onto {x >= floor, sum x = 1} in the weighted norm
/// sum_i (x_i - v_i)^2 / scale_i, in place. The solution is
/// max(floor, v - scale * tau) for the shift tau making the sum 1.
inline void project_floored_simplex(std::span<double> v, std::span<const double> scale, double floor) {
  const std::size_t d = v.size();
  if (floor * static_cast<double>(d) > 1.0) throw PreconditionError("project_floored_simplex: floor too large");
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  // Entry i is above the floor iff tau < (v_i - floor) / scale_i.
  auto breakpoint = [&](std::size_t i) { return (v[i] - floor) / scale[i]; };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return breakpoint(a) > breakpoint(b); });
  double sum_v = 0.0, sum_s = 0.0;
  double tau = breakpoint(order[0]);
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t i = order[k];
    sum_v += v[i];
    sum_s += scale[i];
    const double t = (sum_v - 1.0 + floor * static_cast<double>(d - k - 1)) / sum_s;
    const double next = k + 1 < d ? breakpoint(order[k + 1]) : -kInfinityProjection;
    if (t >= next) {
      tau = t;
      break;
    }
  }
  for (std::size_t i = 0; i < d; ++i) v[i] = std::max(floor, v[i] - scale[i] * tau);
}

}  // namespace rldp
