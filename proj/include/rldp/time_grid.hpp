#pragma once

// Logarithmic interpolation grid t_0 = 0, t_k = sum_{j=1..k} 1/(j+1), and the
// step-index functions m(t), a(t), psi_e(t) built on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <vector>

#include "rldp/error.hpp"

namespace rldp {

inline constexpr double kEulerGamma = 0.57721566490153286061;

class TimeGrid {
 public:
  /// Nodes t_0 .. t_{last}.
  explicit TimeGrid(std::size_t last) : t_(last + 1) {
    t_[0] = 0.0;
    double sum = 0.0;
    double comp = 0.0;  // Kahan compensation
    for (std::size_t k = 1; k <= last; ++k) {
      const double y = 1.0 / static_cast<double>(k + 1) - comp;
      const double s = sum + y;
      comp = (s - sum) - y;
      sum = s;
      t_[k] = sum;
    }
  }

  std::size_t last() const { return t_.size() - 1; }
  double operator[](std::size_t k) const { return t_[k]; }
  const std::vector<double>& nodes() const { return t_; }

  /// m(t) = sup{k : t_k <= t}; defined for 0 <= t < t_last.
  std::size_t index_at(double t) const {
    if (!(t >= 0.0)) throw PreconditionError("TimeGrid: negative time");
    if (t >= t_.back()) {
      std::ostringstream os;
      os.precision(17);
      os << "TimeGrid: time " << t << " beyond the last node t_" << last() << " = " << t_.back();
      throw PreconditionError(os.str());
    }
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    return static_cast<std::size_t>(it - t_.begin()) - 1;
  }

 private:
  std::vector<double> t_;
};

struct GridPoint {
  std::size_t m;  // sup{k : t_k <= t}
  double a;       // t_{m(t)}
  std::size_t psi_e;  // m(t) + 2
};

inline GridPoint grid_functions(double t, const TimeGrid& grid) {
  const std::size_t m = grid.index_at(t);
  return {m, grid[m], m + 2};
}

/// Convenience overload: builds a grid with nodes up to t_{n+1}, which covers
/// every t in [0, t_n].
inline GridPoint grid_functions(double t, std::size_t n) { return grid_functions(t, TimeGrid(n + 1)); }

}  // namespace rldp
