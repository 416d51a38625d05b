#pragma once

// Numerical evaluation of the rate function
//
//   I(m) = inf_eta  int_0^inf e^{-s} R(eta(s) || M(s) A) ds,   M' = M - eta, M(0) = m,
//
// over controls that keep M in the simplex. The horizon is truncated at T and
// eta is piecewise constant on J intervals; the dynamics are integrated
// exactly on each interval. The truncated optimum J_T satisfies
// J_T <= I(m) <= J_T + e^{-T} log(1/delta0), which is reported as a bracket.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <span>
#include <sstream>
#include <vector>

#include "rldp/csv.hpp"
#include "rldp/error.hpp"
#include "rldp/measures.hpp"
#include "rldp/parallel.hpp"
#include "rldp/simplex_projection.hpp"

namespace rldp {

/// eta constant on [j*Delta, (j+1)*Delta), Delta = T/J; row-major J x d.
class PiecewiseControl {
 public:
  PiecewiseControl() = default;
  PiecewiseControl(double horizon, std::size_t d, std::vector<double> values)
      : horizon_(horizon), d_(d), values_(std::move(values)) {
    if (!(horizon_ > 0.0)) throw PreconditionError("PiecewiseControl: horizon must be > 0");
    if (d_ == 0 || values_.empty() || values_.size() % d_ != 0)
      throw PreconditionError("PiecewiseControl: values must be a nonempty J x d array");
    for (std::size_t j = 0; j < intervals(); ++j) {
      std::vector<double> r(values_.begin() + static_cast<std::ptrdiff_t>(j * d_),
                            values_.begin() + static_cast<std::ptrdiff_t>((j + 1) * d_));
      snap_to_simplex(r, "PiecewiseControl row");
      std::copy(r.begin(), r.end(), values_.begin() + static_cast<std::ptrdiff_t>(j * d_));
    }
  }

  static PiecewiseControl constant(double horizon, std::size_t intervals, const ProbVec& value) {
    std::vector<double> v;
    v.reserve(intervals * value.size());
    for (std::size_t j = 0; j < intervals; ++j) v.insert(v.end(), value.begin(), value.end());
    return PiecewiseControl(horizon, value.size(), std::move(v));
  }

  double horizon() const { return horizon_; }
  std::size_t dim() const { return d_; }
  std::size_t intervals() const { return values_.size() / d_; }
  double step() const { return horizon_ / static_cast<double>(intervals()); }
  std::span<const double> row(std::size_t j) const { return {values_.data() + j * d_, d_}; }
  std::span<const double> values() const { return values_; }

 private:
  double horizon_ = 0.0;
  std::size_t d_ = 0;
  std::vector<double> values_;
};

/// Trajectory at the J+1 grid nodes; a node is infeasible when some entry is
/// below -1e-9.
struct TrajectoryGrid {
  std::size_t d = 0;
  std::vector<double> nodes;   // (J+1) x d
  std::vector<char> feasible;  // per node

  std::size_t size() const { return feasible.size(); }
  std::span<const double> node(std::size_t j) const { return {nodes.data() + j * d, d}; }
  bool all_feasible() const { return std::all_of(feasible.begin(), feasible.end(), [](char f) { return f != 0; }); }
};

inline constexpr double kFeasibilityTol = 1e-9;

/// M_{j+1} = eta_j + e^Delta (M_j - eta_j), the exact solution of M' = M - eta
/// on an interval with constant control. Works on unnormalized inputs.
inline TrajectoryGrid integrate_forward(std::span<const double> m, std::span<const double> eta, std::size_t d,
                                        double horizon) {
  const std::size_t intervals = eta.size() / d;
  const double growth = std::expm1(horizon / static_cast<double>(intervals));
  TrajectoryGrid g;
  g.d = d;
  g.nodes.resize((intervals + 1) * d);
  g.feasible.assign(intervals + 1, 1);
  std::copy(m.begin(), m.end(), g.nodes.begin());
  for (std::size_t j = 0; j <= intervals; ++j) {
    double* cur = g.nodes.data() + j * d;
    if (j > 0) {
      const double* prev = cur - d;
      const double* e = eta.data() + (j - 1) * d;
      for (std::size_t x = 0; x < d; ++x) cur[x] = prev[x] + growth * (prev[x] - e[x]);
    }
    for (std::size_t x = 0; x < d; ++x)
      if (cur[x] < -kFeasibilityTol) g.feasible[j] = 0;
  }
  return g;
}

inline TrajectoryGrid integrate_forward(const ProbVec& m, const PiecewiseControl& ctrl) {
  if (m.size() != ctrl.dim()) throw PreconditionError("integrate_forward: dimension mismatch");
  return integrate_forward(m.weights(), ctrl.values(), ctrl.dim(), ctrl.horizon());
}

/// w_j = int_{j Delta}^{(j+1) Delta} e^{-s} ds.
inline std::vector<double> discount_weights(std::size_t intervals, double horizon) {
  const double delta = horizon / static_cast<double>(intervals);
  const double first = -std::expm1(-delta);
  std::vector<double> w(intervals);
  for (std::size_t j = 0; j < intervals; ++j) w[j] = std::exp(-delta * static_cast<double>(j)) * first;
  return w;
}

namespace detail {

// sum_j w_j R(eta_j || K(M_j)) for a given trajectory; no feasibility check.
inline double cost_on_trajectory(std::span<const double> eta, const TrajectoryGrid& traj, const Kernel& a,
                                 std::span<const double> weights) {
  const std::size_t d = traj.d;
  std::vector<double> rho(d);
  double c = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    a.apply(traj.node(j), rho);
    c += weights[j] * relative_entropy(eta.subspan(j * d, d), rho);
  }
  return c;
}

inline void require_feasible(const TrajectoryGrid& traj, const char* who) {
  if (!traj.all_feasible()) throw PreconditionError(std::string(who) + ": trajectory leaves the simplex");
}

}  // namespace detail

/// Left-endpoint discretization of the discounted cost on [0, T].
inline double discounted_cost(std::span<const double> m, std::span<const double> eta, std::size_t d, double horizon,
                              const Kernel& a) {
  const TrajectoryGrid traj = integrate_forward(m, eta, d, horizon);
  detail::require_feasible(traj, "discounted_cost");
  return detail::cost_on_trajectory(eta, traj, a, discount_weights(eta.size() / d, horizon));
}

inline double discounted_cost(const ProbVec& m, const PiecewiseControl& ctrl, const Kernel& a) {
  if (m.size() != ctrl.dim() || a.dim() != ctrl.dim()) throw PreconditionError("discounted_cost: dimension mismatch");
  return discounted_cost(m.weights(), ctrl.values(), ctrl.dim(), ctrl.horizon(), a);
}

namespace detail {

// Cost and its gradient with respect to the stacked eta entries, by a backward
// adjoint pass. lambda_j = dC/dM_j satisfies
//   lambda_J = 0,  lambda_j = w_j dR_j/dM_j + e^Delta lambda_{j+1},
// and dC/deta_j = w_j dR_j/deta_j + (1 - e^Delta) lambda_{j+1}, where
//   dR/deta_x = log(eta_x / rho_x) + 1,  dR/dM_x = -sum_y A(x,y) eta_y / rho_y.
inline double cost_and_gradient(std::span<const double> m, std::span<const double> eta, std::size_t d,
                                double horizon, const Kernel& a, std::span<const double> weights,
                                std::span<double> grad, TrajectoryGrid* traj_out = nullptr) {
  const std::size_t intervals = weights.size();
  const double growth = std::expm1(horizon / static_cast<double>(intervals));
  TrajectoryGrid traj = integrate_forward(m, eta, d, horizon);
  std::vector<double> rho(intervals * d);
  double cost = 0.0;
  for (std::size_t j = 0; j < intervals; ++j) {
    std::span<double> r(rho.data() + j * d, d);
    a.apply(traj.node(j), r);
    cost += weights[j] * relative_entropy(eta.subspan(j * d, d), r);
  }
  std::vector<double> lambda(d, 0.0), ratio(d);
  for (std::size_t j = intervals; j-- > 0;) {
    const double* r = rho.data() + j * d;
    const double* e = eta.data() + j * d;
    double* g = grad.data() + j * d;
    for (std::size_t x = 0; x < d; ++x) {
      g[x] = weights[j] * (std::log(e[x] / r[x]) + 1.0) - growth * lambda[x];
      ratio[x] = e[x] / r[x];
    }
    for (std::size_t x = 0; x < d; ++x) {
      double s = 0.0;
      const auto ax = a.row(x);
      for (std::size_t y = 0; y < d; ++y) s += ax[y] * ratio[y];
      lambda[x] = -weights[j] * s + (1.0 + growth) * lambda[x];
    }
  }
  if (traj_out) *traj_out = std::move(traj);
  return cost;
}

}  // namespace detail

/// Gradient of discounted_cost with respect to the J x d control entries.
inline std::vector<double> cost_gradient(std::span<const double> m, std::span<const double> eta, std::size_t d,
                                         double horizon, const Kernel& a) {
  for (double v : eta)
    if (!(v > 0.0)) throw PreconditionError("cost_gradient: control on the simplex boundary");
  const auto weights = discount_weights(eta.size() / d, horizon);
  std::vector<double> grad(eta.size());
  TrajectoryGrid traj;
  detail::cost_and_gradient(m, eta, d, horizon, a, weights, grad, &traj);
  detail::require_feasible(traj, "cost_gradient");
  return grad;
}

inline std::vector<double> cost_gradient(const ProbVec& m, const PiecewiseControl& ctrl, const Kernel& a) {
  if (m.size() != ctrl.dim() || a.dim() != ctrl.dim()) throw PreconditionError("cost_gradient: dimension mismatch");
  return cost_gradient(m.weights(), ctrl.values(), ctrl.dim(), ctrl.horizon(), a);
}

struct SolverOptions {
  double tol = 1e-8;
  std::size_t max_iters = 5000;
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo_slope = 1e-4;
  bool precondition = true;
  double max_scale = 1e6;
};

struct RateBracket {
  double lower = 0.0;
  double upper = 0.0;
  PiecewiseControl eta_opt;
  TrajectoryGrid m_opt;
  ProbVec m;                 // the point actually solved (after boundary lift)
  std::size_t iterations = 0;
  double grad_norm = 0.0;    // projected-gradient norm at the returned control
  bool converged = false;
  bool boundary_flag = false;  // m had entries below the lift floor
  double lift_error = 0.0;     // ||lifted m - m||_1
  std::size_t binding_constraints = 0;  // (node, state) pairs with M within 1e-9 of zero

  double width() const { return upper - lower; }
};

inline constexpr double kBoundaryLift = 1e-9;

/// Lifts entries of m below kBoundaryLift and renormalizes.
inline ProbVec lift_to_interior(const ProbVec& m, bool& lifted) {
  lifted = false;
  std::vector<double> w(m.begin(), m.end());
  for (double& v : w)
    if (v < kBoundaryLift) {
      v = kBoundaryLift;
      lifted = true;
    }
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return ProbVec(std::move(w));
}

namespace detail {

inline double kkt_residual(std::span<const double> nu, std::span<const double> h) {
  double r = 0.0;
  for (std::size_t x = 0; x < nu.size(); ++x) r = std::max(r, std::abs(nu[x] - std::max(0.0, nu[x] + h[x])));
  return r;
}

// Projection onto the feasible controls. Unrolling the integrator,
//   e^{-j Delta} M_j = m - sum_{i<j} w_i eta_i,
// so M stays nonnegative at every node iff the discounted budget
// sum_j w_j eta_j <= m holds componentwise. The set projected onto is
//   { eta_j >= floor, sum_x eta_j(x) = 1, sum_j w_j eta_j <= cap }
// with cap = m - e^{-T} min(1e-8, m/2) and floor = 1e-14, which keeps eta and
// M strictly positive. The norm is sum_i v_i^2 / D_i for a diagonal metric D
// (all ones by default).
//
// The multiplier nu >= 0 of the budget maximizes a d-dimensional concave,
// piecewise-quadratic dual; for fixed nu the blocks decouple into weighted
// simplex projections of y_j - D_j w_j nu. The dual is solved by projected
// Newton steps, finished by exact coordinate bisection where Newton stalls.
class BudgetProjector {
 public:
  static constexpr double kControlFloor = 1e-14;
  static constexpr double kTerminalFloor = 1e-8;

  BudgetProjector(std::span<const double> m, std::span<const double> weights, double horizon)
      : d_(m.size()), weights_(weights.begin(), weights.end()), cap_(m.size()), nu_(m.size(), 0.0) {
    const double tail = std::exp(-horizon);
    for (std::size_t x = 0; x < d_; ++x) cap_[x] = m[x] - tail * std::min(kTerminalFloor, 0.5 * m[x]);
  }

  // Projects y (J x d) in place in the metric D (empty = identity). Returns
  // the final KKT residual of the dual.
  double operator()(std::span<double> y, std::span<const double> metric = {}) const {
    src_.assign(y.begin(), y.end());
    if (metric.empty())
      metric_.assign(src_.size(), 1.0);
    else
      metric_.assign(metric.begin(), metric.end());
    std::vector<double> p(src_.size()), trial(src_.size()), h(d_), h_trial(d_), nu_trial(d_), step(d_);
    std::vector<char> support(src_.size()), support_trial(src_.size());

    auto accept = [&] {
      nu_ = nu_trial;
      p.swap(trial);
      support.swap(support_trial);
      h.swap(h_trial);
    };

    // Warm start from the previous multiplier; fall back to zero if worse.
    evaluate(nu_, p, support, h);
    nu_trial.assign(d_, 0.0);
    evaluate(nu_trial, trial, support_trial, h_trial);
    if (increase(nu_, p, nu_trial, trial) >= 0.0) accept();

    double residual = kkt_residual(nu_, h);
    for (int it = 0; it < 100 && residual > kResidualTol; ++it) {
      std::vector<std::size_t> free;
      for (std::size_t x = 0; x < d_; ++x)
        if (nu_[x] > 0.0 || h[x] > 0.0) free.push_back(x);
      const std::size_t f = free.size();
      // Generalized Hessian of -g on the free coordinates:
      // sum_j w_j^2 (D_S - D_S 1 1^T D_S / sum D_S) over each block's support S.
      std::vector<double> hess(f * f, 0.0), rhs(f), ds(d_);
      double scale = 0.0;
      for (std::size_t j = 0; j < weights_.size(); ++j) {
        const double w2 = weights_[j] * weights_[j];
        double total = 0.0;
        for (std::size_t x = 0; x < d_; ++x) {
          ds[x] = support[j * d_ + x] ? metric_[j * d_ + x] : 0.0;
          total += ds[x];
        }
        if (total == 0.0) continue;
        scale += w2 * total;
        for (std::size_t r = 0; r < f; ++r) {
          const double dr = ds[free[r]];
          if (dr == 0.0) continue;
          hess[r * f + r] += w2 * dr;
          for (std::size_t c = 0; c < f; ++c) hess[r * f + c] -= w2 * dr * ds[free[c]] / total;
        }
      }
      for (std::size_t r = 0; r < f; ++r) {
        hess[r * f + r] += 1e-12 * scale;
        rhs[r] = h[free[r]];
      }
      std::vector<double> delta;
      try {
        delta = lu_solve(hess, rhs, f);
      } catch (const NumericalError&) {
        break;
      }
      std::fill(step.begin(), step.end(), 0.0);
      for (std::size_t r = 0; r < f; ++r) step[free[r]] = delta[r];

      bool improved = false;
      for (double t = 1.0; t > 1e-12; t *= 0.5) {
        for (std::size_t x = 0; x < d_; ++x) nu_trial[x] = std::max(0.0, nu_[x] + t * step[x]);
        evaluate(nu_trial, trial, support_trial, h_trial);
        if (increase(nu_, p, nu_trial, trial) > 0.0) {
          accept();
          improved = true;
          break;
        }
      }
      if (!improved) break;
      residual = kkt_residual(nu_, h);
    }

    // Each coordinate solve ends on the feasible side h_x <= 0.
    for (int sweep = 0; sweep < 50 && residual > kResidualTol; ++sweep) {
      for (std::size_t x = 0; x < d_; ++x) {
        if (std::abs(nu_[x] - std::max(0.0, nu_[x] + h[x])) <= kResidualTol) continue;
        nu_trial = nu_;
        nu_trial[x] = 0.0;
        evaluate(nu_trial, trial, support_trial, h_trial);
        if (h_trial[x] > 0.0) {
          double lo = 0.0;
          double hi = std::max(2.0 * nu_[x], 1e-12);
          for (;;) {
            nu_trial[x] = hi;
            evaluate(nu_trial, trial, support_trial, h_trial);
            if (h_trial[x] <= 0.0) break;
            lo = hi;
            hi *= 2.0;
          }
          for (int k = 0; k < 200; ++k) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            nu_trial[x] = mid;
            evaluate(nu_trial, trial, support_trial, h_trial);
            (h_trial[x] <= 0.0 ? hi : lo) = mid;
          }
          nu_trial[x] = hi;
          evaluate(nu_trial, trial, support_trial, h_trial);
        }
        accept();
      }
      residual = kkt_residual(nu_, h);
    }
    std::copy(p.begin(), p.end(), y.begin());
    return residual;
  }

 private:
  static constexpr double kResidualTol = 1e-16;

  // Primal point P(nu) and the dual gradient h = sum_j w_j P_j - cap.
  void evaluate(const std::vector<double>& nu, std::vector<double>& p, std::vector<char>& support,
                std::vector<double>& h) const {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t j = 0; j < weights_.size(); ++j) {
      std::span<double> blk(p.data() + j * d_, d_);
      std::span<const double> dj(metric_.data() + j * d_, d_);
      for (std::size_t x = 0; x < d_; ++x) blk[x] = src_[j * d_ + x] - dj[x] * weights_[j] * nu[x];
      project_floored_simplex(blk, dj, kControlFloor);
      for (std::size_t x = 0; x < d_; ++x) {
        support[j * d_ + x] = blk[x] > kControlFloor ? 1 : 0;
        h[x] += weights_[j] * blk[x];
      }
    }
    for (std::size_t x = 0; x < d_; ++x) h[x] -= cap_[x];
  }

  // g(nu1) - g(nu0) for the dual objective
  //   g(nu) = sum_i (P_i - y_i)^2 / (2 D_i) + sum_j w_j nu.P_j - nu.cap,
  // accumulated from differences so that changes far below the size of g
  // are still resolved.
  double increase(const std::vector<double>& nu0, const std::vector<double>& p0, const std::vector<double>& nu1,
                  const std::vector<double>& p1) const {
    double s = 0.0;
    for (std::size_t j = 0; j < weights_.size(); ++j)
      for (std::size_t x = 0; x < d_; ++x) {
        const std::size_t i = j * d_ + x;
        const double dp = p1[i] - p0[i];
        s += 0.5 * dp * (p1[i] + p0[i] - 2.0 * src_[i]) / metric_[i] +
             weights_[j] * ((nu1[x] - nu0[x]) * p1[i] + nu0[x] * dp);
      }
    for (std::size_t x = 0; x < d_; ++x) s -= (nu1[x] - nu0[x]) * cap_[x];
    return s;
  }

  std::size_t d_;
  std::vector<double> weights_;
  std::vector<double> cap_;
  mutable std::vector<double> nu_;
  mutable std::vector<double> src_;
  mutable std::vector<double> metric_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

/// Projected-gradient descent with Armijo backtracking over piecewise-constant
/// controls, started from eta = m (the equilibrium M = m, always feasible).
///
/// Steps are scaled gradient projections in the diagonal metric
/// D = (eta + 1e-10) / w_j, the inverse curvature of the running cost
/// w_j eta log eta, capped at max_scale / w_0 per unit of eta. Stationarity is
/// measured in the Euclidean metric, |eta - P(eta - grad)|.
inline RateBracket solve_rate(const ProbVec& m_in, const Kernel& a, double horizon, std::size_t intervals,
                              const SolverOptions& opts = {}) {
  if (!(horizon > 0.0)) throw PreconditionError("solve_rate: T must be > 0");
  if (intervals < 1) throw PreconditionError("solve_rate: J must be >= 1");
  if (m_in.size() != a.dim()) throw PreconditionError("solve_rate: dimension mismatch");
  const std::size_t d = a.dim();

  RateBracket out;
  out.m = lift_to_interior(m_in, out.boundary_flag);
  out.lift_error = l1_distance(out.m.weights(), m_in.weights());
  const std::span<const double> m = out.m.weights();

  const auto weights = discount_weights(intervals, horizon);
  const detail::BudgetProjector project(m, weights, horizon);
  const detail::BudgetProjector scaled_project(m, weights, horizon);
  std::vector<double> block_scale(intervals);
  for (std::size_t j = 0; j < intervals; ++j)
    block_scale[j] = opts.precondition ? std::min(1.0 / weights[j], opts.max_scale / weights[0]) : 1.0;

  std::vector<double> eta;
  eta.reserve(intervals * d);
  for (std::size_t j = 0; j < intervals; ++j) eta.insert(eta.end(), m.begin(), m.end());
  std::vector<double> grad(eta.size()), trial(eta.size()), trial_grad(eta.size()), metric(eta.size());
  double cost = detail::cost_and_gradient(m, eta, d, horizon, a, weights, grad);
  if (!std::isfinite(cost)) throw NumericalError("solve_rate: non-finite cost at the initial control");

  std::size_t it = 0;
  double pg = 0.0;
  for (;; ++it) {
    for (std::size_t i = 0; i < eta.size(); ++i) trial[i] = eta[i] - grad[i];
    project(trial);
    pg = std::sqrt(detail::squared_distance(trial, eta));
    if (pg <= opts.tol || it >= opts.max_iters) break;

    for (std::size_t i = 0; i < eta.size(); ++i)
      metric[i] = opts.precondition ? block_scale[i / d] * (eta[i] + 1e-10) : 1.0;
    double step = opts.initial_step;
    bool accepted = false;
    double trial_cost = cost;
    while (step > 1e-20) {
      for (std::size_t i = 0; i < eta.size(); ++i) trial[i] = eta[i] - step * metric[i] * grad[i];
      scaled_project(trial, metric);
      double moved = 0.0;
      for (std::size_t i = 0; i < eta.size(); ++i) moved += (trial[i] - eta[i]) * (trial[i] - eta[i]) / metric[i];
      if (moved == 0.0) break;
      trial_cost = detail::cost_and_gradient(m, trial, d, horizon, a, weights, trial_grad);
      if (!std::isfinite(trial_cost)) throw NumericalError("solve_rate: non-finite cost at an interior iterate");
      if (trial_cost <= cost - opts.armijo_slope / step * moved) {
        accepted = true;
        break;
      }
      step *= opts.shrink;
    }
    if (!accepted) break;
    eta.swap(trial);
    grad.swap(trial_grad);
    cost = trial_cost;
  }

  out.iterations = it;
  out.grad_norm = pg;
  out.converged = pg <= opts.tol;
  out.lower = std::max(cost, 0.0);
  out.upper = out.lower + std::exp(-horizon) * std::log(1.0 / a.delta0());
  out.m_opt = integrate_forward(m, eta, d, horizon);
  for (std::size_t j = 1; j < out.m_opt.size(); ++j)
    for (double v : out.m_opt.node(j))
      if (v <= 1e-9) ++out.binding_constraints;
  out.eta_opt = PiecewiseControl(horizon, d, std::move(eta));
  return out;
}

/// All points of the simplex whose coordinates are multiples of 1/N,
/// N = round(1/step), in lexicographic order. Includes boundary points.
inline std::vector<ProbVec> simplex_mesh(std::size_t d, double step) {
  if (d < 1 || !(step > 0.0) || step > 1.0) throw PreconditionError("simplex_mesh: bad arguments");
  const auto n = static_cast<int>(std::lround(1.0 / step));
  std::vector<ProbVec> out;
  std::vector<int> c(d, 0);
  c[d - 1] = n;
  for (;;) {
    std::vector<double> w(d);
    for (std::size_t i = 0; i < d; ++i) w[i] = static_cast<double>(c[i]) / n;
    out.emplace_back(std::move(w));
    // next composition in lexicographic order
    if (d == 1) break;
    int tail = c[d - 1];
    std::size_t i = d - 1;
    bool advanced = false;
    while (i-- > 0) {
      if (tail > 0) {
        ++c[i];
        for (std::size_t j = i + 1; j < d; ++j) c[j] = 0;
        c[d - 1] = tail - 1;
        advanced = true;
        break;
      }
      tail += c[i];
    }
    if (!advanced) break;
  }
  return out;
}

/// Donsker-Varadhan rate: min R(gamma || theta (x) A) over couplings gamma
/// whose two marginals equal theta. The minimizer has the form
/// u(x) theta(x) A(x,y) v(y) on supp(theta)^2 and is found by alternating
/// marginal scaling.
inline double solve_dv_rate(const ProbVec& theta, const Kernel& a, double tol = 1e-14,
                            std::size_t max_iters = 1000000) {
  if (theta.size() != a.dim()) throw PreconditionError("solve_dv_rate: dimension mismatch");
  std::vector<std::size_t> s;
  for (std::size_t x = 0; x < theta.size(); ++x)
    if (theta[x] > 0.0) s.push_back(x);
  const std::size_t k = s.size();
  std::vector<double> ker(k * k), u(k, 1.0), v(k, 1.0), tmp(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) ker[i * k + j] = theta[s[i]] * a(s[i], s[j]);

  double err = kInfinity;
  for (std::size_t it = 0; it < max_iters && err > tol; ++it) {
    for (std::size_t i = 0; i < k; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < k; ++j) r += ker[i * k + j] * v[j];
      u[i] = theta[s[i]] / r;
    }
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) tmp[j] += u[i] * ker[i * k + j];
    for (std::size_t j = 0; j < k; ++j) v[j] = theta[s[j]] / tmp[j];
    // columns are now exact; measure the row defect
    err = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < k; ++j) r += u[i] * ker[i * k + j] * v[j];
      err += std::abs(r - theta[s[i]]);
    }
  }
  if (err > 1e-10) throw NumericalError("solve_dv_rate: marginal scaling did not converge");
  // R(gamma || K) with gamma = diag(u) K diag(v) = sum gamma (log u + log v)
  double r = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double g = u[i] * ker[i * k + j] * v[j];
      if (g > 0.0) r += g * (std::log(u[i]) + std::log(v[j]));
    }
  return std::max(r, 0.0);
}

struct RateProfileRow {
  ProbVec m;
  double lower;
  double upper;
  double dv_rate;  // NaN unless requested
  std::size_t iterations;
  double grad_norm;
  bool boundary_flag;
  bool converged;
  std::size_t binding_constraints;
};

/// solve_rate over a list of points; rows come back in input order.
inline std::vector<RateProfileRow> rate_profile(const Kernel& a, const std::vector<ProbVec>& points, double horizon,
                                                std::size_t intervals, const SolverOptions& opts, bool with_dv,
                                                unsigned threads = 1) {
  std::vector<RateProfileRow> rows(points.size());
  parallel_for(points.size(), threads, [&](std::size_t i) {
    const RateBracket b = solve_rate(points[i], a, horizon, intervals, opts);
    rows[i] = {points[i],     b.lower,          b.upper,     with_dv ? solve_dv_rate(points[i], a) : std::nan(""),
               b.iterations, b.grad_norm, b.boundary_flag, b.converged, b.binding_constraints};
  });
  return rows;
}

inline void write_rate_csv(std::ostream& os, const std::vector<RateProfileRow>& rows, bool with_dv) {
  if (rows.empty()) return;
  auto head = csv::indexed_header("m_", rows.front().m.size());
  for (const char* h : {"lower", "upper"}) head.push_back(h);
  if (with_dv) head.push_back("dv_rate");
  for (const char* h : {"iterations", "grad_norm", "boundary_flag"}) head.push_back(h);
  csv::write_row(os, head);
  for (const auto& r : rows) {
    std::vector<std::string> cells;
    csv::append(cells, r.m.weights());
    cells.push_back(csv::num(r.lower));
    cells.push_back(csv::num(r.upper));
    if (with_dv) cells.push_back(csv::num(r.dv_rate));
    cells.push_back(std::to_string(r.iterations));
    cells.push_back(csv::num(r.grad_norm));
    cells.push_back(r.boundary_flag ? "1" : "0");
    csv::write_row(os, cells);
  }
}

}  // namespace rldp
