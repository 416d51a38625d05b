#pragma once

// Near-optimal controlled chains for the lower bound: a solver control is
// made nondegenerate (mixing with the stationary pair), time-reversed,
// mollified and resampled on a fine grid; the resulting reversed plan drives a
// two-phase controlled chain whose empirical measure ends near the target.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rldp/chain.hpp"
#include "rldp/csv.hpp"
#include "rldp/error.hpp"
#include "rldp/measures.hpp"
#include "rldp/parallel.hpp"
#include "rldp/rate_solver.hpp"
#include "rldp/rng.hpp"
#include "rldp/time_grid.hpp"

namespace rldp {

// ---------------------------------------------------------------------------
// Step 1: nondegeneracy

struct MixedControl {
  PiecewiseControl eta;
  TrajectoryGrid M;
  double kappa = 0.0;
  double floor_guaranteed = 0.0;  // kappa * min(m_*)
  double floor_actual = 0.0;      // min entry over all eta_j and M_j
};

/// eta1 = (1-kappa) eta0 + kappa m_*, M1 = (1-kappa) M0 + kappa m_*. Since the
/// dynamics are affine and (m_*, m_*) is an equilibrium, M1 solves the forward
/// equation for eta1.
inline MixedControl step1_mix(const PiecewiseControl& eta0, const TrajectoryGrid& m0, const Kernel& a,
                              double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw PreconditionError("step1_mix: kappa1 must lie in [0,1]");
  const std::size_t d = eta0.dim();
  if (a.dim() != d || m0.d != d || m0.size() != eta0.intervals() + 1)
    throw PreconditionError("step1_mix: control, trajectory and kernel do not match");
  const ProbVec star = stationary_distribution(a);
  MixedControl out;
  out.kappa = kappa;
  out.floor_guaranteed = kappa * star.min();

  std::vector<double> eta(eta0.values().begin(), eta0.values().end());
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = (1.0 - kappa) * eta[i] + kappa * star[i % d];
  out.M = m0;
  for (std::size_t i = 0; i < out.M.nodes.size(); ++i)
    out.M.nodes[i] = (1.0 - kappa) * out.M.nodes[i] + kappa * star[i % d];
  for (std::size_t j = 0; j < out.M.size(); ++j) {
    bool ok = true;
    for (double v : out.M.node(j)) ok = ok && v >= -kFeasibilityTol;
    out.M.feasible[j] = ok ? 1 : 0;
  }
  out.floor_actual = std::min(*std::min_element(eta.begin(), eta.end()),
                              *std::min_element(out.M.nodes.begin(), out.M.nodes.end()));
  out.eta = PiecewiseControl(eta0.horizon(), d, std::move(eta));
  return out;
}

// ---------------------------------------------------------------------------
// Reversed-time controls and their exact trajectories

/// Control on [t0, t1] equal to value + slope (t - t0).
struct ControlPiece {
  double t0;
  double t1;
  std::vector<double> value;
  std::vector<double> slope;
};

/// Reversed dynamics M' = eta - M over one piece with linear control, exact:
/// M(u) = e^{-u} M(0) + a (1 - e^{-u}) + b (u - 1 + e^{-u}).
inline void advance_reversed(std::span<double> m, const ControlPiece& piece, double u) {
  const double decay = -std::expm1(-u);  // 1 - e^{-u}
  const double ramp = u + std::expm1(-u);
  for (std::size_t x = 0; x < m.size(); ++x)
    m[x] = (1.0 - decay) * m[x] + piece.value[x] * decay + piece.slope[x] * ramp;
}

/// Piecewise-constant control as pieces.
inline std::vector<ControlPiece> pieces_of(const PiecewiseControl& c) {
  std::vector<ControlPiece> out;
  out.reserve(c.intervals());
  const double h = c.step();
  for (std::size_t j = 0; j < c.intervals(); ++j) {
    const auto r = c.row(j);
    out.push_back({h * static_cast<double>(j), h * static_cast<double>(j + 1), {r.begin(), r.end()},
                   std::vector<double>(c.dim(), 0.0)});
  }
  out.back().t1 = c.horizon();
  return out;
}

/// M at the sorted query times in [0, T] for the reversed dynamics started at q.
inline std::vector<std::vector<double>> reversed_trajectory_at(const ProbVec& q, const std::vector<ControlPiece>& pieces,
                                                               const std::vector<double>& times) {
  std::vector<std::vector<double>> out;
  out.reserve(times.size());
  std::vector<double> m(q.begin(), q.end()), tmp;
  std::size_t k = 0;
  for (double t : times) {
    while (k + 1 < pieces.size() && t >= pieces[k].t1) {
      advance_reversed(m, pieces[k], pieces[k].t1 - pieces[k].t0);
      ++k;
    }
    tmp = m;
    advance_reversed(tmp, pieces[k], std::max(0.0, t - pieces[k].t0));
    out.push_back(tmp);
  }
  return out;
}

/// Reversed integrator for piecewise-constant controls at the grid nodes:
/// Mhat_{j+1} = eta_j + e^{-Delta} (Mhat_j - eta_j). Stays in the simplex for
/// every control.
inline TrajectoryGrid integrate_reversed(const ProbVec& q, const PiecewiseControl& c) {
  if (q.size() != c.dim()) throw PreconditionError("integrate_reversed: dimension mismatch");
  const std::size_t d = c.dim();
  const double keep = std::exp(-c.step());
  TrajectoryGrid g;
  g.d = d;
  g.nodes.resize((c.intervals() + 1) * d);
  g.feasible.assign(c.intervals() + 1, 1);
  std::copy(q.begin(), q.end(), g.nodes.begin());
  for (std::size_t j = 0; j < c.intervals(); ++j) {
    const auto e = c.row(j);
    const double* cur = g.nodes.data() + j * d;
    double* nxt = g.nodes.data() + (j + 1) * d;
    for (std::size_t x = 0; x < d; ++x) nxt[x] = e[x] + keep * (cur[x] - e[x]);
    for (std::size_t x = 0; x < d; ++x)
      if (nxt[x] < -kFeasibilityTol) g.feasible[j + 1] = 0;
  }
  return g;
}

/// e^{-T} int_0^T e^s R(eta(s) || K(M(s))) ds for the reversed trajectory
/// started at q, by composite Simpson on each piece with the exact M. Each
/// piece gets at least `subdivisions` panels and panels no wider than
/// kMaxPanel.
inline constexpr double kMaxPanel = 0.02;

inline double reversed_cost(const ProbVec& q, const std::vector<ControlPiece>& pieces, const Kernel& a,
                            std::size_t subdivisions = 8) {
  const std::size_t d = q.size();
  const double horizon = pieces.back().t1;
  std::vector<double> m(q.begin(), q.end()), mm(d), eta(d), rho(d);
  double total = 0.0;
  for (const auto& piece : pieces) {
    const double len = piece.t1 - piece.t0;
    if (len <= 0.0) continue;
    const auto wanted = std::max(subdivisions, static_cast<std::size_t>(std::ceil(len / kMaxPanel)));
    const std::size_t nsub = 2 * std::max<std::size_t>(1, (wanted + 1) / 2);
    const double h = len / static_cast<double>(nsub);
    double s = 0.0;
    for (std::size_t i = 0; i <= nsub; ++i) {
      const double u = h * static_cast<double>(i);
      mm = m;
      advance_reversed(mm, piece, u);
      for (std::size_t x = 0; x < d; ++x) eta[x] = piece.value[x] + piece.slope[x] * u;
      a.apply(mm, rho);
      const double f = std::exp(piece.t0 + u - horizon) * relative_entropy(eta, rho);
      s += f * (i == 0 || i == nsub ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0));
    }
    total += s * h / 3.0;
    advance_reversed(m, piece, len);
  }
  return total;
}

/// The first `blocks` intervals of a forward control, in reversed order:
/// etahat(t) = eta(T - t) with T = blocks * Delta.
inline PiecewiseControl reverse_control(const PiecewiseControl& eta, std::size_t blocks) {
  if (blocks < 1 || blocks > eta.intervals()) throw PreconditionError("reverse_control: bad block count");
  std::vector<double> v;
  v.reserve(blocks * eta.dim());
  for (std::size_t k = 0; k < blocks; ++k) {
    const auto r = eta.row(blocks - 1 - k);
    v.insert(v.end(), r.begin(), r.end());
  }
  return PiecewiseControl(eta.step() * static_cast<double>(blocks), eta.dim(), std::move(v));
}

// ---------------------------------------------------------------------------
// Step 2: mollification

struct MollifiedControl {
  std::vector<ControlPiece> pieces;  // piecewise linear on [0, T]
  std::vector<double> end_value;     // etahat2(T)
  double kappa = 0.0;
  double lipschitz = 0.0;  // C1: sup |etahat2'| in l1
  double min_entry = 0.0;

  std::vector<double> at(double t) const {
    auto it = std::upper_bound(pieces.begin(), pieces.end(), t, [](double v, const ControlPiece& p) { return v < p.t1; });
    if (it == pieces.end()) return end_value;
    std::vector<double> v = it->value;
    for (std::size_t x = 0; x < v.size(); ++x) v[x] += it->slope[x] * (t - it->t0);
    return v;
  }
};

/// Sliding average etahat2(s) = kappa^{-1} int_s^{s+kappa} etahat1, with
/// etahat1 extended by its final value beyond T. For a piecewise-constant
/// input the output is piecewise linear with knots at the block edges and at
/// the block edges shifted by -kappa.
inline MollifiedControl step2_mollify(const PiecewiseControl& eta_hat1, double kappa, double delta) {
  const double horizon = eta_hat1.horizon();
  if (!(kappa > 0.0)) throw PreconditionError("step2_mollify: kappa2 must be > 0");
  if (3.0 * kappa * std::exp(horizon) > 0.5 * delta) {
    std::ostringstream os;
    os.precision(6);
    os << "step2_mollify: 3*kappa2*e^T = " << 3.0 * kappa * std::exp(horizon) << " exceeds delta/2 = " << 0.5 * delta
       << "; shrink kappa2";
    throw PreconditionError(os.str());
  }
  const std::size_t d = eta_hat1.dim();
  const std::size_t blocks = eta_hat1.intervals();
  const double h = eta_hat1.step();
  auto block_of = [&](double u) {
    return std::min<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::floor(u / h))), blocks - 1);
  };
  // Exact window average: sum over the blocks meeting [s, s + kappa].
  auto average = [&](double s) {
    std::vector<double> v(d, 0.0);
    const double e = s + kappa;
    double u = s;
    double covered = 0.0;
    while (u < e) {
      double next;
      std::span<const double> val;
      if (u >= horizon) {
        next = e;
        val = eta_hat1.row(blocks - 1);
      } else {
        const std::size_t b = block_of(u);
        next = std::min(e, b + 1 == blocks ? horizon : h * static_cast<double>(b + 1));
        if (next <= u) next = std::min(e, u + h);
        val = eta_hat1.row(b);
      }
      for (std::size_t x = 0; x < d; ++x) v[x] += (next - u) * val[x];
      covered += next - u;
      u = next;
    }
    for (double& x : v) x /= covered;
    return v;
  };

  std::vector<double> knots{0.0, horizon};
  for (std::size_t b = 1; b < blocks; ++b) {
    const double edge = h * static_cast<double>(b);
    knots.push_back(edge);
    if (edge - kappa > 0.0) knots.push_back(edge - kappa);
  }
  if (horizon - kappa > 0.0) knots.push_back(horizon - kappa);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end(), [](double x, double y) { return std::abs(x - y) <= 1e-15; }),
              knots.end());

  MollifiedControl out;
  out.kappa = kappa;
  out.min_entry = kInfinity;
  std::vector<double> lo = average(0.0);
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    const std::vector<double> hi = average(knots[k + 1]);
    const double len = knots[k + 1] - knots[k];
    ControlPiece p{knots[k], knots[k + 1], lo, std::vector<double>(d)};
    double slope_norm = 0.0;
    for (std::size_t x = 0; x < d; ++x) {
      p.slope[x] = (hi[x] - lo[x]) / len;
      slope_norm += std::abs(p.slope[x]);
      out.min_entry = std::min({out.min_entry, lo[x], hi[x]});
    }
    out.lipschitz = std::max(out.lipschitz, slope_norm);
    out.pieces.push_back(std::move(p));
    lo = hi;
  }
  out.end_value = lo;
  return out;
}

// ---------------------------------------------------------------------------
// Step 3: piecewise-constant resampling

/// etahat3 = etahat2(j kappa) on [j kappa, (j+1) kappa); kappa must divide T.
inline PiecewiseControl step3_discretize(const MollifiedControl& eta_hat2, double kappa, double horizon,
                                         double delta) {
  if (!(kappa > 0.0) || kappa > horizon) throw PreconditionError("step3_discretize: kappa3 must lie in (0, T]");
  const double ratio = horizon / kappa;
  const auto blocks = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(blocks)) > 1e-6 * ratio)
    throw PreconditionError("step3_discretize: T / kappa3 must be an integer");
  const double used = eta_hat2.lipschitz * kappa * horizon * std::exp(horizon);
  if (used > 0.25 * delta) {
    std::ostringstream os;
    os.precision(6);
    os << "step3_discretize: C1*kappa3*T*e^T = " << used << " exceeds delta/4 = " << 0.25 * delta
       << "; shrink kappa3";
    throw PreconditionError(os.str());
  }
  const std::size_t d = eta_hat2.end_value.size();
  std::vector<double> v;
  v.reserve(blocks * d);
  std::size_t k = 0;
  const auto& pieces = eta_hat2.pieces;
  for (std::size_t j = 0; j < blocks; ++j) {
    const double t = horizon * static_cast<double>(j) / static_cast<double>(blocks);
    while (k + 1 < pieces.size() && t >= pieces[k].t1) ++k;
    for (std::size_t x = 0; x < d; ++x) v.push_back(pieces[k].value[x] + pieces[k].slope[x] * (t - pieces[k].t0));
  }
  return PiecewiseControl(horizon, d, std::move(v));
}

// ---------------------------------------------------------------------------
// Plan

struct PlanOptions {
  double eps = 0.05;      // kappa1 |m0 - m_*| <= eps when kappa1 is not given
  double kappa1 = -1.0;   // < 0: default schedule
  double kappa2 = -1.0;
  double kappa3 = -1.0;
  std::size_t max_intervals = 50'000'000;
};

struct ReversedPlan {
  double horizon = 0.0;
  ProbVec q;            // Mhat(0) = M1(T)
  ProbVec target;       // requested point m0
  ProbVec target_mixed; // m1 = (1-kappa1) m0 + kappa1 m_*
  PiecewiseControl eta_hat;      // etahat3 on intervals of width kappa3
  std::vector<double> eta_end;   // etahat2(T), used at the right end of the schedule
  TrajectoryGrid M_hat;          // reversed trajectory at the kappa3 nodes
  double delta = 0.0;            // positivity floor after Step 1 (actual)
  double delta_guaranteed = 0.0; // kappa1 min(m_*)
  double kappa1 = 0.0, kappa2 = 0.0, kappa3 = 0.0;
  double lipschitz = 0.0;        // C1

  // deviation bounds and measured sup-norm deviations
  double step1_shift = 0.0;  // |m1 - m0| = kappa1 |m0 - m_*|
  double step2_bound = 0.0;  // 3 kappa2 e^T
  double step2_measured = 0.0;
  double step3_bound = 0.0;  // C1 kappa3 T e^T
  double step3_measured = 0.0;
  double target_error = 0.0;        // |Mhat_J - m0|
  double target_error_bound = 0.0;  // step1_shift + step2_bound + step3_bound

  // costs e^{-T} int_0^T e^s R(etahat || K(Mhat)) ds along the chain of steps
  double solver_cost = 0.0;    // discretized solver objective on its own horizon
  double original_cost = 0.0;  // continuous-time cost of the solver control on [0, T]
  double step1_cost = 0.0;
  double step2_cost = 0.0;
  double step3_cost = 0.0;     // the plan cost
  double step2_eps = 0.0;      // kappa2 e^{kappa2} |log delta0| + delta0^{-1} (3 kappa2 e^T + 2 kappa2)
  double step3_eps = 0.0;      // C1 kappa3 (|log delta0| + |log delta| + 1) + delta0^{-1} C1 kappa3 T e^T

  double step() const { return eta_hat.step(); }
  std::size_t intervals() const { return eta_hat.intervals(); }
  /// Control of schedule slot j = 0..floor(T/c).
  std::span<const double> slot(std::size_t j) const {
    return j < intervals() ? eta_hat.row(j) : std::span<const double>(eta_end);
  }
};

/// Steps 1-3 applied to a solver control. The plan horizon T must be a
/// multiple of the solver's interval and no longer than its horizon; only the
/// first T time units of the solver control are used.
inline ReversedPlan build_plan(const ProbVec& m, const Kernel& a, double horizon, const PlanOptions& opts,
                               const RateBracket& solved) {
  const PiecewiseControl& eta0 = solved.eta_opt;
  const std::size_t d = a.dim();
  if (m.size() != d || eta0.dim() != d) throw PreconditionError("build_plan: dimension mismatch");
  if (l1_distance(m.weights(), solved.m.weights()) > 1e-6)
    throw PreconditionError("build_plan: solver output was computed for a different point");
  if (!(horizon > 0.0) || horizon > eta0.horizon() * (1.0 + 1e-12))
    throw PreconditionError("build_plan: plan horizon must lie in (0, solver horizon]");
  const double ratio = horizon / eta0.step();
  const auto blocks = static_cast<std::size_t>(std::llround(ratio));
  if (blocks < 1 || std::abs(ratio - static_cast<double>(blocks)) > 1e-9 * ratio)
    throw PreconditionError("build_plan: plan horizon must be a multiple of the solver interval");
  const double eT = std::exp(horizon);
  const double log_delta0 = std::abs(std::log(a.delta0()));

  ReversedPlan plan;
  plan.horizon = horizon;
  plan.target = solved.m;
  const ProbVec star = stationary_distribution(a);
  const double spread = l1_distance(solved.m.weights(), star.weights());
  plan.kappa1 = opts.kappa1 >= 0.0 ? opts.kappa1 : (spread > 0.0 ? std::min(1.0, opts.eps / spread) : 0.0);
  plan.step1_shift = plan.kappa1 * spread;

  // Step 1, restricted to [0, T].
  std::vector<double> head(eta0.values().begin(), eta0.values().begin() + static_cast<std::ptrdiff_t>(blocks * d));
  TrajectoryGrid m0 = solved.m_opt;
  m0.nodes.resize((blocks + 1) * d);
  m0.feasible.resize(blocks + 1);
  const PiecewiseControl eta0_head(horizon, d, head);
  const MixedControl mixed = step1_mix(eta0_head, m0, a, plan.kappa1);
  plan.delta = mixed.floor_actual;
  plan.delta_guaranteed = mixed.floor_guaranteed;
  if (!(plan.delta > 0.0)) throw PreconditionError("build_plan: Step 1 left a zero entry; increase kappa1");
  {
    std::vector<double> v(mixed.M.node(0).begin(), mixed.M.node(0).end());
    snap_to_simplex(v, "build_plan: mixed target");
    plan.target_mixed = ProbVec(std::move(v));
    std::vector<double> qv(mixed.M.node(blocks).begin(), mixed.M.node(blocks).end());
    snap_to_simplex(qv, "build_plan: reversed start");
    plan.q = ProbVec(std::move(qv));
  }

  // Reverse.
  const PiecewiseControl eta_hat1 = reverse_control(mixed.eta, blocks);
  const auto pieces1 = pieces_of(eta_hat1);

  // Step 2.
  plan.kappa2 = opts.kappa2 > 0.0 ? opts.kappa2 : plan.delta / (6.0 * eT) / 10.0;
  const MollifiedControl eta_hat2 = step2_mollify(eta_hat1, plan.kappa2, plan.delta);
  plan.lipschitz = eta_hat2.lipschitz;
  plan.eta_end = eta_hat2.end_value;
  plan.step2_bound = 3.0 * plan.kappa2 * eT;

  // Step 3: kappa3 divides T.
  double k3 = opts.kappa3 > 0.0 ? opts.kappa3
                                : (plan.lipschitz > 0.0 ? plan.delta / (4.0 * plan.lipschitz * horizon * eT) / 10.0
                                                        : horizon);
  const double want = std::ceil(horizon / k3 - 1e-9);
  if (want > static_cast<double>(opts.max_intervals)) {
    std::ostringstream os;
    os << "build_plan: kappa3 = " << k3 << " needs " << want << " intervals (limit " << opts.max_intervals
       << "); use a shorter horizon or a larger eps";
    throw PreconditionError(os.str());
  }
  const auto blocks3 = std::max<std::size_t>(1, static_cast<std::size_t>(want));
  plan.kappa3 = horizon / static_cast<double>(blocks3);
  plan.eta_hat = step3_discretize(eta_hat2, plan.kappa3, horizon, plan.delta);
  plan.M_hat = integrate_reversed(plan.q, plan.eta_hat);
  plan.step3_bound = plan.lipschitz * plan.kappa3 * horizon * eT;

  // Measured deviations.
  {
    std::vector<double> times;
    for (const auto& p : eta_hat2.pieces) {
      times.push_back(p.t0);
      times.push_back(0.5 * (p.t0 + p.t1));
    }
    times.push_back(horizon);
    const auto m1 = reversed_trajectory_at(plan.q, pieces1, times);
    const auto m2 = reversed_trajectory_at(plan.q, eta_hat2.pieces, times);
    for (std::size_t i = 0; i < times.size(); ++i)
      plan.step2_measured = std::max(plan.step2_measured, l1_distance(m1[i], m2[i]));
    std::vector<double> nodes(blocks3 + 1);
    for (std::size_t j = 0; j <= blocks3; ++j) nodes[j] = plan.kappa3 * static_cast<double>(j);
    nodes.back() = horizon;
    const auto m2n = reversed_trajectory_at(plan.q, eta_hat2.pieces, nodes);
    for (std::size_t j = 0; j <= blocks3; ++j)
      plan.step3_measured = std::max(plan.step3_measured, l1_distance(m2n[j], plan.M_hat.node(j)));
  }
  plan.target_error = l1_distance(plan.M_hat.node(blocks3), plan.target.weights());
  plan.target_error_bound = plan.step1_shift + plan.step2_bound + plan.step3_bound;

  // Costs.
  plan.solver_cost = solved.lower;
  plan.original_cost = reversed_cost(ProbVec([&] {
                                       std::vector<double> v(m0.node(blocks).begin(), m0.node(blocks).end());
                                       snap_to_simplex(v, "build_plan: solver trajectory");
                                       return v;
                                     }()),
                                     pieces_of(reverse_control(eta0_head, blocks)), a, 16);
  plan.step1_cost = reversed_cost(plan.q, pieces1, a, 16);
  plan.step2_cost = reversed_cost(plan.q, eta_hat2.pieces, a, 16);
  plan.step3_cost = reversed_cost(plan.q, pieces_of(plan.eta_hat), a, 2);
  plan.step2_eps = plan.kappa2 * std::exp(plan.kappa2) * log_delta0 +
                   (3.0 * plan.kappa2 * eT + 2.0 * plan.kappa2) / a.delta0();
  plan.step3_eps = plan.lipschitz * plan.kappa3 * (log_delta0 + std::abs(std::log(plan.delta)) + 1.0) +
                   plan.lipschitz * plan.kappa3 * horizon * eT / a.delta0();
  return plan;
}

// ---------------------------------------------------------------------------
// The controlled chain built from a plan

/// eps0 with exp(T) eps0 (1 + delta0 T) = eps.
inline double suggested_eps0(double eps, double horizon, double delta0) {
  return eps * std::exp(-horizon) / (1.0 + delta0 * horizon);
}

struct IidTailEstimate {
  std::size_t n0 = 0;
  double probability = 0.0;  // empirical P(|L - q| >= eps0) at n0
  std::vector<std::pair<std::size_t, double>> trail;  // (n, probability) for every n tried
};

/// Smallest n in the doubling sequence n_start, 2 n_start, ... at which the
/// empirical probability that |(delta_{x0} + sum_{i<n} delta_{Y_i})/n - q|
/// >= eps0, Y_i iid q, is at most eps.
inline IidTailEstimate estimate_n0(const ProbVec& q, std::size_t x0, double eps0, double eps, std::size_t samples,
                                   std::uint64_t seed, std::size_t n_start = 16, std::size_t n_max = 1u << 22) {
  if (x0 >= q.size()) throw PreconditionError("estimate_n0: initial state out of range");
  if (!(eps0 > 0.0) || !(eps > 0.0) || samples == 0) throw PreconditionError("estimate_n0: bad arguments");
  IidTailEstimate out;
  const std::size_t d = q.size();
  std::vector<double> counts(d);
  for (std::size_t n = std::max<std::size_t>(n_start, 2); n <= n_max; n *= 2) {
    std::size_t hits = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      CounterRng rng(seed, (static_cast<std::uint64_t>(n) << 32) ^ s);
      std::fill(counts.begin(), counts.end(), 0.0);
      counts[x0] = 1.0;
      for (std::size_t i = 1; i < n; ++i) counts[sample_categorical(q.weights(), rng.uniform())] += 1.0;
      double dist = 0.0;
      for (std::size_t x = 0; x < d; ++x) dist += std::abs(counts[x] / static_cast<double>(n) - q[x]);
      if (dist >= eps0) ++hits;
    }
    const double p = static_cast<double>(hits) / static_cast<double>(samples);
    out.trail.emplace_back(n, p);
    if (p <= eps) {
      out.n0 = n;
      out.probability = p;
      return out;
    }
  }
  throw ResourceLimitError("estimate_n0: tail probability still above eps at n_max");
}

struct ConstructionRun {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t a0 = 0;  // m(t_n - T)
  double eps0 = 0.0;
  bool An_occurred = false;
  double cost_occupation = 0.0;  // R(beta^n || theta^n)
  double cost_stepsum = 0.0;     // n^{-1} sum_k R(mu^{n,k} || rho(Lbar^{n,k}))
  ProbVec terminal;              // Lbar^{n,n+1} = Lbar^n(t_n)
  double terminal_error = 0.0;   // |Lbar^n(t_n) - Mhat_J|
  ControlledPath path;
};

/// Phase (i): mu = q for steps 1..a0+1. At step a0+2 the event
/// A_n = {|Lbar^{n,a0+2} - q| >= eps0} is decided; on A_n the zero-cost control
/// is used from then on, otherwise step i with t_i in
/// [sigma + j c, sigma + (j+1) c), sigma = t_{a0+1}, c = kappa3, uses slot j
/// of the plan, and the zero-cost control once t_i passes
/// sigma + (floor(T/c) + 1) c.
inline ConstructionRun run_construction(const ReversedPlan& plan, const Kernel& a, std::size_t x0, std::size_t n,
                                        double eps0, std::uint64_t seed, std::uint64_t stream = 0,
                                        bool keep_path = false) {
  if (plan.q.size() != a.dim()) throw PreconditionError("run_construction: dimension mismatch");
  if (!(eps0 > 0.0)) throw PreconditionError("run_construction: eps0 must be > 0");
  const TimeGrid grid(n + 1);
  const double tn = grid[n];
  if (tn < plan.horizon) {
    std::ostringstream os;
    os << "run_construction: n = " << n << " is too small (t_n = " << tn << " < T = " << plan.horizon << ")";
    throw PreconditionError(os.str());
  }
  ConstructionRun run;
  run.n = n;
  run.seed = seed;
  run.eps0 = eps0;
  run.a0 = tn - plan.horizon <= 0.0 ? 0 : grid.index_at(tn - plan.horizon);
  if (run.a0 + 2 > n) throw PreconditionError("run_construction: n too small for the iid phase");
  const double sigma = grid[run.a0 + 1];
  const double c = plan.step();
  const auto last_slot = static_cast<std::size_t>(std::floor(plan.horizon / c + 1e-9));
  const double stop = sigma + static_cast<double>(last_slot + 1) * c;
  bool decided = false;
  auto policy = [&](std::size_t k, std::span<const double> l, std::span<const double> rho, std::span<double> mu) {
    if (k <= run.a0 + 1) {
      std::copy(plan.q.begin(), plan.q.end(), mu.begin());
      return;
    }
    if (!decided) {
      decided = true;
      run.An_occurred = l1_distance(l, plan.q.weights()) >= eps0;
    }
    const double t = grid[k];
    if (run.An_occurred || t >= stop) {
      std::copy(rho.begin(), rho.end(), mu.begin());
      return;
    }
    const auto j = static_cast<std::size_t>(std::max(0.0, std::floor((t - sigma) / c)));
    const auto ctrl = plan.slot(std::min(j, last_slot));
    std::copy(ctrl.begin(), ctrl.end(), mu.begin());
  };
  ControlledPath path = simulate_controlled(a, x0, n, seed, policy, stream);
  const ChainRuleCheck costs = verify_chain_rule_identity(path);
  run.cost_occupation = costs.lhs;
  run.cost_stepsum = costs.rhs;
  std::vector<double> term = path.terminal();
  run.terminal_error = l1_distance(term, plan.M_hat.node(plan.intervals()));
  run.terminal = ProbVec(std::move(term));
  if (keep_path) run.path = std::move(path);
  return run;
}

struct CostCheckRow {
  std::size_t n = 0;
  std::size_t seeds = 0;
  double mean_cost = 0.0;       // Monte Carlo E[R(beta^n || theta^n)]
  double stderr_cost = 0.0;
  double mean_terminal_error = 0.0;
  double An_frequency = 0.0;
  double max_identity_gap = 0.0;  // max |cost_occupation - cost_stepsum|
  double quadrature = 0.0;        // e^{-T} int_0^T e^s R(etahat3 || K(Mhat3)) ds
  double allowance = 0.0;         // e^{-T} log(1/delta0)
  double limit = 0.0;             // quadrature + e^{-T} R(q || K(q))
  double gap = 0.0;               // |mean_cost - limit|
};

struct CostCheckReport {
  std::vector<CostCheckRow> rows;
  std::vector<ConstructionRun> runs;  // without paths, ordered by (n, seed)
};

/// Monte Carlo estimate of the construction's cost for each n against the
/// plan's quadrature cost. Run s of each size uses seed `seed + s`.
inline CostCheckReport cost_convergence_check(const ReversedPlan& plan, const Kernel& a, std::size_t x0,
                                              const std::vector<std::size_t>& n_list, std::size_t seeds, double eps0,
                                              std::uint64_t seed, unsigned threads = 1) {
  CostCheckReport rep;
  const double quad = reversed_cost(plan.q, pieces_of(plan.eta_hat), a, 2);
  std::vector<double> kq(a.dim());
  a.apply(plan.q.weights(), kq);
  const double tail = std::exp(-plan.horizon);
  for (std::size_t n : n_list) {
    std::vector<ConstructionRun> runs(seeds);
    parallel_for(seeds, threads, [&](std::size_t s) {
      runs[s] = run_construction(plan, a, x0, n, eps0, seed + static_cast<std::uint64_t>(s));
    });
    CostCheckRow row;
    row.n = n;
    row.seeds = seeds;
    double sum = 0.0, sq = 0.0, err = 0.0, an = 0.0;
    for (const auto& r : runs) {
      sum += r.cost_occupation;
      sq += r.cost_occupation * r.cost_occupation;
      err += r.terminal_error;
      an += r.An_occurred ? 1.0 : 0.0;
      row.max_identity_gap = std::max(row.max_identity_gap, std::abs(r.cost_occupation - r.cost_stepsum));
    }
    const double k = static_cast<double>(seeds);
    row.mean_cost = sum / k;
    row.stderr_cost = seeds > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / k) / (k - 1.0)) / k) : 0.0;
    row.mean_terminal_error = err / k;
    row.An_frequency = an / k;
    row.quadrature = quad;
    row.allowance = tail * std::log(1.0 / a.delta0());
    row.limit = quad + tail * relative_entropy(plan.q.weights(), kq);
    row.gap = std::abs(row.mean_cost - row.limit);
    rep.rows.push_back(row);
    for (auto& r : runs) rep.runs.push_back(std::move(r));
  }
  return rep;
}

inline void write_construction_csv(std::ostream& os, const std::vector<ConstructionRun>& runs) {
  csv::write_row(os, {"n", "seed", "An_flag", "terminal_error", "cost_occupation", "cost_stepsum"});
  for (const auto& r : runs)
    csv::write_row(os, {std::to_string(r.n), std::to_string(r.seed), r.An_occurred ? "1" : "0",
                        csv::num(r.terminal_error), csv::num(r.cost_occupation), csv::num(r.cost_stepsum)});
}

}  // namespace rldp
