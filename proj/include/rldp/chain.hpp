#pragma once

// Reinforced chain X_{k} ~ L^k A, the controlled chain driven by arbitrary
// controls mu, its piecewise-linear time interpolation on the logarithmic
// grid, time reversal, and the discounted occupation measures beta / theta.

#include <cstdint>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "rldp/csv.hpp"
#include "rldp/error.hpp"
#include "rldp/measures.hpp"
#include "rldp/rng.hpp"
#include "rldp/time_grid.hpp"

namespace rldp {

/// Uncontrolled path X_0..X_{n-1} (0-based states) with running counts.
/// counts row k-1 holds the visit counts of X_0..X_{k-1}, so L^k = row / k.
struct ChainPath {
  std::size_t d = 0;
  std::size_t x0 = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> states;
  std::vector<std::int64_t> counts;

  std::size_t steps() const { return states.size(); }
  std::span<const std::int64_t> count_row(std::size_t k) const { return {counts.data() + (k - 1) * d, d}; }
  /// L^k for 1 <= k <= steps().
  std::vector<double> empirical(std::size_t k) const {
    std::vector<double> l(d);
    auto c = count_row(k);
    for (std::size_t x = 0; x < d; ++x) l[x] = static_cast<double>(c[x]) / static_cast<double>(k);
    return l;
  }
};

/// Simulates n states of the reinforced chain. `stream` selects an
/// independent random stream under the same seed.
inline ChainPath simulate_chain(const Kernel& a, std::size_t x0, std::size_t n, std::uint64_t seed,
                                std::uint64_t stream = 0) {
  const std::size_t d = a.dim();
  if (n < 1) throw PreconditionError("simulate_chain: n must be >= 1");
  if (x0 >= d) throw PreconditionError("simulate_chain: initial state out of range");
  ChainPath p{d, x0, seed, {}, {}};
  p.states.reserve(n);
  p.counts.assign(n * d, 0);
  p.states.push_back(x0);
  p.counts[x0] = 1;
  CounterRng rng(seed, stream);
  std::vector<double> l(d), rho(d);
  for (std::size_t k = 1; k < n; ++k) {
    const std::int64_t* prev = p.counts.data() + (k - 1) * d;
    for (std::size_t x = 0; x < d; ++x) l[x] = static_cast<double>(prev[x]) / static_cast<double>(k);
    a.apply(l, rho);
    const std::size_t next = sample_categorical(rho, rng.uniform());
    p.states.push_back(next);
    std::int64_t* cur = p.counts.data() + k * d;
    std::copy(prev, prev + d, cur);
    ++cur[next];
  }
  return p;
}

/// Controlled path for horizon n. Step k = 1..n uses control mu^{n,k},
/// evaluated at Lbar^{n,k}, draws nu^{n,k} ~ mu^{n,k} and produces
/// Lbar^{n,k+1}. Lbar^{n,1} = delta_{x0}.
struct ControlledPath {
  std::size_t d = 0;
  std::size_t x0 = 0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> draws;    // nu^{n,k} as state indices, k = 1..n
  std::vector<std::int64_t> counts;  // row k-1: counts behind Lbar^{n,k}, k = 1..n+1
  std::vector<double> mu;            // row k-1: mu^{n,k}
  std::vector<double> rho;           // row k-1: rho(Lbar^{n,k}) = Lbar^{n,k} A

  std::span<const double> control(std::size_t k) const { return {mu.data() + (k - 1) * d, d}; }
  std::span<const double> reference(std::size_t k) const { return {rho.data() + (k - 1) * d, d}; }
  /// Lbar^{n,k} for 1 <= k <= n+1.
  std::vector<double> empirical(std::size_t k) const {
    std::vector<double> l(d);
    const std::int64_t* c = counts.data() + (k - 1) * d;
    for (std::size_t x = 0; x < d; ++x) l[x] = static_cast<double>(c[x]) / static_cast<double>(k);
    return l;
  }
  std::vector<double> terminal() const { return empirical(n + 1); }

  /// n^{-1} sum_k R(mu^{n,k} || rho(Lbar^{n,k})).
  double step_cost() const {
    double s = 0.0;
    for (std::size_t k = 1; k <= n; ++k) s += relative_entropy(control(k), reference(k));
    return s / static_cast<double>(n);
  }
};

/// The zero-cost control mu = rho(Lbar).
struct ZeroCostPolicy {
  void operator()(std::size_t, std::span<const double>, std::span<const double> rho, std::span<double> mu) const {
    std::copy(rho.begin(), rho.end(), mu.begin());
  }
};

/// Runs the controlled chain. The policy is invoked as
/// policy(k, Lbar^{n,k}, rho(Lbar^{n,k}), mu_out) and must write a probability
/// vector into mu_out. Policies may carry state across calls (they are called
/// in increasing k), which is how history-dependent constructions are built.
template <class Policy>
ControlledPath simulate_controlled(const Kernel& a, std::size_t x0, std::size_t n, std::uint64_t seed,
                                   Policy&& policy, std::uint64_t stream = 0) {
  const std::size_t d = a.dim();
  if (n < 1) throw PreconditionError("simulate_controlled: n must be >= 1");
  if (x0 >= d) throw PreconditionError("simulate_controlled: initial state out of range");
  ControlledPath p;
  p.d = d;
  p.x0 = x0;
  p.n = n;
  p.seed = seed;
  p.draws.reserve(n);
  p.counts.assign((n + 1) * d, 0);
  p.mu.assign(n * d, 0.0);
  p.rho.assign(n * d, 0.0);
  p.counts[x0] = 1;
  CounterRng rng(seed, stream);
  std::vector<double> l(d);
  for (std::size_t k = 1; k <= n; ++k) {
    const std::int64_t* prev = p.counts.data() + (k - 1) * d;
    for (std::size_t x = 0; x < d; ++x) l[x] = static_cast<double>(prev[x]) / static_cast<double>(k);
    std::span<double> rho(p.rho.data() + (k - 1) * d, d);
    std::span<double> mu(p.mu.data() + (k - 1) * d, d);
    a.apply(l, rho);
    policy(k, std::span<const double>(l), std::span<const double>(rho), mu);
    std::vector<double> check(mu.begin(), mu.end());
    try {
      snap_to_simplex(check, "control");
    } catch (const PreconditionError& e) {
      throw PreconditionError(std::string("simulate_controlled: policy returned an invalid probability vector: ") +
                              e.what());
    }
    std::copy(check.begin(), check.end(), mu.begin());
    const std::size_t next = sample_categorical(mu, rng.uniform());
    p.draws.push_back(next);
    std::int64_t* cur = p.counts.data() + k * d;
    std::copy(prev, prev + d, cur);
    ++cur[next];
  }
  return p;
}

/// Continuous-time view t -> Lbar^n(t) on [0, t_n]: Lbar^n(t_k) = Lbar^{n,k+1},
/// linear in between. Holds a reference to the path.
class InterpolatedPath {
 public:
  explicit InterpolatedPath(const ControlledPath& path) : path_(&path), grid_(path.n + 1) {}

  double horizon() const { return grid_[path_->n]; }
  const TimeGrid& grid() const { return grid_; }

  std::vector<double> operator()(double t) const {
    const double tn = horizon();
    if (!(t >= 0.0) || t > tn) throw PreconditionError("InterpolatedPath: time outside [0, t_n]");
    if (t == tn) return path_->empirical(path_->n + 1);
    const std::size_t k = grid_.index_at(t);
    std::vector<double> lo = path_->empirical(k + 1);
    if (t == grid_[k]) return lo;
    const std::vector<double> hi = path_->empirical(k + 2);
    const double frac = static_cast<double>(k + 2) * (t - grid_[k]);
    for (std::size_t x = 0; x < lo.size(); ++x) lo[x] += frac * (hi[x] - lo[x]);
    return lo;
  }

 private:
  const ControlledPath* path_;
  TimeGrid grid_;
};

inline InterpolatedPath interpolate_path(const ControlledPath& path) { return InterpolatedPath(path); }

/// Lcheck^n(t) = Lbar^n(t_n - t) for t <= t_n, Lbar^n(0) afterwards.
class ReversedPath {
 public:
  explicit ReversedPath(const InterpolatedPath& forward) : fwd_(&forward) {}

  std::vector<double> operator()(double t) const {
    if (!(t >= 0.0)) throw PreconditionError("ReversedPath: negative time");
    const double tn = fwd_->horizon();
    return t >= tn ? (*fwd_)(0.0) : (*fwd_)(tn - t);
  }

 private:
  const InterpolatedPath* fwd_;
};

inline ReversedPath reverse_path(const InterpolatedPath& forward) { return ReversedPath(forward); }

/// One atom of beta^n / theta^n: state x on the reversed-time interval
/// [t_lo, t_hi] = [t_n - t_{k+1}, t_n - t_k] for step k = 0..n-1.
struct OccupationAtom {
  std::size_t state;
  double t_lo;
  double t_hi;
  double beta;
  double theta;
};

struct DiscountedOccupation {
  std::size_t d = 0;
  std::vector<OccupationAtom> atoms;

  double beta_mass() const {
    double s = 0.0;
    for (const auto& at : atoms) s += at.beta;
    return s;
  }
  double theta_mass() const {
    double s = 0.0;
    for (const auto& at : atoms) s += at.theta;
    return s;
  }
  /// R(beta || theta) over the atoms.
  double relative_entropy() const {
    std::vector<double> b, t;
    b.reserve(atoms.size());
    t.reserve(atoms.size());
    for (const auto& at : atoms) {
      b.push_back(at.beta);
      t.push_back(at.theta);
    }
    return rldp::relative_entropy(b, t);
  }
};

/// Atoms of beta^n and theta^n. Step k contributes the interval
/// [t_k, t_{k+1}) of forward time, carrying psi_e = k+2, so its weight is
/// (k+2)(t_{k+1} - t_k)/n, split over states by mu^{n,k+1} and
/// rho(Lbar^{n,k+1}) respectively.
inline DiscountedOccupation occupation_measures(const ControlledPath& path) {
  const TimeGrid grid(path.n + 1);
  const double tn = grid[path.n];
  DiscountedOccupation occ;
  occ.d = path.d;
  occ.atoms.reserve(path.n * path.d);
  for (std::size_t k = 0; k < path.n; ++k) {
    const double w = static_cast<double>(k + 2) * (grid[k + 1] - grid[k]) / static_cast<double>(path.n);
    const auto mu = path.control(k + 1);
    const auto rho = path.reference(k + 1);
    for (std::size_t x = 0; x < path.d; ++x)
      occ.atoms.push_back({x, tn - grid[k + 1], tn - grid[k], w * mu[x], w * rho[x]});
  }
  return occ;
}

struct ChainRuleCheck {
  double lhs;  // R(beta^n || theta^n)
  double rhs;  // n^{-1} sum_k R(mu^{n,k} || rho(Lbar^{n,k}))
};

inline ChainRuleCheck verify_chain_rule_identity(const ControlledPath& path) {
  const ChainRuleCheck c{occupation_measures(path).relative_entropy(), path.step_cost()};
  if (!std::isfinite(c.lhs) || !std::isfinite(c.rhs))
    throw NumericalError("verify_chain_rule_identity: control charges a state where rho vanishes");
  return c;
}

// CSV exports. States are written 1-based.

inline void write_path_csv(std::ostream& os, const ChainPath& p) {
  std::vector<std::string> head{"step", "state"};
  auto lh = csv::indexed_header("L_", p.d);
  head.insert(head.end(), lh.begin(), lh.end());
  csv::write_row(os, head);
  for (std::size_t k = 0; k < p.steps(); ++k) {
    std::vector<std::string> row{std::to_string(k), std::to_string(p.states[k] + 1)};
    csv::append(row, p.empirical(k + 1));
    csv::write_row(os, row);
  }
}

inline void write_path_csv(std::ostream& os, const ControlledPath& p) {
  std::vector<std::string> head{"step", "state"};
  auto lh = csv::indexed_header("L_", p.d);
  head.insert(head.end(), lh.begin(), lh.end());
  csv::write_row(os, head);
  for (std::size_t k = 1; k <= p.n; ++k) {
    std::vector<std::string> row{std::to_string(k), std::to_string(p.draws[k - 1] + 1)};
    csv::append(row, p.empirical(k + 1));
    csv::write_row(os, row);
  }
}

inline void write_occupation_csv(std::ostream& os, const DiscountedOccupation& occ) {
  csv::write_row(os, {"state", "t_lo", "t_hi", "beta_mass", "theta_mass"});
  for (const auto& at : occ.atoms)
    csv::write_row(os, {std::to_string(at.state + 1), csv::num(at.t_lo), csv::num(at.t_hi), csv::num(at.beta),
                        csv::num(at.theta)});
}

}  // namespace rldp
