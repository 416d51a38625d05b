#pragma once

// The acceptance suite as a library routine, so the CLI can run it at a
// reduced scale. Sample counts (paths, seeds, random controls) are multiplied
// by `scale`; tolerances never change.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rldp/chain.hpp"
#include "rldp/csv.hpp"
#include "rldp/exact_law.hpp"
#include "rldp/lowerbound.hpp"
#include "rldp/measures.hpp"
#include "rldp/rate_solver.hpp"
#include "rldp/rng.hpp"
#include "rldp/time_grid.hpp"

namespace rldp {

struct ValidationOptions {
  double scale = 1.0;
  std::uint64_t seed = 20240601;
  unsigned threads = 1;
  std::vector<int> only;  // empty: all twelve
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  double value = 0.0;      // the measured quantity compared against threshold
  double threshold = 0.0;
  std::string detail;
  double seconds = 0.0;    // wall time; not written to CSV
};

namespace validation {

inline std::size_t scaled(std::size_t full, double scale, std::size_t floor = 1) {
  return std::max(floor, static_cast<std::size_t>(std::llround(static_cast<double>(full) * scale)));
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline Kernel two_state() { return Kernel({{0.9, 0.1}, {0.2, 0.8}}); }

/// Kernel with rows uniform on [0.05, 1] then normalized.
inline Kernel random_kernel(std::size_t d, CounterRng& rng) {
  std::vector<std::vector<double>> rows(d, std::vector<double>(d));
  for (auto& r : rows) {
    double s = 0.0;
    for (double& v : r) s += (v = 0.05 + 0.95 * rng.uniform());
    for (double& v : r) v /= s;
  }
  return Kernel(rows);
}

inline std::vector<double> random_simplex(std::size_t d, CounterRng& rng) {
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) s += (x = -std::log(1.0 - rng.uniform()));
  for (double& x : v) x /= s;
  return v;
}

/// Interior m and a control (1-s) m + s r that keeps M at least `margin` away
/// from zero.
inline std::pair<std::vector<double>, std::vector<double>> random_feasible_control(std::size_t d, std::size_t intervals,
                                                                                   double horizon, CounterRng& rng,
                                                                                   double margin = 1e-3) {
  for (;;) {
    std::vector<double> m = random_simplex(d, rng);
    for (double& x : m) x = 0.1 / static_cast<double>(d) + 0.9 * x;
    std::vector<double> eta;
    for (std::size_t j = 0; j < intervals; ++j) {
      const auto r = random_simplex(d, rng);
      for (std::size_t x = 0; x < d; ++x) eta.push_back(0.7 * m[x] + 0.3 * r[x]);
    }
    const TrajectoryGrid g = integrate_forward(m, eta, d, horizon);
    if (*std::min_element(g.nodes.begin(), g.nodes.end()) >= margin) return {m, eta};
  }
}

inline double sanov_entropy(std::span<const double> m, std::span<const double> p) { return relative_entropy(m, p); }

struct LabSetup {
  Kernel a = two_state();
  ProbVec m{0.3, 0.7};
  double solver_horizon = 8.0;
  std::size_t solver_intervals = 160;
  double plan_horizon = 3.0;
  double eps = 0.05;
  double eps0 = 0.3;
};

}  // namespace validation

/// Runs the selected criteria in order of id.
inline std::vector<CriterionResult> run_validation(const ValidationOptions& opts) {
  using namespace validation;
  const double s = opts.scale;
  if (!(s > 0.0 && s <= 1.0)) throw PreconditionError("validate: scale must lie in (0, 1]");
  auto wanted = [&](int id) { return opts.only.empty() || std::find(opts.only.begin(), opts.only.end(), id) != opts.only.end(); };
  std::vector<CriterionResult> out;
  auto run = [&](int id, const char* name, const std::function<void(CriterionResult&)>& body) {
    if (!wanted(id)) return;
    CriterionResult r;
    r.id = id;
    r.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    body(r);
    if (r.seconds == 0.0) r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(r);
  };

  run(1, "sanov_reduction", [&](CriterionResult& r) {
    const ProbVec p{0.7, 0.3};
    const Kernel a({{0.7, 0.3}, {0.7, 0.3}});
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const double m1 = (i + 0.5) / 20.0;
      const ProbVec m{m1, 1.0 - m1};
      const RateBracket b = solve_rate(m, a, 14.0, 280);
      worst = std::max(worst, std::abs(b.lower - sanov_entropy(m.weights(), p.weights())));
    }
    r.value = worst;
    r.threshold = 1e-3;
    r.passed = worst <= r.threshold;
    r.detail = "max |lower - R(m||p)| over 20 points";
  });

  run(2, "zero_at_lln_limit", [&](CriterionResult& r) {
    CounterRng rng(opts.seed, 2);
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
      const Kernel a = random_kernel(i % 2 == 0 ? 2 : 3, rng);
      const RateBracket b = solve_rate(stationary_distribution(a), a, 14.0, 280);
      worst = std::max(worst, b.lower);
    }
    r.value = worst;
    r.threshold = 1e-6;
    r.passed = worst <= r.threshold;
    r.detail = "max lower at m_* over 5 random kernels";
  });

  run(3, "exact_law_vs_simulation", [&](CriterionResult& r) {
    const Kernel a = two_state();
    const std::size_t n = 20;
    const std::size_t paths = scaled(100000, s, 1000);
    const CountLaw law = exact_law(a, 0, n);
    std::vector<double> hist(n + 1, 0.0);
    std::vector<std::size_t> first(paths);
    parallel_for(paths, opts.threads, [&](std::size_t i) {
      const ChainPath p = simulate_chain(a, 0, n, opts.seed, i);
      first[i] = static_cast<std::size_t>(p.count_row(n)[0]);
    });
    for (std::size_t c : first) hist[c] += 1.0 / static_cast<double>(paths);
    double tv = 0.0;
    std::vector<double> exact(n + 1, 0.0);
    for (const auto& at : law.atoms) exact[static_cast<std::size_t>(at.counts[0])] = at.probability;
    for (std::size_t c = 0; c <= n; ++c) tv += 0.5 * std::abs(hist[c] - exact[c]);
    r.value = tv;
    r.threshold = 0.015;
    r.passed = tv <= r.threshold;
    r.detail = std::to_string(paths) + " paths, n=20";
  });

  run(4, "finite_n_rate_vs_bracket", [&](CriterionResult& r) {
    const Kernel a = two_state();
    const ProbVec m{0.3, 0.7};
    const RateBracket b = solve_rate(m, a, 14.0, 280);
    const auto rates = finite_n_rate(a, 0, m, 0.05, {50, 100, 200});
    std::vector<double> dist;
    for (const auto& x : rates) dist.push_back(x.rate < b.lower ? b.lower - x.rate : std::max(0.0, x.rate - b.upper));
    const bool monotone = dist[1] <= dist[0] && dist[2] <= dist[1];
    r.value = dist[2];
    r.threshold = 0.15;
    r.passed = monotone && dist[2] <= r.threshold;
    r.detail = "distances " + fmt(dist[0]) + " " + fmt(dist[1]) + " " + fmt(dist[2]) +
               (monotone ? " (nonincreasing)" : " (NOT nonincreasing)");
  });

  run(5, "chain_rule_identity", [&](CriterionResult& r) {
    const std::size_t policies = scaled(100, s);
    std::vector<double> gap(policies);
    parallel_for(policies, opts.threads, [&](std::size_t i) {
      CounterRng prng(opts.seed ^ 0x5eedu, i);
      const Kernel a = random_kernel(2 + i % 3, prng);
      const std::size_t d = a.dim();
      std::vector<double> table(100 * d);
      for (std::size_t k = 0; k < 100; ++k) {
        const auto v = random_simplex(d, prng);
        std::copy(v.begin(), v.end(), table.begin() + static_cast<std::ptrdiff_t>(k * d));
      }
      const double w = prng.uniform();
      auto policy = [&](std::size_t k, std::span<const double>, std::span<const double> rho, std::span<double> mu) {
        for (std::size_t x = 0; x < d; ++x) mu[x] = w * table[(k - 1) * d + x] + (1.0 - w) * rho[x];
      };
      const ControlledPath p = simulate_controlled(a, 0, 100, opts.seed, policy, i);
      const ChainRuleCheck c = verify_chain_rule_identity(p);
      gap[i] = std::abs(c.lhs - c.rhs);
    });
    r.value = *std::max_element(gap.begin(), gap.end());
    r.threshold = 1e-8;
    r.passed = r.value <= r.threshold;
    r.detail = std::to_string(policies) + " random policies, n=100";
  });

  run(6, "interpolation_asymptotics", [&](CriterionResult& r) {
    const std::size_t n = 100000;
    const TimeGrid grid(n + 1);
    const double tn = grid[n];
    double worst = 0.0;
    for (double t : {0.0, 0.5, 1.0, 2.0})
      worst = std::max(worst, std::abs(static_cast<double>(grid.index_at(tn - t)) / n - std::exp(-t)));
    double worst_psi = 0.0;
    for (int i = 0; i <= 2000; ++i) {
      const double u = 2.0 * i / 2000.0;
      const GridPoint g = grid_functions(tn - u, grid);
      worst_psi = std::max(worst_psi, std::abs(static_cast<double>(g.psi_e) / n - std::exp(-u)));
    }
    r.value = std::max(worst, worst_psi);
    r.threshold = 0.01;
    r.passed = r.value <= r.threshold;
    r.detail = "m(t_n-t)/n: " + fmt(worst) + ", psi_e(t_n-s)/n: " + fmt(worst_psi);
  });

  run(7, "gradient_vs_finite_differences", [&](CriterionResult& r) {
    CounterRng rng(opts.seed, 7);
    const std::size_t controls = scaled(50, s);
    double worst = 0.0;
    for (std::size_t c = 0; c < controls; ++c) {
      const std::size_t d = 2 + c % 2;
      const Kernel a = random_kernel(d, rng);
      const double horizon = 1.0;
      const std::size_t intervals = 8;
      auto [m, eta] = random_feasible_control(d, intervals, horizon, rng);
      const auto g = cost_gradient(m, eta, d, horizon, a);
      for (std::size_t i = 0; i < eta.size(); ++i) {
        auto up = eta, dn = eta;
        up[i] += 1e-6;
        dn[i] -= 1e-6;
        const double fd = (discounted_cost(m, up, d, horizon, a) - discounted_cost(m, dn, d, horizon, a)) / 2e-6;
        worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-4}));
      }
    }
    r.value = worst;
    r.threshold = 1e-5;
    r.passed = worst <= r.threshold;
    r.detail = std::to_string(controls) + " random interior controls";
  });

  run(8, "objective_convexity", [&](CriterionResult& r) {
    CounterRng rng(opts.seed, 8);
    const std::size_t pairs = scaled(200, s);
    double worst = -kInfinity;
    const Kernel a = two_state();
    for (std::size_t c = 0; c < pairs; ++c) {
      const double horizon = 2.0;
      const std::size_t intervals = 10;
      auto [m, e1] = random_feasible_control(2, intervals, horizon, rng, 0.0);
      std::vector<double> e2;
      for (;;) {
        e2.clear();
        for (std::size_t j = 0; j < intervals; ++j) {
          const auto v = random_simplex(2, rng);
          for (std::size_t x = 0; x < 2; ++x) e2.push_back(0.7 * m[x] + 0.3 * v[x]);
        }
        if (integrate_forward(m, e2, 2, horizon).all_feasible()) break;
      }
      const double lam = rng.uniform();
      std::vector<double> mix(e1.size());
      for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = lam * e1[i] + (1.0 - lam) * e2[i];
      const double lhs = discounted_cost(m, mix, 2, horizon, a);
      const double rhs = lam * discounted_cost(m, e1, 2, horizon, a) + (1.0 - lam) * discounted_cost(m, e2, 2, horizon, a);
      worst = std::max(worst, lhs - rhs);
    }
    r.value = std::max(worst, 0.0);
    r.threshold = 1e-10;
    r.passed = worst <= r.threshold;
    r.detail = std::to_string(pairs) + " random pairs; max cost(mix) - mix of costs = " + fmt(worst);
  });

  if (wanted(9) || wanted(10)) {
    const LabSetup lab;
    const auto t0 = std::chrono::steady_clock::now();
    const RateBracket solved = solve_rate(lab.m, lab.a, lab.solver_horizon, lab.solver_intervals);
    PlanOptions po;
    po.eps = lab.eps;
    const ReversedPlan plan = build_plan(lab.m, lab.a, lab.plan_horizon, po, solved);
    const std::size_t seeds = scaled(200, s, 10);
    const CostCheckReport rep =
        cost_convergence_check(plan, lab.a, 0, {1000, 2000, 3000, 4000, 8000, 10000}, seeds, lab.eps0, opts.seed, opts.threads);
    const double shared = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::map<std::size_t, CostCheckRow> by_n;
    for (const auto& row : rep.rows) by_n[row.n] = row;

    run(9, "construction_concentration", [&](CriterionResult& r) {
      const double e1 = by_n[1000].mean_terminal_error, e3 = by_n[3000].mean_terminal_error,
                   e4 = by_n[10000].mean_terminal_error;
      r.value = e4;
      r.threshold = 0.05;
      r.passed = e4 <= r.threshold && e3 < e1 && e4 < e3;
      r.detail = "mean terminal error at n=1e3,3e3,1e4: " + fmt(e1) + " " + fmt(e3) + " " + fmt(e4) + "; " +
                 std::to_string(seeds) + " seeds";
      r.seconds = shared;
    });

    run(10, "construction_cost", [&](CriterionResult& r) {
      const CostCheckRow& top = by_n[10000];
      const double lo = top.quadrature - 0.05;
      const double hi = top.quadrature + top.allowance + 0.05;
      const double excess = std::max({0.0, lo - top.mean_cost, top.mean_cost - hi});
      std::vector<double> gaps;
      for (std::size_t n : {1000, 2000, 4000, 8000}) gaps.push_back(by_n[n].gap);
      bool improving = true;
      for (std::size_t i = 1; i < gaps.size(); ++i) improving = improving && gaps[i] < gaps[i - 1];
      r.value = excess;
      r.threshold = 0.0;
      r.passed = excess <= 0.0 && improving;
      r.detail = "MC cost " + fmt(top.mean_cost) + " vs quadrature " + fmt(top.quadrature) + " + allowance " +
                 fmt(top.allowance) + "; gaps n=1e3..8e3: " + fmt(gaps[0]) + " " + fmt(gaps[1]) + " " + fmt(gaps[2]) +
                 " " + fmt(gaps[3]);
      r.seconds = shared;
    });
  }

  run(11, "dv_solver", [&](CriterionResult& r) {
    const Kernel a = two_state();
    double worst = 0.0;
    for (std::size_t x = 0; x < 2; ++x)
      worst = std::max(worst, std::abs(solve_dv_rate(ProbVec::point_mass(2, x), a) + std::log(a(x, x))));
    const double at_star = solve_dv_rate(stationary_distribution(a), a);
    const Kernel rank_one({{0.7, 0.3}, {0.7, 0.3}});
    double rank_err = 0.0;
    for (double t : {0.1, 0.3, 0.5, 0.9}) {
      const ProbVec theta{t, 1.0 - t};
      rank_err = std::max(rank_err, std::abs(solve_dv_rate(theta, rank_one) - relative_entropy(theta.weights(), rank_one.row(0))));
    }
    r.value = std::max(worst, at_star);
    r.threshold = 1e-8;
    r.passed = worst <= 1e-8 && at_star <= 1e-8 && rank_err <= 1e-6;
    r.detail = "point mass err " + fmt(worst) + ", at m_* " + fmt(at_star) + ", rank-one err " + fmt(rank_err);
  });

  run(12, "determinism", [&](CriterionResult& r) {
    auto render = [&] {
      std::ostringstream os;
      const Kernel a = two_state();
      for (std::uint64_t k = 0; k < 3; ++k) write_path_csv(os, simulate_chain(a, 0, 200, opts.seed, k));
      const auto rows = rate_profile(a, {ProbVec{0.3, 0.7}, ProbVec{0.5, 0.5}}, 6.0, 60, {}, true, opts.threads);
      write_rate_csv(os, rows, true);
      return os.str();
    };
    const bool same = render() == render();
    r.value = same ? 0.0 : 1.0;
    r.threshold = 0.0;
    r.passed = same;
    r.detail = "simulate and rate outputs rendered twice in-process";
  });
  return out;
}

inline void write_validation_csv(std::ostream& os, const std::vector<CriterionResult>& rows) {
  csv::write_row(os, {"id", "name", "passed", "value", "threshold", "detail"});
  for (const auto& r : rows) {
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    csv::write_row(os, {std::to_string(r.id), r.name, r.passed ? "1" : "0", csv::num(r.value), csv::num(r.threshold),
                        detail});
  }
}

}  // namespace rldp
