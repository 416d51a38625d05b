#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "rldp/io_json.hpp"
#include "rldp/lowerbound.hpp"

using namespace rldp;

namespace {

const Kernel kTwo({{0.9, 0.1}, {0.2, 0.8}});
const oracle::Mat kTwoRows{{0.9, 0.1}, {0.2, 0.8}};

// Small plan used across tests: horizon 1 out of a solver horizon of 2.
struct SmallPlan {
  RateBracket solved;
  ReversedPlan plan;
};

const SmallPlan& small_plan() {
  static const SmallPlan sp = [] {
    SmallPlan s;
    const ProbVec m{0.3, 0.7};
    s.solved = solve_rate(m, kTwo, 2.0, 40);
    PlanOptions opts;
    opts.eps = 0.1;
    s.plan = build_plan(m, kTwo, 1.0, opts, s.solved);
    return s;
  }();
  return sp;
}

const ReversedPlan& stationary_plan() {
  static const ReversedPlan plan = [] {
    const ProbVec star = stationary_distribution(kTwo);
    return build_plan(star, kTwo, 2.0, {}, solve_rate(star, kTwo, 4.0, 40));
  }();
  return plan;
}

std::vector<double> random_simplex(std::size_t d, CounterRng& rng) {
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) s += (x = -std::log(1.0 - rng.uniform()));
  for (double& x : v) x /= s;
  return v;
}

}  // namespace

TEST(Step1Mix, EndpointsAndFloor) {
  const SmallPlan& sp = small_plan();
  const ProbVec star = stationary_distribution(kTwo);
  const MixedControl none = step1_mix(sp.solved.eta_opt, sp.solved.m_opt, kTwo, 0.0);
  for (std::size_t i = 0; i < none.eta.values().size(); ++i)
    EXPECT_EQ(none.eta.values()[i], sp.solved.eta_opt.values()[i]);
  const MixedControl full = step1_mix(sp.solved.eta_opt, sp.solved.m_opt, kTwo, 1.0);
  for (std::size_t i = 0; i < full.eta.values().size(); ++i) EXPECT_NEAR(full.eta.values()[i], star[i % 2], 1e-15);
  EXPECT_NEAR(full.floor_actual, star.min(), 1e-15);
  EXPECT_THROW(step1_mix(sp.solved.eta_opt, sp.solved.m_opt, kTwo, 1.5), PreconditionError);

  for (double kappa : {0.05, 0.2, 0.6}) {
    const MixedControl mixed = step1_mix(sp.solved.eta_opt, sp.solved.m_opt, kTwo, kappa);
    EXPECT_GE(mixed.floor_actual, mixed.floor_guaranteed - 1e-15);
    double lowest = 1.0;
    for (double v : mixed.eta.values()) lowest = std::min(lowest, v);
    for (double v : mixed.M.nodes) lowest = std::min(lowest, v);
    EXPECT_EQ(mixed.floor_actual, lowest);
    // M1 solves the forward dynamics driven by eta1.
    const TrajectoryGrid again = integrate_forward(mixed.M.node(0), mixed.eta.values(), 2, mixed.eta.horizon());
    for (std::size_t i = 0; i < again.nodes.size(); ++i) EXPECT_NEAR(again.nodes[i], mixed.M.nodes[i], 1e-12);
    // Joint convexity and zero cost at (m_*, m_*): mixing cannot raise the cost.
    const double cost = discounted_cost(mixed.M.node(0), mixed.eta.values(), 2, mixed.eta.horizon(), kTwo);
    EXPECT_LE(cost, (1 - kappa) * sp.solved.lower + 1e-12);
  }
}

TEST(ReversedDynamics, ExactIntegratorMatchesRk4AndStaysInSimplex) {
  CounterRng rng(21, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 2 + trial % 3;
    const ProbVec q(random_simplex(d, rng));
    std::vector<double> v;
    std::vector<std::vector<double>> rows;
    for (int j = 0; j < 8; ++j) {
      rows.push_back(random_simplex(d, rng));
      v.insert(v.end(), rows.back().begin(), rows.back().end());
    }
    const PiecewiseControl c(2.0, d, v);
    const TrajectoryGrid g = integrate_reversed(q, c);
    std::vector<double> m = q.vec();
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto& e = rows[j];
      m = oracle::rk4(
          [&](double, const oracle::Vec& x) {
            oracle::Vec r(d);
            for (std::size_t i = 0; i < d; ++i) r[i] = e[i] - x[i];
            return r;
          },
          m, 0.0, 0.25, 100);
      double s = 0.0;
      for (std::size_t x = 0; x < d; ++x) {
        EXPECT_NEAR(g.node(j + 1)[x], m[x], 1e-11);
        EXPECT_GE(g.node(j + 1)[x], 0.0);
        s += g.node(j + 1)[x];
      }
      EXPECT_NEAR(s, 1.0, 1e-13);
    }
    const auto pieces = pieces_of(c);
    std::vector<double> times;
    for (int j = 0; j <= 8; ++j) times.push_back(0.25 * j);
    const auto at = reversed_trajectory_at(q, pieces, times);
    for (std::size_t j = 0; j < times.size(); ++j)
      for (std::size_t x = 0; x < d; ++x) EXPECT_NEAR(at[j][x], g.node(j)[x], 1e-13);
  }
}

TEST(ReversedDynamics, CostMatchesRk4Quadrature) {
  // Continuous piecewise-linear control on [0, 2] with three pieces.
  const std::vector<ControlPiece> pieces{{0.0, 0.5, {0.3, 0.7}, {0.2, -0.2}},
                                         {0.5, 1.5, {0.4, 0.6}, {0.3, -0.3}},
                                         {1.5, 2.0, {0.7, 0.3}, {-0.4, 0.4}}};
  auto eta = [&](double s) {
    for (const auto& p : pieces)
      if (s <= p.t1) return oracle::Vec{p.value[0] + p.slope[0] * (s - p.t0), p.value[1] + p.slope[1] * (s - p.t0)};
    return oracle::Vec{0.5, 0.5};
  };
  const ProbVec q{0.6, 0.4};
  const double ref = oracle::reversed_cost(q.vec(), eta, 2.0, kTwoRows, 40000);
  EXPECT_NEAR(reversed_cost(q, pieces, kTwo), ref, 1e-8);

  // Constant control over one long piece: closed form for a rank-one kernel.
  const Kernel rank_one({{0.7, 0.3}, {0.7, 0.3}});
  const std::vector<ControlPiece> flat{{0.0, 3.0, {0.3, 0.7}, {0.0, 0.0}}};
  // Simpson panels of width 0.02 on e^s: relative error below 1e-9.
  EXPECT_NEAR(reversed_cost(q, flat, rank_one, 2), (1 - std::exp(-3.0)) * oracle::entropy({0.3, 0.7}, {0.7, 0.3}),
              1e-9);
}

TEST(Step2Mollify, ConstantInputIsUnchanged) {
  const PiecewiseControl c = PiecewiseControl::constant(2.0, 10, ProbVec{0.4, 0.6});
  const MollifiedControl out = step2_mollify(c, 1e-3, 0.4);
  EXPECT_LE(out.lipschitz, 1e-12);
  for (double t : {0.0, 0.37, 1.999, 2.0}) {
    const auto v = out.at(t);
    EXPECT_NEAR(v[0], 0.4, 1e-15);
    EXPECT_NEAR(v[1], 0.6, 1e-15);
  }
}

TEST(Step2Mollify, IsTheSlidingWindowAverage) {
  CounterRng rng(22, 0);
  std::vector<double> v;
  for (int j = 0; j < 6; ++j) {
    const auto r = random_simplex(3, rng);
    for (double x : r) v.push_back(0.1 + 0.7 * x);
  }
  const PiecewiseControl c(1.2, 3, v);
  const double kappa = 0.04;
  const MollifiedControl out = step2_mollify(c, kappa, 1.0);
  for (int i = 0; i <= 60; ++i) {
    const double s = 1.2 * i / 60.0;
    // Midpoint rule over the window on a fine grid, extended by the last value.
    oracle::Vec avg(3, 0.0);
    const int pts = 30000;
    for (int k = 0; k < pts; ++k) {
      const double u = s + kappa * (k + 0.5) / pts;
      const std::size_t j = std::min<std::size_t>(5, static_cast<std::size_t>(u / 0.2));
      for (int x = 0; x < 3; ++x) avg[x] += c.row(j)[x] / pts;
    }
    const auto got = out.at(s);
    for (int x = 0; x < 3; ++x) EXPECT_NEAR(got[x], avg[x], 1e-4);
  }
  double lowest = 1.0;
  for (double x : v) lowest = std::min(lowest, x);
  EXPECT_GE(out.min_entry, lowest - 1e-15);
}

TEST(Step2Mollify, RejectsWindowsThatAreTooWide) {
  const PiecewiseControl c = PiecewiseControl::constant(2.0, 10, ProbVec{0.4, 0.6});
  try {
    step2_mollify(c, 0.1, 0.1);
    FAIL() << "expected an exception";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("kappa2"), std::string::npos);
  }
}

TEST(Step3Discretize, ConstantInputAndErrors) {
  const PiecewiseControl c = PiecewiseControl::constant(2.0, 10, ProbVec{0.4, 0.6});
  const MollifiedControl m = step2_mollify(c, 1e-3, 0.4);
  const PiecewiseControl d = step3_discretize(m, 0.5, 2.0, 0.4);
  EXPECT_EQ(d.intervals(), 4u);
  for (double x : d.values()) EXPECT_TRUE(std::abs(x - 0.4) < 1e-15 || std::abs(x - 0.6) < 1e-15);
  EXPECT_THROW(step3_discretize(m, 0.3, 2.0, 0.4), PreconditionError);

  std::vector<double> v{0.2, 0.8, 0.8, 0.2};
  const MollifiedControl wiggly = step2_mollify(PiecewiseControl(1.0, 2, v), 1e-3, 0.2);
  try {
    step3_discretize(wiggly, 0.5, 1.0, 0.2);
    FAIL() << "expected an exception";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("kappa3"), std::string::npos);
  }
}

TEST(BuildPlan, DeviationsStayWithinTheirBounds) {
  const ReversedPlan& plan = small_plan().plan;
  EXPECT_GT(plan.delta, 0.0);
  EXPECT_GE(plan.delta, plan.delta_guaranteed - 1e-15);
  EXPECT_LE(plan.step2_measured, plan.step2_bound);
  EXPECT_LE(plan.step3_measured, plan.step3_bound);
  EXPECT_LE(plan.target_error, plan.target_error_bound);
  EXPECT_NEAR(plan.step1_shift, 0.1, 1e-12);
  EXPECT_EQ(plan.intervals() * plan.step(), plan.intervals() * plan.kappa3);
  EXPECT_NEAR(plan.kappa3 * static_cast<double>(plan.intervals()), 1.0, 1e-12);
  // The plan starts at M1(T) and ends near the mixed target.
  EXPECT_LE(l1_distance(plan.M_hat.node(plan.intervals()), plan.target_mixed.weights()),
            plan.step2_bound + plan.step3_bound);
}

TEST(BuildPlan, CostBookkeeping) {
  const ReversedPlan& plan = small_plan().plan;
  EXPECT_LE(plan.step1_cost, plan.original_cost + 1e-12);
  EXPECT_LE(plan.step2_cost, plan.step1_cost + plan.step2_eps);
  EXPECT_LE(plan.step3_cost, plan.step2_cost + plan.step3_eps);
  EXPECT_LE(plan.step3_cost, plan.original_cost + plan.step2_eps + plan.step3_eps);
  // The truncated continuous cost never exceeds the solver's full-horizon value.
  EXPECT_LE(plan.original_cost, plan.solver_cost + 1e-6);
}

TEST(BuildPlan, StationaryTargetIsFree) {
  const ReversedPlan& plan = stationary_plan();
  EXPECT_LE(plan.step1_shift, 1e-12);
  EXPECT_LE(plan.step3_cost, 1e-8);
  EXPECT_LE(plan.target_error, 1e-6);
}

TEST(BuildPlan, RankOneKernelGivesMixedRelativeEntropy) {
  // K(M) = p regardless of M, the optimal control is constant, and every
  // step of the plan keeps it constant: the cost is (1 - e^{-T}) R(eta1 || p)
  // with eta1 the mixed solver control.
  const Kernel rank_one({{0.7, 0.3}, {0.7, 0.3}});
  const ProbVec m{0.3, 0.7};
  PlanOptions opts;
  opts.eps = 0.02;
  const RateBracket solved = solve_rate(m, rank_one, 8.0, 80);
  const auto first = solved.eta_opt.row(0);
  for (std::size_t j = 1; j < 80; ++j) EXPECT_NEAR(solved.eta_opt.row(j)[0], first[0], 1e-6);
  const ReversedPlan plan = build_plan(m, rank_one, 4.0, opts, solved);
  const double k = plan.kappa1;
  const oracle::Vec eta1{(1 - k) * first[0] + k * 0.7, (1 - k) * first[1] + k * 0.3};
  EXPECT_NEAR(plan.step3_cost, (1 - std::exp(-4.0)) * oracle::entropy(eta1, {0.7, 0.3}), 1e-6);
  EXPECT_NEAR(plan.step1_shift, 0.02, 1e-12);
  EXPECT_EQ(plan.intervals(), 1u);
}

TEST(BuildPlan, RejectsMismatchedInputs) {
  const SmallPlan& sp = small_plan();
  EXPECT_THROW(build_plan(ProbVec{0.4, 0.6}, kTwo, 1.0, {}, sp.solved), PreconditionError);
  EXPECT_THROW(build_plan(ProbVec{0.3, 0.7}, kTwo, 3.0, {}, sp.solved), PreconditionError);
  EXPECT_THROW(build_plan(ProbVec{0.3, 0.7}, kTwo, 1.01, {}, sp.solved), PreconditionError);
  PlanOptions tight;
  tight.max_intervals = 10;
  EXPECT_THROW(build_plan(ProbVec{0.3, 0.7}, kTwo, 1.0, tight, sp.solved), PreconditionError);
}

TEST(RunConstruction, FollowsThePhaseStructure) {
  const ReversedPlan& plan = small_plan().plan;
  const std::size_t n = 2000;
  const TimeGrid grid(n + 1);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ConstructionRun run = run_construction(plan, kTwo, 0, n, 0.3, seed, 0, true);
    ASSERT_EQ(run.path.n, n);
    EXPECT_LE(grid[run.a0], grid[n] - plan.horizon);
    EXPECT_GT(grid[run.a0 + 1], grid[n] - plan.horizon);
    for (std::size_t k = 1; k <= run.a0 + 1; ++k)
      for (std::size_t x = 0; x < 2; ++x) ASSERT_EQ(run.path.control(k)[x], plan.q[x]);
    const double sigma = grid[run.a0 + 1];
    for (std::size_t k = run.a0 + 2; k <= n; ++k) {
      const auto mu = run.path.control(k);
      if (run.An_occurred) {
        ASSERT_EQ(mu[0], run.path.reference(k)[0]);
        continue;
      }
      const auto j = static_cast<std::size_t>(std::floor((grid[k] - sigma) / plan.step()));
      const auto want = plan.slot(std::min(j, plan.intervals()));
      if (grid[k] < sigma + static_cast<double>(plan.intervals() + 1) * plan.step() - 1e-12) {
        ASSERT_EQ(mu[0], want[0]) << "k = " << k;
      }
    }
    EXPECT_LE(std::abs(run.cost_occupation - run.cost_stepsum), 1e-8);
    EXPECT_NEAR(run.terminal_error, l1_distance(run.terminal.weights(), plan.M_hat.node(plan.intervals())), 1e-15);
  }
  EXPECT_THROW(run_construction(plan, kTwo, 0, 2, 0.3, 1), PreconditionError);
}

TEST(RunConstruction, IidPhaseTailIsControlledByEstimatedN0) {
  const ReversedPlan& plan = small_plan().plan;
  const double eps0 = 0.3, eps = 0.05;
  const IidTailEstimate est = estimate_n0(plan.q, 0, eps0, eps, 4000, 99);
  EXPECT_LE(est.probability, eps);
  ASSERT_FALSE(est.trail.empty());

  std::size_t n = 64;
  while (TimeGrid(n + 1)[n] - plan.horizon < std::log(static_cast<double>(est.n0) + 1.0) + 1.0) n *= 2;
  int hits = 0;
  const int runs = 400;
  std::size_t a0 = 0;
  for (int s = 0; s < runs; ++s) {
    const ConstructionRun run = run_construction(plan, kTwo, 0, n, eps0, static_cast<std::uint64_t>(s));
    a0 = run.a0;
    hits += run.An_occurred ? 1 : 0;
  }
  ASSERT_GE(a0 + 1, est.n0);
  EXPECT_LE(hits / static_cast<double>(runs), 2 * eps);
  EXPECT_THROW(estimate_n0(plan.q, 0, 1e-4, 1e-3, 100, 1, 16, 64), ResourceLimitError);
}

TEST(CostConvergence, StationaryPlanCostVanishes) {
  const ReversedPlan& plan = stationary_plan();
  const CostCheckReport rep = cost_convergence_check(plan, kTwo, 0, {500, 4000}, 100, 0.3, 5, 1);
  ASSERT_EQ(rep.rows.size(), 2u);
  ASSERT_EQ(rep.runs.size(), 200u);
  EXPECT_EQ(rep.runs[0].n, 500u);
  EXPECT_EQ(rep.runs[100].n, 4000u);
  EXPECT_EQ(rep.runs[7].seed, 12u);
  for (const auto& row : rep.rows) {
    EXPECT_LE(row.max_identity_gap, 1e-8);
    EXPECT_NEAR(row.limit, 0.0, 1e-8);
    EXPECT_LE(row.mean_cost, row.allowance + 0.01);
  }
  EXPECT_LT(rep.rows[1].gap, rep.rows[0].gap);

  const CostCheckReport again = cost_convergence_check(plan, kTwo, 0, {500, 4000}, 100, 0.3, 5, 3);
  std::ostringstream a, b;
  write_construction_csv(a, rep.runs);
  write_construction_csv(b, again.runs);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "n,seed,An_flag,terminal_error,cost_occupation,cost_stepsum");
}

TEST(CostConvergence, ConstructionCostApproachesPlanCost) {
  const ReversedPlan& plan = small_plan().plan;
  const CostCheckReport rep = cost_convergence_check(plan, kTwo, 0, {1000, 8000}, 100, 0.3, 17, 1);
  for (const auto& row : rep.rows) {
    EXPECT_GE(row.mean_cost, row.quadrature - 0.05);
    EXPECT_LE(row.mean_cost, row.quadrature + row.allowance + 0.05);
  }
  EXPECT_LT(rep.rows[1].gap, rep.rows[0].gap);
  EXPECT_LT(rep.rows[1].mean_terminal_error, rep.rows[0].mean_terminal_error);
}

TEST(PlanJson, FieldsAndThinning) {
  const ReversedPlan& plan = small_plan().plan;
  const Json full = plan_to_json(plan, plan.intervals());
  EXPECT_EQ(full.at("grid_stride"), 1);
  EXPECT_EQ(full.at("eta").size(), plan.intervals());
  EXPECT_EQ(full.at("M").size(), plan.intervals() + 1);
  for (const char* key : {"T", "q", "target", "target_mixed", "delta", "kappas", "lipschitz_C1", "bounds", "costs",
                          "intervals", "eta_end"})
    EXPECT_TRUE(full.contains(key)) << key;

  const Json thin = plan_to_json(plan, 10);
  const std::size_t stride = thin.at("grid_stride");
  EXPECT_GT(stride, 1u);
  EXPECT_LE(thin.at("eta").size(), 10u);
  const auto last = thin.at("M").back().get<std::vector<double>>();
  const auto end = plan.M_hat.node(plan.intervals());
  EXPECT_EQ(last, std::vector<double>(end.begin(), end.end()));
  EXPECT_EQ(thin.at("costs").at("step3").get<double>(), plan.step3_cost);
}

TEST(Eps0, SuggestedValue) {
  EXPECT_NEAR(suggested_eps0(0.05, 3.0, 0.1), 0.05 * std::exp(-3.0) / 1.3, 1e-16);
}
