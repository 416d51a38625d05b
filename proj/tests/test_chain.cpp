#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rldp/chain.hpp"
#include "rldp/parallel.hpp"
#include "rldp/rng.hpp"
#include "rldp/time_grid.hpp"

using namespace rldp;

namespace {

const Kernel kTwo({{0.9, 0.1}, {0.2, 0.8}});
const oracle::Mat kTwoRows{{0.9, 0.1}, {0.2, 0.8}};

// Chi-square statistic of observed counts against probabilities, merging
// cells with expected count below 5 into one.
std::pair<double, int> chi_square(const std::map<std::vector<int>, double>& law,
                                  const std::map<std::vector<int>, int>& seen, int samples) {
  double stat = 0.0, pooled_exp = 0.0, pooled_obs = 0.0;
  int cells = 0;
  for (const auto& [c, p] : law) {
    const double e = p * samples;
    const auto it = seen.find(c);
    const double o = it == seen.end() ? 0.0 : it->second;
    if (e < 5.0) {
      pooled_exp += e;
      pooled_obs += o;
      continue;
    }
    stat += (o - e) * (o - e) / e;
    ++cells;
  }
  if (pooled_exp > 0.0) {
    stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++cells;
  }
  return {stat, cells - 1};
}

// Upper 0.1% quantile of chi-square via the Wilson-Hilferty approximation.
double chi_square_limit(int dof) {
  const double z = 3.09;
  const double k = dof;
  return k * std::pow(1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k)), 3);
}

}  // namespace

TEST(Philox, KnownAnswerVectors) {
  for (const auto& kat : oracle::kPhiloxKats) {
    const auto out = Philox4x32::encrypt({kat.ctr[0], kat.ctr[1], kat.ctr[2], kat.ctr[3]}, {kat.key[0], kat.key[1]});
    for (int i = 0; i < 4; ++i) EXPECT_EQ(out[i], kat.out[i]);
  }
}

TEST(CounterRng, StreamsAreReproducibleAndDistinct) {
  CounterRng a(42, 0), b(42, 0), c(42, 1), e(43, 0);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
    EXPECT_NE(x, e());
    seen.insert(x);
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(CounterRng, UniformMomentsAndRange) {
  CounterRng r(7, 3);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n, 1.0 / 3.0, 0.005);
}

TEST(SampleCategorical, InverseCdfAndZeroWeights) {
  const std::vector<double> w{0.2, 0.0, 0.8};
  EXPECT_EQ(sample_categorical(w, 0.0), 0u);
  EXPECT_EQ(sample_categorical(w, 0.1999), 0u);
  EXPECT_EQ(sample_categorical(w, 0.2), 2u);
  EXPECT_EQ(sample_categorical(w, 0.9999999), 2u);
  CounterRng r(1, 0);
  for (int i = 0; i < 10000; ++i) EXPECT_NE(sample_categorical(w, r.uniform()), 1u);
}

TEST(TimeGrid, NodesMatchHarmonicSums) {
  const std::size_t n = 100000;
  const TimeGrid g(n);
  const auto ref = oracle::time_nodes(n);
  for (std::size_t k : {0ul, 1ul, 2ul, 10ul, 1000ul, n})
    EXPECT_NEAR(g[k], static_cast<double>(ref[k]), 1e-13);
  // t_n ~ log(n+1) + gamma - 1
  EXPECT_NEAR(g[n], std::log(n + 1.0) + kEulerGamma - 1.0, 1e-4);
}

TEST(TimeGrid, StepFunctions) {
  const TimeGrid g(10);
  EXPECT_EQ(g.index_at(0.0), 0u);
  EXPECT_EQ(g.index_at(g[3]), 3u);
  EXPECT_EQ(g.index_at(0.5 * (g[3] + g[4])), 3u);
  const GridPoint p = grid_functions(g[5] + 1e-9, g);
  EXPECT_EQ(p.m, 5u);
  EXPECT_EQ(p.a, g[5]);
  EXPECT_EQ(p.psi_e, 7u);
  EXPECT_THROW(g.index_at(g[10]), PreconditionError);
  EXPECT_THROW(g.index_at(-1.0), PreconditionError);
}

TEST(TimeGrid, InterpolationAsymptotics) {
  const std::size_t n = 100000;
  const TimeGrid g(n + 1);
  for (double t : {0.0, 0.5, 1.0, 2.0})
    EXPECT_LE(std::abs(static_cast<double>(g.index_at(g[n] - t)) / n - std::exp(-t)), 0.01);
}

TEST(SimulateChain, CountsAreConsistentAndDeterministic) {
  const ChainPath p = simulate_chain(kTwo, 1, 500, 9);
  const ChainPath q = simulate_chain(kTwo, 1, 500, 9);
  EXPECT_EQ(p.states, q.states);
  EXPECT_EQ(p.states.front(), 1u);
  for (std::size_t k = 1; k <= p.steps(); ++k) {
    std::int64_t total = 0;
    for (auto c : p.count_row(k)) total += c;
    EXPECT_EQ(total, static_cast<std::int64_t>(k));
  }
  const ChainPath r = simulate_chain(kTwo, 1, 500, 9, 1);
  EXPECT_NE(p.states, r.states);
  EXPECT_THROW(simulate_chain(kTwo, 2, 10, 1), PreconditionError);
  EXPECT_THROW(simulate_chain(kTwo, 0, 0, 1), PreconditionError);
}

TEST(SimulateChain, CountLawMatchesBruteForceEnumeration) {
  const std::size_t n = 10;
  const auto law = oracle::brute_force_count_law(kTwoRows, 0, n);
  std::map<std::vector<int>, int> seen;
  const int samples = 40000;
  for (int s = 0; s < samples; ++s) {
    const ChainPath p = simulate_chain(kTwo, 0, n, 17, static_cast<std::uint64_t>(s));
    const auto row = p.count_row(n);
    ++seen[{static_cast<int>(row[0]), static_cast<int>(row[1])}];
  }
  const auto [stat, dof] = chi_square(law, seen, samples);
  EXPECT_LT(stat, chi_square_limit(dof));
}

TEST(SimulateChain, ThreeStatesMatchBruteForce) {
  const oracle::Mat rows{{0.5, 0.3, 0.2}, {0.1, 0.6, 0.3}, {0.3, 0.3, 0.4}};
  const Kernel a(rows);
  const std::size_t n = 7;
  const auto law = oracle::brute_force_count_law(rows, 2, n);
  std::map<std::vector<int>, int> seen;
  const int samples = 40000;
  for (int s = 0; s < samples; ++s) {
    const auto row = simulate_chain(a, 2, n, 5, static_cast<std::uint64_t>(s)).count_row(n);
    ++seen[{static_cast<int>(row[0]), static_cast<int>(row[1]), static_cast<int>(row[2])}];
  }
  const auto [stat, dof] = chi_square(law, seen, samples);
  EXPECT_LT(stat, chi_square_limit(dof));
}

TEST(SimulateControlled, ZeroCostPolicyReproducesTheChainInDistribution) {
  const std::size_t n = 10;
  const auto law = oracle::brute_force_count_law(kTwoRows, 0, n + 1);
  std::map<std::vector<int>, int> seen;
  const int samples = 40000;
  for (int s = 0; s < samples; ++s) {
    const ControlledPath p = simulate_controlled(kTwo, 0, n, 23, ZeroCostPolicy{}, static_cast<std::uint64_t>(s));
    EXPECT_EQ(p.step_cost(), 0.0);
    const std::vector<double> l = p.terminal();
    ++seen[{static_cast<int>(std::lround(l[0] * (n + 1))), static_cast<int>(std::lround(l[1] * (n + 1)))}];
  }
  const auto [stat, dof] = chi_square(law, seen, samples);
  EXPECT_LT(stat, chi_square_limit(dof));
}

TEST(SimulateControlled, PolicySeesRunningEmpiricalMeasure) {
  std::vector<std::vector<double>> seen;
  auto policy = [&](std::size_t k, std::span<const double> l, std::span<const double> rho, std::span<double> mu) {
    EXPECT_EQ(seen.size() + 1, k);
    seen.emplace_back(l.begin(), l.end());
    std::vector<double> ref(2);
    kTwo.apply(l, ref);
    EXPECT_NEAR(rho[0], ref[0], 1e-15);
    mu[0] = 0.5;
    mu[1] = 0.5;
  };
  const ControlledPath p = simulate_controlled(kTwo, 1, 30, 4, policy);
  ASSERT_EQ(seen.size(), 30u);
  EXPECT_EQ(seen[0], (std::vector<double>{0.0, 1.0}));
  for (std::size_t k = 1; k <= 30; ++k) EXPECT_EQ(p.empirical(k), seen[k - 1]);
}

TEST(SimulateControlled, RejectsInvalidControls) {
  auto bad = [](std::size_t, std::span<const double>, std::span<const double>, std::span<double> mu) {
    mu[0] = 0.7;
    mu[1] = 0.7;
  };
  EXPECT_THROW(simulate_controlled(kTwo, 0, 5, 1, bad), PreconditionError);
}

TEST(ChainRule, OccupationEntropyEqualsStepSum) {
  CounterRng rng(31, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> table(200);
    for (double& x : table) x = 0.05 + rng.uniform();
    auto policy = [&](std::size_t k, std::span<const double>, std::span<const double> rho, std::span<double> mu) {
      const double a = table[(2 * k) % 200], b = table[(2 * k + 1) % 200];
      mu[0] = 0.5 * rho[0] + 0.5 * a / (a + b);
      mu[1] = 0.5 * rho[1] + 0.5 * b / (a + b);
    };
    const ControlledPath p = simulate_controlled(kTwo, 0, 100, 8, policy, static_cast<std::uint64_t>(trial));
    double ref = 0.0;
    for (std::size_t k = 1; k <= 100; ++k) {
      const auto mu = p.control(k);
      const auto rho = p.reference(k);
      ref += oracle::entropy({mu[0], mu[1]}, {rho[0], rho[1]});
    }
    ref /= 100.0;
    const ChainRuleCheck c = verify_chain_rule_identity(p);
    EXPECT_NEAR(c.lhs, c.rhs, 1e-12);
    EXPECT_NEAR(c.rhs, ref, 1e-12);
  }
}

TEST(Occupation, MassesAndIntervals) {
  const ControlledPath p = simulate_controlled(kTwo, 0, 200, 3, ZeroCostPolicy{});
  const DiscountedOccupation occ = occupation_measures(p);
  EXPECT_NEAR(occ.beta_mass(), 1.0, 1e-12);
  EXPECT_NEAR(occ.theta_mass(), 1.0, 1e-12);
  const TimeGrid g(201);
  for (const auto& at : occ.atoms) {
    EXPECT_LE(at.t_lo, at.t_hi);
    EXPECT_GE(at.t_lo, -1e-12);
    EXPECT_LE(at.t_hi, g[200] + 1e-12);
  }
  std::ostringstream os;
  write_occupation_csv(os, occ);
  EXPECT_EQ(os.str().rfind("state,t_lo,t_hi,beta_mass,theta_mass\n", 0), 0u);
}

TEST(Interpolation, HitsGridValuesAndIsLinearBetween) {
  const ControlledPath p = simulate_controlled(kTwo, 0, 50, 2, ZeroCostPolicy{});
  const InterpolatedPath f = interpolate_path(p);
  const TimeGrid& g = f.grid();
  for (std::size_t k = 0; k <= 50; ++k) EXPECT_EQ(f(g[k]), p.empirical(k + 1));
  const double mid = 0.5 * (g[10] + g[11]);
  const auto lo = p.empirical(11), hi = p.empirical(12), v = f(mid);
  for (std::size_t x = 0; x < 2; ++x) EXPECT_NEAR(v[x], 0.5 * (lo[x] + hi[x]), 1e-14);
  const ReversedPath r = reverse_path(f);
  EXPECT_EQ(r(0.0), p.terminal());
  EXPECT_EQ(r(100.0), p.empirical(1));
}

TEST(PathCsv, HeaderAndOneBasedStates) {
  const ChainPath p = simulate_chain(kTwo, 1, 3, 1);
  std::ostringstream os;
  write_path_csv(os, p);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,state,L_1,L_2");
  std::getline(is, line);
  EXPECT_EQ(line, "0,2,0,1");
}

TEST(ParallelFor, ResultsIndependentOfThreadCount) {
  auto run = [](unsigned threads) {
    std::vector<std::vector<std::size_t>> out(37);
    parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = simulate_chain(kTwo, 0, 100, 5, i).states; });
    return out;
  };
  EXPECT_EQ(run(1), run(4));
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw PreconditionError("x"); }), PreconditionError);
}
