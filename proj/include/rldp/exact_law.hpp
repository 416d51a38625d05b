#pragma once

// Exact law of the count vector of the reinforced chain. The conditional law
// of the next state depends on the past only through the counts, so the
// counts form a Markov chain on compositions of k into d parts and the law can
// be propagated level by level.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rldp/csv.hpp"
#include "rldp/error.hpp"
#include "rldp/measures.hpp"

namespace rldp {

inline constexpr double kAtomDropThreshold = 1e-300;

struct CountAtom {
  std::vector<int> counts;
  double probability;
};

/// Law of the counts (c_1..c_d), sum c = n, of X_0..X_{n-1}; atoms in
/// lexicographic order of the counts.
struct CountLaw {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<CountAtom> atoms;
  double dropped_mass = 0.0;          // mass of atoms below kAtomDropThreshold
  double max_level_mass_error = 0.0;  // max_k |total mass at level k - 1|

  double total_mass() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.probability;
    return s;
  }
};

struct ExactLawOptions {
  std::uint64_t memory_cap_bytes = std::uint64_t{2} << 30;
};

/// Default cap, overridable with REINFORCED_LDP_MEM_CAP_MB.
inline ExactLawOptions exact_law_options_from_env() {
  ExactLawOptions o;
  if (const char* env = std::getenv("REINFORCED_LDP_MEM_CAP_MB")) {
    char* end = nullptr;
    const unsigned long long mb = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw PreconditionError("REINFORCED_LDP_MEM_CAP_MB is not an integer");
    o.memory_cap_bytes = static_cast<std::uint64_t>(mb) << 20;
  }
  return o;
}

namespace detail {

// Dense ranking of compositions of `total` into `parts` nonnegative parts in
// lexicographic order.
class CompositionIndex {
 public:
  CompositionIndex(std::size_t max_total, std::size_t parts) : parts_(parts) {
    const std::size_t rows = max_total + parts + 1;
    binom_.assign(rows * (parts + 1), 0.0);
    for (std::size_t s = 0; s < rows; ++s) {
      binom_[s * (parts + 1)] = 1.0;
      for (std::size_t r = 1; r <= parts && r <= s; ++r)
        binom_[s * (parts + 1) + r] =
            binom_[(s - 1) * (parts + 1) + r - 1] + (r <= s - 1 ? binom_[(s - 1) * (parts + 1) + r] : 0.0);
    }
  }

  double binom(std::size_t s, std::size_t r) const { return r > s ? 0.0 : binom_[s * (parts_ + 1) + r]; }

  // Number of compositions of s into r parts.
  std::size_t count(std::size_t s, std::size_t r) const {
    return r == 0 ? (s == 0 ? 1 : 0) : static_cast<std::size_t>(binom(s + r - 1, r - 1));
  }

  std::size_t rank(const std::vector<int>& c, std::size_t total) const {
    // Compositions whose first coordinate differs and is smaller, summed with
    // the hockey-stick identity: sum_{v<c} C(s-v+r-2, r-2) = C(s+r-1,r-1) - C(s-c+r-1,r-1).
    std::size_t rank = 0;
    std::size_t rest = total;
    for (std::size_t i = 0; i + 1 < parts_; ++i) {
      const std::size_t r = parts_ - i;
      const auto ci = static_cast<std::size_t>(c[i]);
      rank += static_cast<std::size_t>(binom(rest + r - 1, r - 1) - binom(rest - ci + r - 1, r - 1));
      rest -= ci;
    }
    return rank;
  }

  // Advances c to the next composition of `total` in lexicographic order.
  bool next(std::vector<int>& c) const {
    // Rightmost i < d-1 with a nonzero suffix sum: bump c[i], put the rest of
    // the suffix into the last coordinate.
    const std::size_t d = parts_;
    if (d == 1) return false;
    int tail = c[d - 1];
    for (std::size_t i = d - 1; i-- > 0;) {
      if (tail > 0) {
        ++c[i];
        for (std::size_t j = i + 1; j < d; ++j) c[j] = 0;
        c[d - 1] = tail - 1;
        return true;
      }
      tail += c[i];
    }
    return false;
  }

 private:
  std::size_t parts_;
  std::vector<double> binom_;
};

}  // namespace detail

/// Runs the forward DP for levels 1..n_max and calls visit(level, law) for
/// every level listed in `keep` (ascending). The first state is x0 (0-based).
template <class Visit>
void exact_law_levels(const Kernel& a, std::size_t x0, std::size_t n_max, const std::vector<std::size_t>& keep,
                      const ExactLawOptions& opts, Visit&& visit) {
  const std::size_t d = a.dim();
  if (x0 >= d) throw PreconditionError("exact_law: initial state out of range");
  if (n_max < 1) throw PreconditionError("exact_law: n must be >= 1");
  detail::CompositionIndex index(n_max, d);
  const double final_size = static_cast<double>(index.count(n_max, d));
  const double bytes = final_size * (2.0 * sizeof(double) + (sizeof(CountAtom) + d * sizeof(int)));
  if (bytes > static_cast<double>(opts.memory_cap_bytes)) {
    std::ostringstream os;
    os << "exact_law: estimated memory " << static_cast<std::uint64_t>(bytes / (1 << 20)) << " MiB exceeds cap of "
       << (opts.memory_cap_bytes >> 20) << " MiB";
    throw ResourceLimitError(os.str());
  }

  std::vector<double> cur(index.count(1, d), 0.0), nxt;
  {
    std::vector<int> c(d, 0);
    c[x0] = 1;
    cur[index.rank(c, 1)] = 1.0;
  }
  double dropped = 0.0;
  double max_err = 0.0;
  std::size_t keep_pos = 0;
  std::vector<double> rho(d), lvec(d);
  std::vector<int> c(d);

  auto emit = [&](std::size_t level) {
    CountLaw law;
    law.n = level;
    law.d = d;
    law.dropped_mass = dropped;
    law.max_level_mass_error = max_err;
    // Lexicographic order starts at (0,..,0,level).
    std::fill(c.begin(), c.end(), 0);
    c[d - 1] = static_cast<int>(level);
    do {
      const double p = cur[index.rank(c, level)];
      if (p > 0.0) law.atoms.push_back({c, p});
    } while (index.next(c));
    visit(level, law);
  };

  while (keep_pos < keep.size() && keep[keep_pos] < 1) ++keep_pos;
  if (keep_pos < keep.size() && keep[keep_pos] == 1) {
    emit(1);
    ++keep_pos;
  }

  for (std::size_t k = 1; k < n_max; ++k) {
    nxt.assign(index.count(k + 1, d), 0.0);
    std::fill(c.begin(), c.end(), 0);
    c[d - 1] = static_cast<int>(k);
    std::size_t r = 0;
    do {
      const double p = cur[r++];
      if (p == 0.0) continue;
      for (std::size_t x = 0; x < d; ++x) lvec[x] = static_cast<double>(c[x]) / static_cast<double>(k);
      a.apply(lvec, rho);
      for (std::size_t y = 0; y < d; ++y) {
        ++c[y];
        nxt[index.rank(c, k + 1)] += p * rho[y];
        --c[y];
      }
    } while (index.next(c));
    double mass = 0.0;
    for (double& v : nxt) {
      if (v != 0.0 && v < kAtomDropThreshold) {
        dropped += v;
        v = 0.0;
      }
      mass += v;
    }
    max_err = std::max(max_err, std::abs(mass + dropped - 1.0));
    cur.swap(nxt);
    if (keep_pos < keep.size() && keep[keep_pos] == k + 1) {
      emit(k + 1);
      ++keep_pos;
    }
  }
}

inline CountLaw exact_law(const Kernel& a, std::size_t x0, std::size_t n,
                          const ExactLawOptions& opts = exact_law_options_from_env()) {
  CountLaw out;
  exact_law_levels(a, x0, n, {n}, opts, [&](std::size_t, CountLaw& law) { out = std::move(law); });
  return out;
}

/// P(||c/n - target||_1 <= radius) under the law (closed ball).
inline double event_probability(const CountLaw& law, const ProbVec& target, double radius) {
  if (!(radius > 0.0)) throw PreconditionError("event_probability: radius must be > 0");
  if (target.size() != law.d) throw PreconditionError("event_probability: dimension mismatch");
  double p = 0.0;
  const double n = static_cast<double>(law.n);
  for (const auto& at : law.atoms) {
    double dist = 0.0;
    for (std::size_t x = 0; x < law.d; ++x) dist += std::abs(at.counts[x] / n - target[x]);
    if (dist <= radius + 1e-12) p += at.probability;
  }
  return p;
}

struct FiniteNRate {
  std::size_t n;
  double probability;
  double rate;  // -(1/n) log P, kInfinity when P == 0
  bool zero_probability;
};

inline std::vector<FiniteNRate> finite_n_rate(const Kernel& a, std::size_t x0, const ProbVec& target, double radius,
                                              std::vector<std::size_t> n_list,
                                              const ExactLawOptions& opts = exact_law_options_from_env()) {
  if (n_list.empty()) return {};
  std::vector<std::size_t> sorted = n_list;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<FiniteNRate> by_n;
  exact_law_levels(a, x0, sorted.back(), sorted, opts, [&](std::size_t level, CountLaw& law) {
    const double p = event_probability(law, target, radius);
    const bool zero = !(p > 0.0);
    by_n.push_back({level, p, zero ? kInfinity : -std::log(p) / static_cast<double>(level), zero});
  });
  std::vector<FiniteNRate> out;
  for (std::size_t n : n_list)
    for (const auto& r : by_n)
      if (r.n == n) out.push_back(r);
  return out;
}

inline void write_law_csv(std::ostream& os, const CountLaw& law) {
  auto head = csv::indexed_header("c_", law.d);
  head.push_back("probability");
  csv::write_row(os, head);
  for (const auto& at : law.atoms) {
    std::vector<std::string> row;
    for (int c : at.counts) row.push_back(std::to_string(c));
    row.push_back(csv::num(at.probability));
    csv::write_row(os, row);
  }
}

inline void write_rate_trend_csv(std::ostream& os, const std::vector<FiniteNRate>& rows) {
  csv::write_row(os, {"n", "probability", "rate"});
  for (const auto& r : rows) csv::write_row(os, {std::to_string(r.n), csv::num(r.probability), csv::num(r.rate)});
}

}  // namespace rldp
