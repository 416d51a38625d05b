#pragma once

// Probability vectors on {1..d}, stochastic kernels satisfying a uniform
// positivity floor, and the relative entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rldp/error.hpp"

namespace rldp {

inline constexpr double kSimplexTol = 1e-12;
inline constexpr double kRenormalizeTol = 1e-9;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("l1_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

// Normalizes `w` onto the simplex in place. Entries within kRenormalizeTol of
// the simplex are absorbed; anything farther is rejected.
inline void snap_to_simplex(std::vector<double>& w, const char* what) {
  if (w.empty()) throw PreconditionError(std::string(what) + ": empty probability vector");
  double sum = 0.0;
  for (double v : w) {
    if (!std::isfinite(v)) throw PreconditionError(std::string(what) + ": non-finite entry");
    if (v < -kRenormalizeTol) {
      std::ostringstream os;
      os << what << ": negative entry " << v;
      throw PreconditionError(os.str());
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRenormalizeTol) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": entries sum to " << sum << ", not 1";
    throw PreconditionError(os.str());
  }
  sum = 0.0;
  for (double& v : w) {
    v = std::max(v, 0.0);
    sum += v;
  }
  // Already normalized up to summation rounding: leave the bits alone so that
  // serialized vectors read back unchanged.
  if (std::abs(sum - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(w.size())) return;
  for (double& v : w) v /= sum;
}

/// A point of the probability simplex over d states.
class ProbVec {
 public:
  ProbVec() = default;
  explicit ProbVec(std::vector<double> weights) : w_(std::move(weights)) {
    snap_to_simplex(w_, "ProbVec");
  }
  ProbVec(std::initializer_list<double> weights) : ProbVec(std::vector<double>(weights)) {}

  static ProbVec point_mass(std::size_t d, std::size_t x) {
    if (x >= d) throw PreconditionError("ProbVec::point_mass: state out of range");
    std::vector<double> w(d, 0.0);
    w[x] = 1.0;
    return ProbVec(std::move(w));
  }
  static ProbVec uniform(std::size_t d) {
    return ProbVec(std::vector<double>(d, 1.0 / static_cast<double>(d)));
  }

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> weights() const { return w_; }
  const std::vector<double>& vec() const { return w_; }
  auto begin() const { return w_.begin(); }
  auto end() const { return w_.end(); }
  double min() const { return *std::min_element(w_.begin(), w_.end()); }

  friend bool operator==(const ProbVec&, const ProbVec&) = default;

 private:
  std::vector<double> w_;
};

/// R(nu || mu) with 0 log 0 = 0. Returns kInfinity when nu charges a point
/// that mu does not. Inputs are not required to be normalized.
inline double relative_entropy(std::span<const double> nu, std::span<const double> mu) {
  if (nu.size() != mu.size()) throw PreconditionError("relative_entropy: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    if (nu[i] <= 0.0) continue;
    if (mu[i] <= 0.0) return kInfinity;
    s += nu[i] * std::log(nu[i] / mu[i]);
  }
  return s;
}

inline double relative_entropy(const ProbVec& nu, const ProbVec& mu) {
  return relative_entropy(nu.weights(), mu.weights());
}

/// Row-stochastic d x d matrix with strictly positive entries. delta0() is the
/// smallest entry and bounds K(m)(x) = (mA)_x from below for every m.
class Kernel {
 public:
  Kernel() = default;
  explicit Kernel(const std::vector<std::vector<double>>& rows) {
    d_ = rows.size();
    if (d_ == 0) throw PreconditionError("Kernel: no rows");
    a_.reserve(d_ * d_);
    for (std::size_t x = 0; x < d_; ++x) {
      if (rows[x].size() != d_) throw PreconditionError("Kernel: matrix is not square");
      std::vector<double> r = rows[x];
      snap_to_simplex(r, "Kernel row");
      a_.insert(a_.end(), r.begin(), r.end());
    }
    delta0_ = *std::min_element(a_.begin(), a_.end());
    if (!(delta0_ > 0.0)) {
      throw PreconditionError(
          "kernel violates the positivity assumption (Assumption 1): every entry A(x,y) must be > 0");
    }
  }

  std::size_t dim() const { return d_; }
  double delta0() const { return delta0_; }
  double operator()(std::size_t x, std::size_t y) const { return a_[x * d_ + y]; }
  std::span<const double> row(std::size_t x) const { return {a_.data() + x * d_, d_}; }
  std::vector<std::vector<double>> rows() const {
    std::vector<std::vector<double>> out(d_);
    for (std::size_t x = 0; x < d_; ++x) out[x].assign(row(x).begin(), row(x).end());
    return out;
  }

  // out = m A for an arbitrary (not necessarily normalized) row vector m.
  void apply(std::span<const double> m, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t x = 0; x < d_; ++x) {
      const double mx = m[x];
      if (mx == 0.0) continue;
      const double* r = a_.data() + x * d_;
      for (std::size_t y = 0; y < d_; ++y) out[y] += mx * r[y];
    }
  }

 private:
  std::size_t d_ = 0;
  std::vector<double> a_;
  double delta0_ = 0.0;
};

inline ProbVec kernel_apply(const ProbVec& m, const Kernel& a) {
  if (m.size() != a.dim()) throw PreconditionError("kernel_apply: dimension mismatch");
  std::vector<double> out(a.dim());
  a.apply(m.weights(), out);
  return ProbVec(std::move(out));
}

/// Probability measure on {1..d} x {1..d}, stored row-major.
class PairMeasure {
 public:
  PairMeasure(std::size_t d, std::vector<double> weights) : d_(d), w_(std::move(weights)) {
    if (w_.size() != d_ * d_) throw PreconditionError("PairMeasure: expected d*d weights");
    snap_to_simplex(w_, "PairMeasure");
  }

  /// theta (x) A: (x,y) -> theta(x) A(x,y).
  static PairMeasure product(const ProbVec& theta, const Kernel& a) {
    const std::size_t d = a.dim();
    if (theta.size() != d) throw PreconditionError("PairMeasure::product: dimension mismatch");
    std::vector<double> w(d * d);
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t y = 0; y < d; ++y) w[x * d + y] = theta[x] * a(x, y);
    return PairMeasure(d, std::move(w));
  }

  std::size_t dim() const { return d_; }
  double operator()(std::size_t x, std::size_t y) const { return w_[x * d_ + y]; }
  std::span<const double> weights() const { return w_; }
  std::vector<double> first_marginal() const {
    std::vector<double> m(d_, 0.0);
    for (std::size_t x = 0; x < d_; ++x)
      for (std::size_t y = 0; y < d_; ++y) m[x] += w_[x * d_ + y];
    return m;
  }
  std::vector<double> second_marginal() const {
    std::vector<double> m(d_, 0.0);
    for (std::size_t x = 0; x < d_; ++x)
      for (std::size_t y = 0; y < d_; ++y) m[y] += w_[x * d_ + y];
    return m;
  }

 private:
  std::size_t d_;
  std::vector<double> w_;
};

namespace detail {

// Solves the square system M z = b (row-major, n x n) by Gaussian elimination
// with partial pivoting. Throws NumericalError on a (numerically) singular M.
inline std::vector<double> lu_solve(std::vector<double> mat, std::vector<double> b, std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(mat[r * n + col]) > std::abs(mat[piv * n + col])) piv = r;
    if (std::abs(mat[piv * n + col]) < 1e-14) throw NumericalError("lu_solve: singular system");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(mat[piv * n + c], mat[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = mat[r * n + col] / mat[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) mat[r * n + c] -= f * mat[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> z(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= mat[i * n + c] * z[c];
    z[i] = s / mat[i * n + i];
  }
  return z;
}

}  // namespace detail

/// Unique m_* with m_* A = m_*. Solves (A^T - I) m = 0 with the last equation
/// replaced by the normalization sum(m) = 1.
inline ProbVec stationary_distribution(const Kernel& a) {
  const std::size_t d = a.dim();
  std::vector<double> mat(d * d);
  std::vector<double> rhs(d, 0.0);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) mat[r * d + c] = a(c, r) - (r == c ? 1.0 : 0.0);
  for (std::size_t c = 0; c < d; ++c) mat[(d - 1) * d + c] = 1.0;
  rhs[d - 1] = 1.0;
  std::vector<double> m = detail::lu_solve(std::move(mat), std::move(rhs), d);

  std::vector<double> ma(d);
  a.apply(m, ma);
  if (l1_distance(ma, m) > 1e-10)
    throw NumericalError("stationary_distribution: residual above 1e-10");
  return ProbVec(std::move(m));
}

/// Kernel of the quasi-stationary approximation scheme: p lives on {0,1..d},
/// A = P + p_0 I where every row of P is p restricted to {1..d}.
inline Kernel build_kernel_qsd(const ProbVec& p) {
  if (p.size() < 2) throw PreconditionError("build_kernel_qsd: p must live on {0,...,d} with d >= 1");
  if (!(p.min() > 0.0)) throw PreconditionError("build_kernel_qsd: p must be strictly positive");
  const std::size_t d = p.size() - 1;
  std::vector<std::vector<double>> rows(d, std::vector<double>(d));
  for (std::size_t x = 0; x < d; ++x)
    for (std::size_t y = 0; y < d; ++y) rows[x][y] = p[y + 1] + (x == y ? p[0] : 0.0);
  return Kernel(rows);
}

/// A = alpha * (rows p) + (1 - alpha) * B; B may contain zeros.
inline Kernel build_kernel_mixture(double alpha, const ProbVec& p,
                                   const std::vector<std::vector<double>>& b) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw PreconditionError("build_kernel_mixture: alpha must lie in (0,1)");
  if (!(p.min() > 0.0)) throw PreconditionError("build_kernel_mixture: p must be strictly positive");
  const std::size_t d = p.size();
  if (b.size() != d) throw PreconditionError("build_kernel_mixture: B has wrong dimension");
  std::vector<std::vector<double>> rows(d, std::vector<double>(d));
  for (std::size_t x = 0; x < d; ++x) {
    if (b[x].size() != d) throw PreconditionError("build_kernel_mixture: B is not square");
    std::vector<double> bx = b[x];
    snap_to_simplex(bx, "build_kernel_mixture: row of B");
    for (std::size_t y = 0; y < d; ++y) rows[x][y] = alpha * p[y] + (1.0 - alpha) * bx[y];
  }
  return Kernel(rows);
}

}  // namespace rldp
