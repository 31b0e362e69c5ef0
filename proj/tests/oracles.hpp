#pragma once

// Brute-force reference implementations. Nothing here calls into the library
// code under test except for plain data types.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/model_core.hpp"

namespace oracle {

using facial_basis::Index;
using facial_basis::Matrix;
using facial_basis::Vector;

inline double lasso_objective(const Matrix& w, const Vector& d, const Vector& z, double lambda) {
  double r2 = 0.0;
  for (Index i = 0; i < d.size(); ++i) {
    double s = d[i];
    for (Index k = 0; k < z.size(); ++k) s -= w(i, k) * z[k];
    r2 += s * s;
  }
  double l1 = 0.0;
  for (Index k = 0; k < z.size(); ++k) l1 += std::abs(z[k]);
  return 0.5 * r2 + lambda * l1;
}

/// Exact LASSO minimizer by enumerating every support and sign pattern. On a
/// fixed support S with signs s the stationary point is
/// z_S = (W_S^T W_S)^{-1} (W_S^T d - lambda s); it is admissible only if its
/// signs agree with s. Requires W with full column rank.
inline Vector lasso_enumerate(const Matrix& w, const Vector& d, double lambda) {
  const Index k = w.cols();
  Vector best = Vector::Zero(k);
  double best_obj = lasso_objective(w, d, best, lambda);
  std::vector<int> pattern(static_cast<std::size_t>(k), 0);  // 0 off, 1 positive, 2 negative
  long total = 1;
  for (Index i = 0; i < k; ++i) total *= 3;
  for (long code = 1; code < total; ++code) {
    long c = code;
    std::vector<Index> support;
    std::vector<double> sign;
    for (Index i = 0; i < k; ++i, c /= 3) {
      const int p = static_cast<int>(c % 3);
      if (p != 0) {
        support.push_back(i);
        sign.push_back(p == 1 ? 1.0 : -1.0);
      }
    }
    const auto s = static_cast<Index>(support.size());
    Matrix ws(w.rows(), s);
    Vector rhs(s);
    for (Index a = 0; a < s; ++a) {
      ws.col(a) = w.col(support[static_cast<std::size_t>(a)]);
      rhs[a] = w.col(support[static_cast<std::size_t>(a)]).dot(d) - lambda * sign[static_cast<std::size_t>(a)];
    }
    const Vector zs = (ws.transpose() * ws).fullPivLu().solve(rhs);
    bool consistent = true;
    for (Index a = 0; a < s; ++a)
      if (zs[a] * sign[static_cast<std::size_t>(a)] <= 0.0) consistent = false;
    if (!consistent) continue;
    Vector z = Vector::Zero(k);
    for (Index a = 0; a < s; ++a) z[support[static_cast<std::size_t>(a)]] = zs[a];
    const double obj = lasso_objective(w, d, z, lambda);
    if (obj < best_obj) {
      best_obj = obj;
      best = z;
    }
  }
  return best;
}

/// Largest KKT violation of z for the LASSO problem.
inline double lasso_kkt_violation(const Matrix& w, const Vector& d, const Vector& z, double lambda) {
  const Vector g = w.transpose() * (d - w * z);
  double worst = 0.0;
  for (Index k = 0; k < z.size(); ++k) {
    if (z[k] != 0.0)
      worst = std::max(worst, std::abs(g[k] - lambda * (z[k] > 0 ? 1.0 : -1.0)));
    else
      worst = std::max(worst, std::abs(g[k]) - lambda);
  }
  return worst;
}

/// Pearson correlation written out with explicit loops.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    ma += a[t];
    mb += b[t];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    sab += (a[t] - ma) * (b[t] - mb);
    saa += (a[t] - ma) * (a[t] - ma);
    sbb += (b[t] - mb) * (b[t] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Direct windowed cross-correlation of a window (rows = frames). For each
/// pair the lag with the largest |r| wins; earlier lags in the order
/// 0, -step, +step, -2 step, ... win ties.
inline Matrix wcc_direct(const Matrix& window, Index max_lag, Index lag_step) {
  const Index w = window.rows(), q = window.cols();
  std::vector<Index> lags{0};
  for (Index h = lag_step; h <= max_lag; h += lag_step) {
    lags.push_back(-h);
    lags.push_back(h);
  }
  Matrix out = Matrix::Zero(q, q);
  for (Index i = 0; i < q; ++i) {
    for (Index j = 0; j < q; ++j) {
      double best = 0.0;
      bool first = true;
      for (Index lag : lags) {
        std::vector<double> a, b;
        for (Index t = 0; t < w; ++t) {
          const Index u = t + lag;
          if (u < 0 || u >= w) continue;
          a.push_back(window(t, i));
          b.push_back(window(u, j));
        }
        const double r = pearson(a, b);
        if (first || std::abs(r) > std::abs(best)) best = r;
        first = false;
      }
      out(i, j) = best;
    }
  }
  for (Index i = 0; i < q; ++i) {
    bool constant = true;
    for (Index t = 1; t < w; ++t)
      if (window(t, i) != window(0, i)) constant = false;
    if (!constant) out(i, i) = 1.0;
  }
  return out;
}

/// Linear soft-margin SVM weights from the dual
///   max sum(a) - 1/2 a^T Q a,  0 <= a <= C,  y^T a = 0,
/// by enumerating every assignment of points to {0, C, free}. Each free set
/// gives an equality-constrained stationary point (pseudo-inverse); the best
/// feasible candidate is the optimum. The primal w is unique.
inline Vector svm_dual_enumerate(const Matrix& x, const std::vector<int>& y, double c) {
  const Index n = x.rows();
  Matrix qm(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) qm(i, j) = y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(j)] * x.row(i).dot(x.row(j));
  long total = 1;
  for (Index i = 0; i < n; ++i) total *= 3;
  double best = -std::numeric_limits<double>::infinity();
  Vector best_alpha = Vector::Zero(n);
  const double feas = 1e-9 * std::max(1.0, c);
  for (long code = 0; code < total; ++code) {
    long cc = code;
    Vector alpha = Vector::Zero(n);
    std::vector<Index> free_set;
    for (Index i = 0; i < n; ++i, cc /= 3) {
      const int p = static_cast<int>(cc % 3);
      if (p == 1) alpha[i] = c;
      if (p == 2) free_set.push_back(i);
    }
    const auto f = static_cast<Index>(free_set.size());
    if (f > 0) {
      Matrix kkt = Matrix::Zero(f + 1, f + 1);
      Vector rhs(f + 1);
      double ysum = 0.0;
      for (Index i = 0; i < n; ++i) ysum += y[static_cast<std::size_t>(i)] * alpha[i];
      for (Index a = 0; a < f; ++a) {
        const Index i = free_set[static_cast<std::size_t>(a)];
        for (Index b = 0; b < f; ++b) kkt(a, b) = qm(i, free_set[static_cast<std::size_t>(b)]);
        kkt(a, f) = y[static_cast<std::size_t>(i)];
        kkt(f, a) = y[static_cast<std::size_t>(i)];
        rhs[a] = 1.0 - qm.row(i).dot(alpha);
      }
      rhs[f] = -ysum;
      const Vector sol = kkt.completeOrthogonalDecomposition().pseudoInverse() * rhs;
      for (Index a = 0; a < f; ++a) alpha[free_set[static_cast<std::size_t>(a)]] = sol[a];
    }
    double ysum = 0.0;
    bool ok = true;
    for (Index i = 0; i < n; ++i) {
      ysum += y[static_cast<std::size_t>(i)] * alpha[i];
      if (alpha[i] < -feas || alpha[i] > c + feas) ok = false;
    }
    if (!ok || std::abs(ysum) > feas) continue;
    const double obj = alpha.sum() - 0.5 * alpha.dot(qm * alpha);
    if (obj > best) {
      best = obj;
      best_alpha = alpha;
    }
  }
  Vector w = Vector::Zero(x.cols());
  for (Index i = 0; i < n; ++i) w += best_alpha[i] * y[static_cast<std::size_t>(i)] * x.row(i).transpose();
  return w;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// Each landmark is its own group member: LB, RB, LE, RE, NO, MO get one
/// landmark apiece. Handy for small exhaustive tests.
inline facial_basis::LandmarkTopology tiny_topology() {
  using facial_basis::GroupCode;
  return facial_basis::LandmarkTopology(
      6, {{GroupCode::LB, {0}}, {GroupCode::RB, {1}}, {GroupCode::LE, {2}}, {GroupCode::RE, {3}}, {GroupCode::NO, {4}}, {GroupCode::MO, {5}}});
}

}  // namespace oracle
