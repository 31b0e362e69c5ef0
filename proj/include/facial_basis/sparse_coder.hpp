#pragma once

// l1-regularized least squares (LASSO) coding of deformations over a fixed
// dictionary:
//
//     minimize_z  1/2 ||d - W z||_2^2 + lambda ||z||_1
//
// Solved by cyclic coordinate descent with soft-thresholding on the Gram
// matrix, followed by an exact solve on the detected support/sign pattern.
// Coherent dictionaries, where coordinate descent stalls, fall back to an
// interior-point solve of the same problem.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/parallel.hpp"

namespace facial_basis {

struct CodingConfig {
  double lambda = 0.2;
  int max_iterations = 1000;
  double tolerance = 1e-8;  // on the largest coordinate change in one sweep
  bool interior_point_fallback = true;  // when the sweep budget runs out

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("coding: lambda must be positive");
    if (max_iterations <= 0) throw ConfigError("coding: max_iterations must be positive");
    if (!(tolerance > 0.0)) throw ConfigError("coding: tolerance must be positive");
  }
};

namespace detail {

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

struct LassoStatus {
  bool converged = false;
  int iterations = 0;
  double last_update = 0.0;
};

/// Cyclic coordinate descent on the Gram form, starting from `z` (warm
/// start). `corr` = W^T d. Never increases the objective.
inline LassoStatus coordinate_descent(const Matrix& gram, const Vector& corr, double lambda, Vector& z,
                                      int max_iterations, double tolerance) {
  const Index k_count = gram.cols();
  Vector grad = corr - gram * z;  // W^T (d - W z)
  LassoStatus status;
  for (int it = 0; it < max_iterations; ++it) {
    double max_update = 0.0;
    for (Index k = 0; k < k_count; ++k) {
      const double diag = gram(k, k);
      if (diag <= 0.0) {
        z[k] = 0.0;
        continue;
      }
      const double updated = soft_threshold(z[k] * diag + grad[k], lambda) / diag;
      const double delta = updated - z[k];
      if (delta != 0.0) {
        grad.noalias() -= delta * gram.col(k);
        z[k] = updated;
        max_update = std::max(max_update, std::abs(delta));
      }
    }
    status.iterations = it + 1;
    status.last_update = max_update;
    if (max_update <= tolerance) {
      status.converged = true;
      break;
    }
  }
  return status;
}

/// Subgradient optimality of `z`: w_k^T r = lambda sign(z_k) on the support
/// and |w_k^T r| <= lambda elsewhere, up to a relative slack.
inline bool lasso_optimal(const Matrix& gram, const Vector& corr, double lambda, const Vector& z) {
  const Vector grad = corr - gram * z;
  const double slack = 1e-10 * std::max(1.0, corr.cwiseAbs().maxCoeff());
  for (Index k = 0; k < z.size(); ++k) {
    const double target = z[k] > 0.0 ? lambda : (z[k] < 0.0 ? -lambda : 0.0);
    if (z[k] != 0.0 ? std::abs(grad[k] - target) > slack : std::abs(grad[k]) > lambda + slack) return false;
  }
  return true;
}

/// LASSO as a bound-constrained QP in z = u - v, u, v >= 0, solved by a
/// Mehrotra predictor-corrector interior-point method. Its iteration count
/// does not depend on the conditioning of the Gram matrix. Returns false when
/// the method does not reach the requested accuracy.
inline bool lasso_interior_point(const Matrix& gram, const Vector& corr, double lambda, Vector& z) {
  const Index k = gram.cols();
  const Index n = 2 * k;
  Matrix q(n, n);
  q << gram, -gram, -gram, gram;
  Vector lin(n);
  lin << Vector::Constant(k, lambda) - corr, Vector::Constant(k, lambda) + corr;
  const double scale = std::max({1.0, gram.diagonal().maxCoeff(), corr.cwiseAbs().maxCoeff()});
  Vector x = Vector::Ones(n), s = Vector::Ones(n);

  auto step_to_boundary = [](const Vector& v, const Vector& dv) {
    double t = 1.0;
    for (Index i = 0; i < v.size(); ++i)
      if (dv[i] < 0.0) t = std::min(t, -v[i] / dv[i]);
    return t;
  };
  for (int iter = 0; iter < 100; ++iter) {
    const Vector rd = q * x + lin - s;
    const double mu = x.dot(s) / static_cast<double>(n);
    if (rd.cwiseAbs().maxCoeff() <= 1e-13 * scale && mu <= 1e-15 * scale) {
      z = x.head(k) - x.tail(k);
      return true;
    }
    Matrix h = q;
    h.diagonal() += (s.array() / x.array()).matrix();
    const Eigen::LDLT<Matrix> ldlt(h);
    if (ldlt.info() != Eigen::Success) return false;
    auto newton = [&](const Vector& comp, Vector& dx, Vector& ds) {
      dx = ldlt.solve(-rd + (comp.array() / x.array()).matrix());
      ds = ((comp - s.cwiseProduct(dx)).array() / x.array()).matrix();
    };
    Vector dx, ds;
    newton(-x.cwiseProduct(s), dx, ds);
    const double t_aff = std::min(step_to_boundary(x, dx), step_to_boundary(s, ds));
    const double mu_aff = (x + t_aff * dx).dot(s + t_aff * ds) / static_cast<double>(n);
    const double sigma = std::pow(mu_aff / mu, 3.0);
    newton(Vector::Constant(n, sigma * mu) - x.cwiseProduct(s) - dx.cwiseProduct(ds), dx, ds);
    const double t = std::min(1.0, 0.99 * std::min(step_to_boundary(x, dx), step_to_boundary(s, ds)));
    x += t * dx;
    s += t * ds;
    if (!x.allFinite() || !s.allFinite()) return false;
  }
  return false;
}

/// Solves the stationarity equations on the support and sign pattern of `z`.
/// Replaces `z` only when the exact solution keeps the signs and the
/// inactive coordinates still satisfy |w_k^T r| <= lambda.
inline bool polish_support(const Matrix& gram, const Vector& corr, double lambda, Vector& z) {
  std::vector<Index> support;
  for (Index k = 0; k < z.size(); ++k)
    if (z[k] != 0.0) support.push_back(k);
  if (support.empty()) return false;
  const auto s = static_cast<Index>(support.size());
  Matrix g_ss(s, s);
  Vector rhs(s);
  for (Index a = 0; a < s; ++a) {
    rhs[a] = corr[support[a]] - lambda * (z[support[a]] > 0.0 ? 1.0 : -1.0);
    for (Index b = 0; b < s; ++b) g_ss(a, b) = gram(support[a], support[b]);
  }
  Eigen::LDLT<Matrix> ldlt(g_ss);
  Vector x;
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-12)
    x = ldlt.solve(rhs);
  else
    x = g_ss.completeOrthogonalDecomposition().solve(rhs);
  if (!x.allFinite() || (g_ss * x - rhs).norm() > 1e-9 * std::max(1.0, rhs.norm())) return false;
  for (Index a = 0; a < s; ++a)
    if ((x[a] > 0.0) != (z[support[a]] > 0.0) || x[a] == 0.0) return false;
  Vector candidate = Vector::Zero(z.size());
  for (Index a = 0; a < s; ++a) candidate[support[a]] = x[a];
  if (!lasso_optimal(gram, corr, lambda, candidate)) return false;
  z = candidate;
  return true;
}

}  // namespace detail

/// Caches the Gram matrix of a dictionary so that many frames can be coded
/// against it.
class SparseCoder {
 public:
  SparseCoder(const BasisDictionary& dict, CodingConfig cfg)
      : atoms_(dict.atoms()), gram_(dict.atoms().transpose() * dict.atoms()), cfg_(cfg) {
    cfg_.validate();
  }

  Index atom_count() const noexcept { return atoms_.cols(); }
  const CodingConfig& config() const noexcept { return cfg_; }
  const Matrix& gram() const noexcept { return gram_; }

  /// Codes one deformation. Throws ConvergenceError when coordinate descent
  /// does not settle within max_iterations sweeps.
  Vector encode(const Eigen::Ref<const Vector>& d) const {
    check_dims(d);
    Vector z = Vector::Zero(atoms_.cols());
    const Vector corr = atoms_.transpose() * d;
    if (corr.size() == 0 || corr.cwiseAbs().maxCoeff() <= cfg_.lambda) return z;
    // Coordinate descent crawls on coherent atoms; an exact solve on the
    // current support that passes the optimality check ends it early.
    int done = 0;
    detail::LassoStatus status;
    while (done < cfg_.max_iterations) {
      const int sweeps = std::min(kPolishInterval, cfg_.max_iterations - done);
      status = detail::coordinate_descent(gram_, corr, cfg_.lambda, z, sweeps, cfg_.tolerance);
      done += status.iterations;
      if (status.converged || detail::polish_support(gram_, corr, cfg_.lambda, z)) break;
    }
    if (!status.converged && !detail::lasso_optimal(gram_, corr, cfg_.lambda, z) && cfg_.interior_point_fallback) {
      Vector fallback = z;
      if (detail::lasso_interior_point(gram_, corr, cfg_.lambda, fallback)) {
        // Snap to the exact solution: a few sweeps from the interior-point
        // estimate settle the support, the support solve removes the rest.
        detail::coordinate_descent(gram_, corr, cfg_.lambda, fallback, kPolishInterval, cfg_.tolerance);
        if (detail::polish_support(gram_, corr, cfg_.lambda, fallback) ||
            detail::lasso_optimal(gram_, corr, cfg_.lambda, fallback))
          return fallback;
      }
    }
    if (!status.converged && !detail::lasso_optimal(gram_, corr, cfg_.lambda, z))
      throw ConvergenceError("encode: coordinate descent did not converge", static_cast<std::size_t>(done),
                             status.last_update);
    detail::polish_support(gram_, corr, cfg_.lambda, z);
    return z;
  }

  /// Warm-started variant that never throws and never returns a code with a
  /// larger objective than `z`. Used inside the learning loop.
  detail::LassoStatus refine(const Eigen::Ref<const Vector>& d, Vector& z) const {
    const Vector corr = atoms_.transpose() * d;
    Vector start = z;
    auto status = detail::coordinate_descent(gram_, corr, cfg_.lambda, z, cfg_.max_iterations, cfg_.tolerance);
    Vector polished = z;
    if (detail::polish_support(gram_, corr, cfg_.lambda, polished) && objective(d, polished) <= objective(d, z))
      z = polished;
    if (objective(d, z) > objective(d, start)) z = start;
    return status;
  }

  double objective(const Eigen::Ref<const Vector>& d, const Eigen::Ref<const Vector>& z) const {
    return 0.5 * (d - atoms_ * z).squaredNorm() + cfg_.lambda * z.lpNorm<1>();
  }

 private:
  void check_dims(const Eigen::Ref<const Vector>& d) const {
    if (d.size() != atoms_.rows())
      throw InputError("encode: sample has length " + std::to_string(d.size()) + ", dictionary expects " +
                       std::to_string(atoms_.rows()));
    if (!d.allFinite()) throw InputError("encode: non-finite sample");
  }

  static constexpr int kPolishInterval = 25;

  Matrix atoms_;
  Matrix gram_;
  CodingConfig cfg_;
};

inline Vector encode(const BasisDictionary& dict, const DeformationSample& sample, const CodingConfig& cfg) {
  return SparseCoder(dict, cfg).encode(sample.values());
}

/// Codes every frame; row t of the result is encode(frames[t]). Frames may be
/// processed on several threads, the output does not depend on `threads`.
inline Matrix encode_series(const BasisDictionary& dict, std::span<const DeformationSample> frames,
                            const CodingConfig& cfg, unsigned threads = 1) {
  SparseCoder coder(dict, cfg);
  Matrix out = Matrix::Zero(static_cast<Index>(frames.size()), dict.atom_count());
  parallel_for(frames.size(), threads, [&](std::size_t t) {
    try {
      out.row(static_cast<Index>(t)) = coder.encode(frames[t].values()).transpose();
    } catch (const ConvergenceError& e) {
      throw ConvergenceError("frame " + std::to_string(t) + ": " + e.summary(), e.iterations(), e.last_update());
    } catch (const InputError& e) {
      throw InputError("frame " + std::to_string(t) + ": " + e.what());
    }
  });
  return out;
}

/// sum_n 1/2 ||d_n - W z_n||^2 + lambda sum_n ||z_n||_1 with samples and codes
/// stored one per row (N x 3L and N x K).
inline double objective_value(const BasisDictionary& dict, const Eigen::Ref<const Matrix>& samples,
                              const Eigen::Ref<const Matrix>& codes, double lambda) {
  if (samples.rows() != codes.rows()) throw InputError("objective_value: sample and code counts differ");
  if (samples.cols() != dict.dimension()) throw InputError("objective_value: sample dimension differs from 3L");
  if (codes.cols() != dict.atom_count()) throw InputError("objective_value: code width differs from K");
  const Matrix residual = samples - codes * dict.atoms().transpose();
  return 0.5 * residual.squaredNorm() + lambda * codes.cwiseAbs().sum();
}

}  // namespace facial_basis
