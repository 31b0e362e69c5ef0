#pragma once

// Linear soft-margin SVM trained in the dual with an interior-point method on
// a precomputed linear kernel, plus leave-one-out evaluation with a
// stratified inner k-fold search over C.
//
//   min_{w,b}  1/2 ||w||^2 + C sum_i max(0, 1 - y_i (w^T x_i + b))

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/parallel.hpp"

namespace facial_basis {

/// Labels are +1 / -1. class_names[0] names the -1 class, class_names[1] the +1 class.
struct LabeledDataset {
  Matrix features;  // V x F
  std::vector<int> labels;
  std::vector<std::string> video_ids;
  std::array<std::string, 2> class_names{"B", "A"};

  void validate() const {
    const auto v = static_cast<std::size_t>(features.rows());
    if (labels.size() != v) throw InputError("dataset: " + std::to_string(labels.size()) + " labels for " + std::to_string(v) + " rows");
    if (video_ids.size() != v) throw InputError("dataset: video id count differs from row count");
    std::vector<std::string> ids = video_ids;
    std::sort(ids.begin(), ids.end());
    if (auto dup = std::adjacent_find(ids.begin(), ids.end()); dup != ids.end())
      throw InputError("dataset: duplicate video id '" + *dup + "'");
    bool pos = false, neg = false;
    for (int y : labels) {
      if (y != 1 && y != -1) throw InputError("dataset: labels must be +1 or -1");
      (y > 0 ? pos : neg) = true;
    }
    if (!pos || !neg) throw InputError("dataset: both classes must be present");
    if (!features.allFinite()) throw InputError("dataset: non-finite features");
  }
};

struct SvmConfig {
  double tolerance = 1e-10;         // interior-point residual and complementarity target
  std::int64_t max_iterations = 200;  // interior-point iterations
  bool balanced = true;               // scale C by n / (2 n_class) per sample
};

/// Relative primal-dual gap accepted for a trained model.
inline constexpr double kSvmGapTolerance = 1e-6;

struct CvConfig {
  std::vector<double> c_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  int inner_folds = 5;
  std::uint64_t seed = 0;
  bool standardize = true;
  SvmConfig svm{};

  void validate() const {
    if (c_grid.empty()) throw ConfigError("cv: c_grid must not be empty");
    for (std::size_t i = 0; i < c_grid.size(); ++i) {
      if (!(c_grid[i] > 0.0)) throw ConfigError("cv: C values must be positive");
      if (i > 0 && !(c_grid[i] > c_grid[i - 1])) throw ConfigError("cv: c_grid must be sorted ascending");
    }
    if (inner_folds < 2) throw ConfigError("cv: inner_folds must be at least 2");
  }
};

struct LinearSvm {
  Vector weights;
  double bias = 0.0;
  Vector dual;  // alpha, one per training point

  double decision(const Eigen::Ref<const Vector>& x) const { return weights.dot(x) + bias; }
  int predict(const Eigen::Ref<const Vector>& x) const { return decision(x) >= 0.0 ? 1 : -1; }
};

namespace detail {

/// Dual of the soft-margin problem on a precomputed kernel,
///   min 1/2 a^T Q a - e^T a,  Q_ij = y_i y_j K_ij,  y^T a = 0,  0 <= a_i <= C_i,
/// by a Mehrotra predictor-corrector interior-point method. Returns alpha.
inline Vector solve_dual(const Matrix& kernel, std::span<const int> labels, const Vector& box, const SvmConfig& cfg) {
  const Index n = kernel.rows();
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];
  const Matrix q = y.asDiagonal() * kernel * y.asDiagonal();
  const double scale = std::max(1.0, q.diagonal().maxCoeff());

  const double c = box.maxCoeff();
  Vector a = box / 2.0;
  Vector z = Vector::Constant(n, 1.0);  // multiplier of a >= 0
  Vector v = Vector::Constant(n, 1.0);  // multiplier of a <= C
  double nu = 0.0;                      // multiplier of y^T a = 0

  auto step_to_boundary = [](const Vector& x, const Vector& dx) {
    double t = 1.0;
    for (Index i = 0; i < x.size(); ++i)
      if (dx[i] < 0.0) t = std::min(t, -x[i] / dx[i]);
    return t;
  };

  double mu = 0.0, rd_norm = 0.0, rp = 0.0;
  for (std::int64_t iter = 0; iter < cfg.max_iterations; ++iter) {
    const Vector s = box - a;
    const Vector rd = q * a - Vector::Ones(n) - z + v + nu * y;
    rp = y.dot(a);
    mu = (a.dot(z) + s.dot(v)) / static_cast<double>(2 * n);
    rd_norm = rd.cwiseAbs().maxCoeff();
    if (rd_norm <= cfg.tolerance * scale && std::abs(rp) <= cfg.tolerance * c && mu <= cfg.tolerance * std::min(1.0, c))
      return a;

    Matrix h = q;
    h.diagonal() += (z.array() / a.array() + v.array() / s.array()).matrix();
    const Eigen::LLT<Matrix> llt(h);
    if (llt.info() != Eigen::Success) throw NumericalError("train_linear_svm: interior-point system is not positive definite", static_cast<std::size_t>(iter));
    const Vector ty = llt.solve(y);

    // Solves the reduced Newton system for complementarity targets c1 (a.z) and c2 (s.v).
    auto newton = [&](const Vector& c1, const Vector& c2, Vector& da, Vector& dz, Vector& dv, double& dnu) {
      const Vector r = -rd + (c1.array() / a.array()).matrix() - (c2.array() / s.array()).matrix();
      const Vector u = llt.solve(r);
      dnu = (y.dot(u) + rp) / y.dot(ty);
      da = u - ty * dnu;
      dz = ((c1 - z.cwiseProduct(da)).array() / a.array()).matrix();
      dv = ((c2 + v.cwiseProduct(da)).array() / s.array()).matrix();
    };

    Vector da, dz, dv;
    double dnu = 0.0;
    newton(-a.cwiseProduct(z), -s.cwiseProduct(v), da, dz, dv, dnu);
    const double t_aff = std::min({step_to_boundary(a, da), step_to_boundary(s, -da), step_to_boundary(z, dz),
                                   step_to_boundary(v, dv)});
    const double mu_aff = ((a + t_aff * da).dot(z + t_aff * dz) + (s - t_aff * da).dot(v + t_aff * dv)) /
                          static_cast<double>(2 * n);
    const double sigma = std::pow(mu_aff / mu, 3.0);
    const Vector c1 = Vector::Constant(n, sigma * mu) - a.cwiseProduct(z) - da.cwiseProduct(dz);
    const Vector c2 = Vector::Constant(n, sigma * mu) - s.cwiseProduct(v) + da.cwiseProduct(dv);
    newton(c1, c2, da, dz, dv, dnu);
    const double t = 0.99 * std::min({1.0 / 0.99, step_to_boundary(a, da), step_to_boundary(s, -da),
                                      step_to_boundary(z, dz), step_to_boundary(v, dv)});
    a += t * da;
    z += t * dz;
    v += t * dv;
    nu += t * dnu;
  }
  throw ConvergenceError("train_linear_svm: interior-point method did not converge",
                         static_cast<std::size_t>(cfg.max_iterations), std::max({rd_norm / scale, std::abs(rp) / c, mu}));
}

/// Weighted hinge loss sum_i u_i max(0, 1 - y_i (m_i + b)).
inline double hinge_loss(const Vector& margins, std::span<const int> labels, const Vector& weights, double b) {
  double total = 0.0;
  for (Index i = 0; i < margins.size(); ++i)
    total += weights[i] * std::max(0.0, 1.0 - labels[static_cast<std::size_t>(i)] * (margins[i] + b));
  return total;
}

/// Bias minimizing the weighted hinge loss for fixed margins m = Xw.
/// The minimizers form an interval; its midpoint is returned.
inline double optimal_bias(const Vector& margins, std::span<const int> labels, const Vector& weights) {
  const Index n = margins.size();
  auto hinge = [&](double b) { return hinge_loss(margins, labels, weights, b); };
  std::vector<double> breaks(static_cast<std::size_t>(n));
  std::vector<double> values(static_cast<std::size_t>(n));
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    breaks[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] - margins[i];
    values[static_cast<std::size_t>(i)] = hinge(breaks[static_cast<std::size_t>(i)]);
    best = std::min(best, values[static_cast<std::size_t>(i)]);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < breaks.size(); ++i)
    if (values[i] <= best + 1e-11 * (1.0 + best)) {
      lo = std::min(lo, breaks[i]);
      hi = std::max(hi, breaks[i]);
    }
  return 0.5 * (lo + hi);
}

inline int class_count(std::span<const int> labels, int cls) {
  return static_cast<int>(std::count(labels.begin(), labels.end(), cls));
}

}  // namespace detail

/// Trains on rows of `features` with labels +1/-1.
inline LinearSvm train_linear_svm(const Eigen::Ref<const Matrix>& features, std::span<const int> labels, double c,
                                  const SvmConfig& cfg = {}) {
  if (static_cast<Index>(labels.size()) != features.rows())
    throw InputError("train_linear_svm: label count differs from row count");
  if (!(c > 0.0)) throw InputError("train_linear_svm: C must be positive");
  for (int y : labels)
    if (y != 1 && y != -1) throw InputError("train_linear_svm: labels must be +1 or -1");
  if (detail::class_count(labels, 1) == 0 || detail::class_count(labels, -1) == 0)
    throw InputError("train_linear_svm: both classes are required");
  // Per-sample box C_i; balanced weighting gives both classes the same total weight.
  const auto n = static_cast<double>(labels.size());
  const std::array<double, 2> counts{static_cast<double>(detail::class_count(labels, -1)),
                                     static_cast<double>(detail::class_count(labels, 1))};
  Vector box(static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    box[static_cast<Index>(i)] = cfg.balanced ? c * n / (2.0 * counts[labels[i] > 0 ? 1 : 0]) : c;
  const Matrix kernel = features * features.transpose();
  Vector alpha = detail::solve_dual(kernel, labels, box, cfg);
  Vector ya(alpha.size());
  for (Index i = 0; i < alpha.size(); ++i) ya[i] = alpha[i] * labels[static_cast<std::size_t>(i)];
  LinearSvm model;
  model.weights = features.transpose() * ya;
  const Vector margins = features * model.weights;
  model.bias = detail::optimal_bias(margins, labels, box);

  // Certify optimality through the primal-dual gap.
  const double primal = 0.5 * model.weights.squaredNorm() + detail::hinge_loss(margins, labels, box, model.bias);
  const double dual = alpha.sum() - 0.5 * model.weights.squaredNorm();
  if (primal - dual > kSvmGapTolerance * std::max(1.0, std::abs(primal)))
    throw ConvergenceError("train_linear_svm: duality gap " + std::to_string(primal - dual) + " above tolerance", 0,
                           primal - dual);
  model.dual = std::move(alpha);
  return model;
}

/// z-scoring with statistics of a training set. Constant features keep scale 1.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Eigen::Ref<const Matrix>& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Index f = 0; f < x.cols(); ++f) {
      const double var = (x.col(f).array() - s.mean[f]).square().mean();
      s.scale[f] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }
  static Standardizer identity(Index f) { return {Vector::Zero(f), Vector::Ones(f)}; }

  Matrix apply(const Eigen::Ref<const Matrix>& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

namespace detail {

inline Matrix rows_of(const Matrix& x, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = x.row(idx[r]);
  return out;
}

inline std::vector<int> labels_of(const std::vector<int>& y, const std::vector<Index>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(y[static_cast<std::size_t>(i)]);
  return out;
}

/// Stratified fold id for each position of `labels`: each class is shuffled
/// and dealt round-robin, the deal continuing from one class to the next.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, std::mt19937_64& rng) {
  std::vector<int> fold(labels.size(), 0);
  int next = 0;
  for (int cls : {1, -1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t m : members) fold[m] = next++ % folds;
  }
  return fold;
}

struct TrainedFold {
  LinearSvm model;
  Standardizer standardizer;
};

inline TrainedFold fit_standardized(const Matrix& x, const std::vector<int>& y, double c, bool standardize,
                                    const SvmConfig& svm) {
  TrainedFold out{{}, standardize ? Standardizer::fit(x) : Standardizer::identity(x.cols())};
  out.model = train_linear_svm(standardize ? out.standardizer.apply(x) : x, y, c, svm);
  return out;
}

}  // namespace detail

struct FoldResult {
  std::string video_id;
  int label = 0;
  int predicted = 0;
  double decision = 0.0;
  double chosen_c = 0.0;
  double inner_accuracy = 0.0;
};

struct EvaluationReport {
  double accuracy = 0.0;
  std::array<double, 2> class_accuracy{};  // [0] class -1, [1] class +1
  std::vector<FoldResult> folds;
  std::uint64_t seed = 0;
};

/// Inner stratified k-fold accuracy for each C on one training set. Fold
/// assignment depends only on `rng`.
inline std::vector<double> inner_cv_accuracy(const Matrix& x, const std::vector<int>& y, const CvConfig& cfg,
                                             std::mt19937_64& rng) {
  const auto fold = detail::stratified_folds(y, cfg.inner_folds, rng);
  std::vector<double> correct(cfg.c_grid.size(), 0.0);
  for (int f = 0; f < cfg.inner_folds; ++f) {
    std::vector<Index> train, test;
    for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? test : train).push_back(static_cast<Index>(i));
    if (test.empty()) continue;
    const auto y_train = detail::labels_of(y, train);
    if (detail::class_count(y_train, 1) == 0 || detail::class_count(y_train, -1) == 0)
      throw StratificationError("inner fold " + std::to_string(f) + " training set lost a class");
    const Matrix x_train = detail::rows_of(x, train);
    const Standardizer st = cfg.standardize ? Standardizer::fit(x_train) : Standardizer::identity(x.cols());
    const Matrix xs_train = st.apply(x_train);
    const Matrix xs_test = st.apply(detail::rows_of(x, test));
    for (std::size_t ci = 0; ci < cfg.c_grid.size(); ++ci) {
      const LinearSvm model = train_linear_svm(xs_train, y_train, cfg.c_grid[ci], cfg.svm);
      for (std::size_t r = 0; r < test.size(); ++r)
        if (model.predict(xs_test.row(static_cast<Index>(r)).transpose()) == y[static_cast<std::size_t>(test[r])])
          correct[ci] += 1.0;
    }
  }
  for (auto& c : correct) c /= static_cast<double>(y.size());
  return correct;
}

/// Index of the best C; ties resolve to the smaller C (earlier in the grid).
inline std::size_t select_c(const std::vector<double>& accuracy) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < accuracy.size(); ++i)
    if (accuracy[i] > accuracy[best]) best = i;
  return best;
}

/// Leave-one-out over videos; C chosen per outer fold by inner stratified CV.
/// Outer folds run on `threads` workers; the report does not depend on it.
inline EvaluationReport nested_loo_evaluate(const LabeledDataset& data, const CvConfig& cfg, unsigned threads = 1) {
  data.validate();
  cfg.validate();
  const Index v = data.features.rows();
  if (v < cfg.inner_folds + 1)
    throw InputError("nested_loo_evaluate: need at least inner_folds + 1 = " + std::to_string(cfg.inner_folds + 1) +
                     " videos, got " + std::to_string(v));
  for (int cls : {1, -1})
    if (detail::class_count(data.labels, cls) < 2)
      throw StratificationError("nested_loo_evaluate: class '" + data.class_names[cls > 0 ? 1 : 0] +
                                "' has fewer than 2 videos, a leave-one-out training fold would lose it");

  EvaluationReport report;
  report.seed = cfg.seed;
  report.folds.resize(static_cast<std::size_t>(v));
  parallel_for(static_cast<std::size_t>(v), threads, [&](std::size_t held_out) {
    std::vector<Index> train;
    for (Index i = 0; i < v; ++i)
      if (static_cast<std::size_t>(i) != held_out) train.push_back(i);
    const Matrix x_train = detail::rows_of(data.features, train);
    const auto y_train = detail::labels_of(data.labels, train);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(held_out)};
    std::mt19937_64 rng(seq);
    const auto inner = inner_cv_accuracy(x_train, y_train, cfg, rng);
    const std::size_t best = select_c(inner);
    const auto fitted = detail::fit_standardized(x_train, y_train, cfg.c_grid[best], cfg.standardize, cfg.svm);
    const Matrix x_test = fitted.standardizer.apply(data.features.row(static_cast<Index>(held_out)));
    FoldResult& r = report.folds[held_out];
    r.video_id = data.video_ids[held_out];
    r.label = data.labels[held_out];
    r.decision = fitted.model.decision(x_test.row(0).transpose());
    r.predicted = r.decision >= 0.0 ? 1 : -1;
    r.chosen_c = cfg.c_grid[best];
    r.inner_accuracy = inner[best];
  });

  std::array<double, 2> hits{}, totals{};
  for (const auto& f : report.folds) {
    const std::size_t cls = f.label > 0 ? 1 : 0;
    totals[cls] += 1.0;
    if (f.predicted == f.label) hits[cls] += 1.0;
  }
  report.accuracy = (hits[0] + hits[1]) / static_cast<double>(v);
  for (std::size_t c = 0; c < 2; ++c) report.class_accuracy[c] = hits[c] / totals[c];
  return report;
}

/// The C chosen most often across outer folds (ties: smaller C).
inline double modal_c(const EvaluationReport& report) {
  std::vector<std::pair<double, int>> counts;
  for (const auto& f : report.folds) {
    auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& p) { return p.first == f.chosen_c; });
    if (it == counts.end()) counts.emplace_back(f.chosen_c, 1); else ++it->second;
  }
  std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return counts.front().first;
}

/// Retrains on `count` stratified random subsets holding `fraction` of each
/// class and returns the weight vectors (in standardized units when enabled).
inline std::vector<Vector> subsample_weights(const LabeledDataset& data, double c, int count, double fraction,
                                             std::uint64_t seed, bool standardize, const SvmConfig& svm = {}) {
  data.validate();
  if (count <= 0) throw ConfigError("subsample_weights: count must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample_weights: fraction must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    std::vector<Index> picked;
    for (int cls : {1, -1}) {
      std::vector<Index> members;
      for (std::size_t i = 0; i < data.labels.size(); ++i)
        if (data.labels[i] == cls) members.push_back(static_cast<Index>(i));
      std::shuffle(members.begin(), members.end(), rng);
      const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size()))));
      picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    std::sort(picked.begin(), picked.end());
    const auto fitted = detail::fit_standardized(detail::rows_of(data.features, picked),
                                                 detail::labels_of(data.labels, picked), c, standardize, svm);
    out.push_back(fitted.model.weights);
  }
  return out;
}

struct ComponentWeights {
  Index component = 0;
  std::string name;
  std::vector<double> values;  // one per weight vector
  double median = 0.0;
  double mean = 0.0;
};

/// For each of the Q components, the mean |w_f| over the 2Q-1 features whose
/// channel pair includes it, for every weight vector. Sorted by descending
/// median (ties: lower component index first).
inline std::vector<ComponentWeights> component_weight_summary(std::span<const Vector> weights,
                                                              const std::vector<std::string>& channel_names) {
  const auto q = static_cast<Index>(channel_names.size());
  if (q == 0) throw InputError("component_weight_summary: no channels");
  if (weights.empty()) throw InputError("component_weight_summary: no weight vectors");
  std::vector<ComponentWeights> out(static_cast<std::size_t>(q));
  for (Index c = 0; c < q; ++c) {
    out[static_cast<std::size_t>(c)].component = c;
    out[static_cast<std::size_t>(c)].name = channel_names[static_cast<std::size_t>(c)];
  }
  for (const auto& w : weights) {
    if (w.size() != q * q)
      throw InputError("component_weight_summary: weight vector of length " + std::to_string(w.size()) +
                       " does not match Q^2 = " + std::to_string(q * q));
    const Matrix a = w.cwiseAbs().reshaped(q, q).transpose();  // a(i, j) = |w_{i*Q+j}|
    for (Index c = 0; c < q; ++c) {
      const double total = a.row(c).sum() + a.col(c).sum() - a(c, c);
      out[static_cast<std::size_t>(c)].values.push_back(total / static_cast<double>(2 * q - 1));
    }
  }
  for (auto& cw : out) {
    std::vector<double> sorted = cw.values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    cw.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    cw.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(m);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.median > b.median; });
  return out;
}

}  // namespace facial_basis
