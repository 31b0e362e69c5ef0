#pragma once

// Seeded synthetic data: planted localized dictionaries with sparse codes,
// labeled behavioral series with or without a lagged channel coupling, and
// separable point clouds. Also group-wise Hungarian matching of atoms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/classifier.hpp"
#include "facial_basis/dict_learn.hpp"
#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"

namespace facial_basis {

enum class SignPolicy { kRandom, kPositive };

struct SynthSpec {
  LandmarkTopology topology = LandmarkTopology::ibug51();
  int planted_atom_count = 12;
  std::optional<GroupAllocation> per_group_allocation;  // default_allocation() when unset
  int samples = 2000;
  int active_atoms_per_sample = 3;
  double min_magnitude = 0.5;
  double max_magnitude = 2.0;
  SignPolicy sign_policy = SignPolicy::kRandom;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  double max_coherence = 0.6;  // within-group |cos| bound for planted atoms
  int max_attempts = 10000;    // rejection-sampling budget per atom

  GroupAllocation allocation() const {
    LearnConfig lc;
    lc.atom_count = planted_atom_count;
    lc.group_allocation = per_group_allocation;
    return lc.resolved_allocation(topology);
  }

  void validate() const {
    if (planted_atom_count <= 0 || samples <= 0) throw ConfigError("synth: counts must be positive");
    if (active_atoms_per_sample < 1 || active_atoms_per_sample > planted_atom_count)
      throw ConfigError("synth: active_atoms_per_sample must lie in [1, K]");
    if (!(min_magnitude > 0.0) || max_magnitude < min_magnitude)
      throw ConfigError("synth: need 0 < min_magnitude <= max_magnitude");
    if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be non-negative");
    (void)allocation();
  }
};

struct PlantedCorpus {
  Matrix samples;  // N x 3L
  BasisDictionary truth;
  Matrix codes;  // N x K
};

inline PlantedCorpus generate_planted_corpus(const SynthSpec& spec) {
  spec.validate();
  const auto alloc = spec.allocation();
  const auto groups = groups_from_allocation(alloc);
  const Index k_count = spec.planted_atom_count;
  const Index dim = spec.topology.dimension();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix atoms = Matrix::Zero(dim, k_count);
  for (Index k = 0; k < k_count; ++k) {
    const GroupCode g = groups[static_cast<std::size_t>(k)];
    const auto rows = spec.topology.rows(g);
    bool accepted = false;
    for (int attempt = 0; attempt < spec.max_attempts && !accepted; ++attempt) {
      Vector cand = Vector::Zero(dim);
      for (Index r : rows) cand[r] = normal(rng);
      cand /= cand.norm();
      accepted = true;
      for (Index j = 0; j < k && accepted; ++j)
        if (groups[static_cast<std::size_t>(j)] == g && std::abs(cand.dot(atoms.col(j))) > spec.max_coherence)
          accepted = false;
      if (accepted) atoms.col(k) = cand;
    }
    if (!accepted)
      throw InputError("synth: could not place atom " + std::to_string(k) + " in group " + std::string(to_string(g)) +
                       " with |cos| <= " + std::to_string(spec.max_coherence) + " after " +
                       std::to_string(spec.max_attempts) + " attempts");
  }

  Matrix codes = Matrix::Zero(spec.samples, k_count);
  std::uniform_real_distribution<double> magnitude(spec.min_magnitude, spec.max_magnitude);
  std::vector<Index> ids(static_cast<std::size_t>(k_count));
  for (Index k = 0; k < k_count; ++k) ids[static_cast<std::size_t>(k)] = k;
  for (Index n = 0; n < spec.samples; ++n) {
    // partial Fisher-Yates for the active set
    for (int a = 0; a < spec.active_atoms_per_sample; ++a) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(a), ids.size() - 1);
      std::swap(ids[static_cast<std::size_t>(a)], ids[pick(rng)]);
      double c = spec.min_magnitude == spec.max_magnitude ? spec.min_magnitude : magnitude(rng);
      if (spec.sign_policy == SignPolicy::kRandom && (rng() & 1u)) c = -c;
      codes(n, ids[static_cast<std::size_t>(a)]) = c;
    }
  }
  Matrix samples = codes * atoms.transpose();
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index n = 0; n < samples.rows(); ++n)
      for (Index r = 0; r < dim; ++r) samples(n, r) += noise(rng);
  }
  BasisDictionary truth(std::move(atoms), groups, names_for_groups(groups), 1.0, spec.topology);
  return {std::move(samples), std::move(truth), std::move(codes)};
}

// ---------------------------------------------------------------------------
// Assignment

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Returns the column assigned to each row. O(n^2 m) shortest augmenting paths.
inline std::vector<Index> hungarian_min_cost(const Matrix& cost) {
  const Index n = cost.rows(), m = cost.cols();
  if (n > m) throw InputError("hungarian: more rows than columns");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), kInf);
    std::vector<bool> used(static_cast<std::size_t>(m + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

struct AtomMatch {
  Index truth_atom;
  Index learned_atom;
  double abs_cos;
};

struct MatchReport {
  std::vector<AtomMatch> matches;
  std::vector<Index> permutation;  // truth atom -> learned atom, -1 when unmatched
  double min_abs_cos = 0.0;
  double mean_abs_cos = 0.0;
  std::vector<std::string> warnings;
};

/// Group-wise maximum-|cos| assignment between learned and ground-truth atoms.
inline MatchReport match_dictionaries(const BasisDictionary& learned, const BasisDictionary& truth) {
  if (!(learned.topology() == truth.topology())) throw InputError("match_dictionaries: topologies differ");
  MatchReport report;
  report.permutation.assign(static_cast<std::size_t>(truth.atom_count()), -1);
  auto unit = [](const Matrix& w, Index k) {
    const double n = w.col(k).norm();
    return n > 0.0 ? Vector(w.col(k) / n) : Vector(w.col(k));
  };
  for (GroupCode g : kAllGroups) {
    std::vector<Index> t_idx, l_idx;
    for (Index k = 0; k < truth.atom_count(); ++k)
      if (truth.atom_groups()[static_cast<std::size_t>(k)] == g) t_idx.push_back(k);
    for (Index k = 0; k < learned.atom_count(); ++k)
      if (learned.atom_groups()[static_cast<std::size_t>(k)] == g) l_idx.push_back(k);
    if (t_idx.size() != l_idx.size())
      report.warnings.push_back("group " + std::string(to_string(g)) + ": " + std::to_string(l_idx.size()) +
                                " learned atoms vs " + std::to_string(t_idx.size()) + " ground-truth atoms");
    if (t_idx.empty() || l_idx.empty()) continue;
    Matrix abs_cos(static_cast<Index>(t_idx.size()), static_cast<Index>(l_idx.size()));
    for (std::size_t a = 0; a < t_idx.size(); ++a)
      for (std::size_t b = 0; b < l_idx.size(); ++b)
        abs_cos(static_cast<Index>(a), static_cast<Index>(b)) =
            std::abs(unit(truth.atoms(), t_idx[a]).dot(unit(learned.atoms(), l_idx[b])));
    const bool rows_are_truth = t_idx.size() <= l_idx.size();
    const Matrix cost = rows_are_truth ? Matrix(-abs_cos) : Matrix(-abs_cos.transpose());
    const auto assign = hungarian_min_cost(cost);
    for (std::size_t r = 0; r < assign.size(); ++r) {
      const std::size_t ti = rows_are_truth ? r : static_cast<std::size_t>(assign[r]);
      const std::size_t li = rows_are_truth ? static_cast<std::size_t>(assign[r]) : r;
      report.matches.push_back({t_idx[ti], l_idx[li], abs_cos(static_cast<Index>(ti), static_cast<Index>(li))});
      report.permutation[static_cast<std::size_t>(t_idx[ti])] = l_idx[li];
    }
  }
  std::sort(report.matches.begin(), report.matches.end(),
            [](const auto& a, const auto& b) { return a.truth_atom < b.truth_atom; });
  if (!report.matches.empty()) {
    report.min_abs_cos = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& m : report.matches) {
      report.min_abs_cos = std::min(report.min_abs_cos, m.abs_cos);
      sum += m.abs_cos;
    }
    report.mean_abs_cos = sum / static_cast<double>(report.matches.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Labeled behavioral series

struct LabeledSeriesSpec {
  int videos_per_class = 30;
  int bu_channels = 5;
  int frames = 600;
  double frame_rate = 30.0;
  int coupled_from = 0;        // channel index in [0, K + 3)
  int coupled_to = 1;
  int lag_frames = 3;          // coupled_to follows coupled_from by this many frames
  double coupling = 0.9;       // weight of the driving channel in class A
  double noise_sigma = 0.1;    // additive white noise on every channel
  double smoothness = 0.8;     // AR(1) coefficient of the base signals
  bool couple_class_a = true;  // false gives a null control where neither class is coupled
  std::uint64_t seed = 0;
};

struct LabeledSeries {
  CoefficientSeries series;
  int label;  // +1 class A (coupled), -1 class B
  std::string video_id;
};

/// Class A videos (label +1) carry x_to[t] = coupling * x_from[t - lag] +
/// (1 - coupling) * own[t] + noise; class B channels are all independent.
/// Videos are ordered A000.., B000...
inline std::vector<LabeledSeries> generate_labeled_series(const LabeledSeriesSpec& spec) {
  const int q = spec.bu_channels + 3;
  if (spec.videos_per_class <= 0 || spec.bu_channels <= 0 || spec.frames <= 0)
    throw ConfigError("synth series: counts must be positive");
  if (spec.coupled_from < 0 || spec.coupled_from >= q || spec.coupled_to < 0 || spec.coupled_to >= q ||
      spec.coupled_from == spec.coupled_to)
    throw ConfigError("synth series: coupled channels must be two distinct channels in [0, Q)");
  if (spec.lag_frames < 0 || spec.lag_frames >= spec.frames) throw ConfigError("synth series: lag out of range");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double innovation = std::sqrt(1.0 - spec.smoothness * spec.smoothness);
  auto ar_signal = [&](Index len) {
    Vector x(len);
    double prev = normal(rng);
    for (Index t = 0; t < len; ++t) {
      prev = spec.smoothness * prev + innovation * normal(rng);
      x[t] = prev;
    }
    return x;
  };

  std::vector<LabeledSeries> out;
  for (int cls : {1, -1}) {
    for (int v = 0; v < spec.videos_per_class; ++v) {
      Matrix ch(spec.frames, q);
      for (int c = 0; c < q; ++c) ch.col(c) = ar_signal(spec.frames);
      if (cls > 0 && spec.couple_class_a) {
        const Vector driver = ch.col(spec.coupled_from);
        for (Index t = 0; t < spec.frames; ++t) {
          const double src = t >= spec.lag_frames ? driver[t - spec.lag_frames] : ch(t, spec.coupled_to);
          ch(t, spec.coupled_to) = spec.coupling * src + (1.0 - spec.coupling) * ch(t, spec.coupled_to);
        }
      }
      if (spec.noise_sigma > 0.0)
        for (Index t = 0; t < spec.frames; ++t)
          for (int c = 0; c < q; ++c) ch(t, c) += spec.noise_sigma * normal(rng);
      char id[16];
      std::snprintf(id, sizeof id, "%c%03d", cls > 0 ? 'A' : 'B', v);
      out.push_back({CoefficientSeries(spec.frame_rate, ch.leftCols(spec.bu_channels), ch.rightCols(3)), cls, id});
    }
  }
  return out;
}

/// Two Gaussian clouds separated along a random direction u with
/// y * (u^T x) >= margin / 2 for every point (rejection sampled).
inline LabeledDataset generate_separable_blobs(int per_class, int dim, double margin, std::uint64_t seed,
                                               double spread = 1.0) {
  if (per_class <= 0 || dim <= 0 || margin < 0.0) throw ConfigError("blobs: invalid parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector u(dim);
  for (int d = 0; d < dim; ++d) u[d] = normal(rng);
  u /= u.norm();
  LabeledDataset data;
  data.features.resize(2 * per_class, dim);
  int row = 0;
  for (int cls : {1, -1}) {
    const Vector center = cls * (margin / 2.0 + 2.0 * spread) * u;
    for (int i = 0; i < per_class; ++i) {
      Vector x(dim);
      do {
        for (int d = 0; d < dim; ++d) x[d] = center[d] + spread * normal(rng);
      } while (cls * u.dot(x) < margin / 2.0);
      data.features.row(row) = x.transpose();
      data.labels.push_back(cls);
      data.video_ids.push_back((cls > 0 ? "A" : "B") + std::to_string(i));
      ++row;
    }
  }
  return data;
}

}  // namespace facial_basis
