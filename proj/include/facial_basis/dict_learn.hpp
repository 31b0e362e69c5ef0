#pragma once

// Batch learning of a localized sparse dictionary. Alternates
//   1. sparse coding of every sample with W fixed (warm-started LASSO), and
//   2. block coordinate descent over atoms with Z fixed, where each atom is
//      the least-squares fit to its residual restricted to its group rows and
//      projected onto the unit l2 ball.
// Rows outside an atom's group are never written, so they stay exactly 0.0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/parallel.hpp"
#include "facial_basis/sparse_coder.hpp"

namespace facial_basis {

/// Atom count per group, indexed by GroupCode.
using GroupAllocation = std::array<int, 6>;

enum class InitMethod { kMaskedGaussian, kMaskedDataSamples };

inline std::string_view to_string(InitMethod m) {
  return m == InitMethod::kMaskedGaussian ? "masked_gaussian" : "masked_data_samples";
}

/// Proportional to the group landmark counts (rounded, at least one atom per
/// group); the mouth absorbs the remainder. iBUG-51 with K=50 gives
/// LB 5, RB 5, LE 6, RE 6, NO 9, MO 19.
inline GroupAllocation default_allocation(const LandmarkTopology& topo, int atom_count) {
  if (atom_count < static_cast<int>(kAllGroups.size()))
    throw ConfigError("allocation: need at least one atom per group (K >= 6), got K = " + std::to_string(atom_count));
  GroupAllocation alloc{};
  int assigned = 0;
  for (GroupCode g : kAllGroups) {
    if (g == GroupCode::MO) continue;
    const double share = static_cast<double>(atom_count) * static_cast<double>(topo.group(g).landmarks.size()) /
                         static_cast<double>(topo.landmark_count());
    alloc[static_cast<std::size_t>(g)] = std::max(1, static_cast<int>(std::lround(share)));
    assigned += alloc[static_cast<std::size_t>(g)];
  }
  auto& mouth = alloc[static_cast<std::size_t>(GroupCode::MO)];
  mouth = atom_count - assigned;
  while (mouth < 1) {
    auto largest = std::max_element(alloc.begin(), alloc.end() - 1);
    --*largest;
    ++mouth;
  }
  return alloc;
}

/// Storage order of atoms: groups in LB, RB, LE, RE, NO, MO order.
inline std::vector<GroupCode> groups_from_allocation(const GroupAllocation& alloc) {
  std::vector<GroupCode> out;
  for (GroupCode g : kAllGroups)
    for (int i = 0; i < alloc[static_cast<std::size_t>(g)]; ++i) out.push_back(g);
  return out;
}

struct LearnConfig {
  int atom_count = 50;
  double lambda = 0.2;
  std::optional<GroupAllocation> group_allocation;  // default_allocation() when unset
  int outer_iterations = 100;
  std::uint64_t seed = 0;
  InitMethod init = InitMethod::kMaskedDataSamples;
  double convergence_tol = 1e-5;  // relative objective change between iterations
  int coding_max_iterations = 1000;
  double coding_tolerance = 1e-8;
  unsigned threads = 1;

  GroupAllocation resolved_allocation(const LandmarkTopology& topo) const {
    GroupAllocation alloc = group_allocation ? *group_allocation : default_allocation(topo, atom_count);
    int sum = 0;
    for (GroupCode g : kAllGroups) {
      const int n = alloc[static_cast<std::size_t>(g)];
      if (n < 1) throw ConfigError("allocation: group " + std::string(to_string(g)) + " needs at least one atom");
      sum += n;
    }
    if (sum != atom_count)
      throw ConfigError("allocation sums to " + std::to_string(sum) + ", expected K = " + std::to_string(atom_count));
    return alloc;
  }

  void validate() const {
    if (atom_count <= 0) throw ConfigError("learn: atom_count must be positive");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("learn: lambda must be positive");
    if (outer_iterations <= 0) throw ConfigError("learn: outer_iterations must be positive");
    if (!(convergence_tol > 0.0)) throw ConfigError("learn: convergence_tol must be positive");
    CodingConfig{lambda, coding_max_iterations, coding_tolerance}.validate();
  }
};

struct IterationRecord {
  int iteration;  // 0 = initial dictionary with all-zero codes
  double objective;
  double mean_sparsity;  // fraction of nonzero code entries
  double max_atom_norm;
};

struct TrainingLog {
  std::vector<IterationRecord> records;
  std::string stop_reason;  // "converged" or "max_iterations"
  int reinitialized_atoms = 0;

  double initial_objective() const { return records.front().objective; }
  double final_objective() const { return records.back().objective; }
};

struct LearnResult {
  BasisDictionary dictionary;
  TrainingLog log;
};

namespace detail {

inline double max_column_norm(const Matrix& w) {
  double m = 0.0;
  for (Index k = 0; k < w.cols(); ++k) m = std::max(m, w.col(k).norm());
  return m;
}

/// Block coordinate descent over atoms. `data` is 3L x N, `codes` is K x N.
/// `rows[k]` lists the rows atom k may occupy. Atoms whose code row is all
/// zero are left untouched.
inline void update_atoms(Matrix& atoms, const Matrix& data, const Matrix& codes,
                         const std::vector<std::vector<Index>>& rows, std::size_t iteration) {
  const Matrix a = codes * codes.transpose();  // K x K
  const Matrix b = data * codes.transpose();   // 3L x K
  for (Index k = 0; k < atoms.cols(); ++k) {
    const double usage = a(k, k);
    if (usage <= 0.0) continue;
    const auto& mask = rows[static_cast<std::size_t>(k)];
    Vector u(static_cast<Index>(mask.size()));
    for (Index i = 0; i < u.size(); ++i) {
      const Index r = mask[static_cast<std::size_t>(i)];
      u[i] = (b(r, k) - atoms.row(r).dot(a.col(k)) + atoms(r, k) * usage) / usage;
    }
    if (!u.allFinite()) throw NumericalError("dictionary update produced non-finite atom " + std::to_string(k), iteration);
    const double norm = u.norm();
    if (norm > 1.0) u /= norm;
    for (Index i = 0; i < u.size(); ++i) atoms(mask[static_cast<std::size_t>(i)], k) = u[i];
  }
}

inline std::vector<std::vector<Index>> atom_rows(const LandmarkTopology& topo, const std::vector<GroupCode>& groups) {
  std::vector<std::vector<Index>> rows;
  rows.reserve(groups.size());
  for (GroupCode g : groups) rows.push_back(topo.rows(g));
  return rows;
}

inline double masked_norm(const Eigen::Ref<const Vector>& v, const std::vector<Index>& rows) {
  double s = 0.0;
  for (Index r : rows) s += v[r] * v[r];
  return std::sqrt(s);
}

}  // namespace detail

/// One dictionary update with the codes fixed. `samples` is N x 3L and
/// `codes` is N x K (one row per sample). Returns the updated atoms.
inline Matrix update_dictionary_step(const Matrix& atoms, const Eigen::Ref<const Matrix>& samples,
                                     const Eigen::Ref<const Matrix>& codes, const LandmarkTopology& topology,
                                     const std::vector<GroupCode>& assignments) {
  if (atoms.rows() != topology.dimension()) throw InputError("update_dictionary_step: atoms must have 3L rows");
  if (static_cast<std::size_t>(atoms.cols()) != assignments.size())
    throw InputError("update_dictionary_step: one group assignment per atom required");
  if (samples.cols() != atoms.rows()) throw InputError("update_dictionary_step: sample dimension differs from 3L");
  if (codes.rows() != samples.rows() || codes.cols() != atoms.cols())
    throw InputError("update_dictionary_step: codes must be N x K");
  Matrix out = atoms;
  detail::update_atoms(out, samples.transpose(), codes.transpose(), detail::atom_rows(topology, assignments), 0);
  return out;
}

/// Sets atom_names to "<group>-<ordinal>" in storage order.
inline BasisDictionary assign_names(const BasisDictionary& dict) {
  return dict.with_names(names_for_groups(dict.atom_groups()));
}

/// Mean absolute activation of each atom pooled over every frame of every series.
inline Vector mean_abs_activation(Index atom_count, std::span<const CoefficientSeries> series) {
  if (series.empty()) throw InputError("rank_by_activation: no coefficient series given");
  Vector total = Vector::Zero(atom_count);
  double frames = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.bu_count() != atom_count)
      throw InputError("rank_by_activation: series " + std::to_string(i) + " has " + std::to_string(s.bu_count()) +
                       " BU channels, dictionary has K = " + std::to_string(atom_count));
    total += s.bu_coefficients().cwiseAbs().colwise().sum().transpose();
    frames += static_cast<double>(s.frame_count());
  }
  return total / frames;
}

/// Orders atoms by descending mean |z| (ties: lower atom index first). Atom
/// storage is untouched; only activation_rank is set (rank[0] = most active).
inline BasisDictionary rank_by_activation(const BasisDictionary& dict, std::span<const CoefficientSeries> series) {
  const Vector mean_abs = mean_abs_activation(dict.atom_count(), series);
  std::vector<int> order(static_cast<std::size_t>(dict.atom_count()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean_abs[a] > mean_abs[b]; });
  return dict.with_rank(std::move(order));
}

/// Learns a localized dictionary from `samples` (N x 3L, one deformation per row).
inline LearnResult learn(const Eigen::Ref<const Matrix>& samples, const LandmarkTopology& topology,
                         const LearnConfig& cfg) {
  cfg.validate();
  const GroupAllocation alloc = cfg.resolved_allocation(topology);
  const Index n = samples.rows();
  const Index k_count = cfg.atom_count;
  if (samples.cols() != topology.dimension())
    throw InputError("learn: samples have " + std::to_string(samples.cols()) + " columns, topology needs 3L = " +
                     std::to_string(topology.dimension()));
  if (n < k_count)
    throw InputError("learn: need at least K = " + std::to_string(k_count) + " samples, got N = " + std::to_string(n));
  if (!samples.allFinite()) throw InputError("learn: samples contain non-finite values");
  if (samples.cwiseAbs().maxCoeff() == 0.0) throw DegenerateInputError("learn: every sample is zero");

  const Matrix data = samples.transpose();  // 3L x N
  const std::vector<GroupCode> groups = groups_from_allocation(alloc);
  const auto rows = detail::atom_rows(topology, groups);
  std::mt19937_64 rng(cfg.seed);

  Matrix atoms = Matrix::Zero(topology.dimension(), k_count);
  if (cfg.init == InitMethod::kMaskedGaussian) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index k = 0; k < k_count; ++k) {
      const auto& mask = rows[static_cast<std::size_t>(k)];
      for (Index r : mask) atoms(r, k) = normal(rng);
      atoms.col(k) /= atoms.col(k).norm();
    }
  } else {
    // Per group, draw distinct samples from the half with the larger masked energy.
    for (GroupCode g : kAllGroups) {
      const auto mask = topology.rows(g);
      std::vector<std::pair<double, Index>> energy;
      for (Index i = 0; i < n; ++i) {
        const double e = detail::masked_norm(data.col(i), mask);
        if (e > 0.0) energy.emplace_back(e, i);
      }
      std::stable_sort(energy.begin(), energy.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      const std::size_t pool = std::max<std::size_t>(energy.size() / 2, std::min<std::size_t>(energy.size(), alloc[static_cast<std::size_t>(g)]));
      std::vector<Index> candidates;
      for (std::size_t i = 0; i < pool; ++i) candidates.push_back(energy[i].second);
      std::shuffle(candidates.begin(), candidates.end(), rng);
      std::size_t next = 0;
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Index k = 0; k < k_count; ++k) {
        if (groups[static_cast<std::size_t>(k)] != g) continue;
        if (next < candidates.size()) {
          const Index src = candidates[next++];
          for (Index r : mask) atoms(r, k) = data(r, src);
        } else {
          // group has no signal at all; fall back to a random direction
          for (Index r : mask) atoms(r, k) = normal(rng);
        }
        atoms.col(k) /= atoms.col(k).norm();
      }
    }
  }

  Matrix codes = Matrix::Zero(k_count, n);  // K x N
  TrainingLog log;
  log.records.push_back({0, 0.5 * data.squaredNorm(), 0.0, detail::max_column_norm(atoms)});
  log.stop_reason = "max_iterations";

  for (int it = 1; it <= cfg.outer_iterations; ++it) {
    const auto iteration = static_cast<std::size_t>(it);
    {
      BasisDictionary current(atoms, groups, names_for_groups(groups), cfg.lambda, topology);
      SparseCoder coder(current, CodingConfig{cfg.lambda, cfg.coding_max_iterations, cfg.coding_tolerance});
      parallel_for(static_cast<std::size_t>(n), cfg.threads, [&](std::size_t i) {
        Vector z = codes.col(static_cast<Index>(i));
        coder.refine(data.col(static_cast<Index>(i)), z);
        codes.col(static_cast<Index>(i)) = z;
      });
    }
    if (!codes.allFinite()) throw NumericalError("learn: sparse coding produced non-finite codes", iteration);

    detail::update_atoms(atoms, data, codes, rows, iteration);

    // Atoms unused for a whole iteration restart from the masked residual of
    // the worst-reconstructed samples. Their codes are zero, so the objective
    // is unchanged by the restart.
    std::vector<Index> dead;
    for (Index k = 0; k < k_count; ++k)
      if (codes.row(k).cwiseAbs().maxCoeff() == 0.0) dead.push_back(k);
    if (!dead.empty()) {
      const Matrix residual = data - atoms * codes;
      std::vector<Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Index{0});
      const Vector err = residual.colwise().squaredNorm().transpose();
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return err[a] > err[b]; });
      std::vector<bool> used(static_cast<std::size_t>(n), false);
      for (Index k : dead) {
        const auto& mask = rows[static_cast<std::size_t>(k)];
        for (Index src : order) {
          if (used[static_cast<std::size_t>(src)]) continue;
          const double norm = detail::masked_norm(residual.col(src), mask);
          if (!(norm > 0.0)) continue;
          used[static_cast<std::size_t>(src)] = true;
          for (Index r : mask) atoms(r, k) = residual(r, src) / norm;
          ++log.reinitialized_atoms;
          break;
        }
      }
    }

    const double objective = 0.5 * (data - atoms * codes).squaredNorm() + cfg.lambda * codes.cwiseAbs().sum();
    if (!std::isfinite(objective)) throw NumericalError("learn: non-finite objective", iteration);
    const double nonzeros = static_cast<double>((codes.array() != 0.0).count());
    log.records.push_back({it, objective, nonzeros / static_cast<double>(codes.size()), detail::max_column_norm(atoms)});

    const double previous = log.records[log.records.size() - 2].objective;
    if (std::abs(previous - objective) <= cfg.convergence_tol * std::max(previous, 1e-300)) {
      log.stop_reason = "converged";
      break;
    }
  }

  BasisDictionary dict(std::move(atoms), groups, names_for_groups(groups), cfg.lambda, topology);
  return {std::move(dict), std::move(log)};
}

}  // namespace facial_basis
