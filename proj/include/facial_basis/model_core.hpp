#pragma once

// Domain types shared by every stage of the pipeline plus the deterministic
// synthesis and validation operations.
//
// Coordinate layout: a deformation over L landmarks is a vector of length 3L
// whose entry 3j+c holds coordinate c (0=x, 1=y, 2=z) of landmark j.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/errors.hpp"

namespace facial_basis {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class GroupCode : int { LB = 0, RB, LE, RE, NO, MO };

inline constexpr std::array<GroupCode, 6> kAllGroups = {GroupCode::LB, GroupCode::RB, GroupCode::LE,
                                                        GroupCode::RE, GroupCode::NO, GroupCode::MO};

inline constexpr std::string_view to_string(GroupCode g) {
  switch (g) {
    case GroupCode::LB: return "LB";
    case GroupCode::RB: return "RB";
    case GroupCode::LE: return "LE";
    case GroupCode::RE: return "RE";
    case GroupCode::NO: return "NO";
    case GroupCode::MO: return "MO";
  }
  return "??";
}

inline std::optional<GroupCode> parse_group_code(std::string_view s) {
  for (GroupCode g : kAllGroups)
    if (to_string(g) == s) return g;
  return std::nullopt;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// LandmarkTopology

/// The L landmarks of the face template and their partition into the six
/// facial-feature groups. Validated on construction.
class LandmarkTopology {
 public:
  struct Group {
    GroupCode code;
    std::vector<int> landmarks;
  };

  LandmarkTopology(int landmark_count, std::vector<Group> groups)
      : landmark_count_(landmark_count), groups_(std::move(groups)) {
    if (landmark_count_ <= 0) throw InputError("topology: landmark count must be positive");
    if (groups_.size() != kAllGroups.size())
      throw InputError("topology: expected exactly 6 groups, got " + std::to_string(groups_.size()));
    landmark_group_.assign(static_cast<std::size_t>(landmark_count_), -1);
    std::array<bool, 6> seen{};
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const auto& g = groups_[gi];
      auto code = static_cast<std::size_t>(g.code);
      if (seen[code]) throw InputError("topology: duplicate group " + std::string(to_string(g.code)));
      seen[code] = true;
      if (g.landmarks.empty())
        throw InputError("topology: group " + std::string(to_string(g.code)) + " has no landmarks");
      for (int j : g.landmarks) {
        if (j < 0 || j >= landmark_count_)
          throw InputError("topology: landmark index " + std::to_string(j) + " out of range");
        if (landmark_group_[static_cast<std::size_t>(j)] != -1)
          throw InputError("topology: landmark " + std::to_string(j) + " assigned to two groups");
        landmark_group_[static_cast<std::size_t>(j)] = static_cast<int>(code);
      }
    }
    for (int j = 0; j < landmark_count_; ++j)
      if (landmark_group_[static_cast<std::size_t>(j)] == -1)
        throw InputError("topology: landmark " + std::to_string(j) + " belongs to no group");
  }

  /// iBUG-51 (the 68-point template without the jaw line). Indices follow the
  /// 51-point ordering: brows 0-9, nose 10-18, eyes 19-30, mouth 31-50.
  /// Left/right refer to the subject's own left and right.
  static LandmarkTopology ibug51() {
    auto range = [](int first, int count) {
      std::vector<int> v(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = first + i;
      return v;
    };
    return LandmarkTopology(51, {{GroupCode::LB, range(5, 5)},
                                 {GroupCode::RB, range(0, 5)},
                                 {GroupCode::LE, range(25, 6)},
                                 {GroupCode::RE, range(19, 6)},
                                 {GroupCode::NO, range(10, 9)},
                                 {GroupCode::MO, range(31, 20)}});
  }

  int landmark_count() const noexcept { return landmark_count_; }
  Index dimension() const noexcept { return 3 * static_cast<Index>(landmark_count_); }
  const std::vector<Group>& groups() const noexcept { return groups_; }

  const Group& group(GroupCode code) const {
    for (const auto& g : groups_)
      if (g.code == code) return g;
    throw InputError("topology: missing group");  // unreachable after validation
  }

  GroupCode group_of_landmark(int j) const {
    return static_cast<GroupCode>(landmark_group_.at(static_cast<std::size_t>(j)));
  }

  /// Row indices (in the 3L layout) owned by a group, ascending.
  std::vector<Index> rows(GroupCode code) const {
    std::vector<int> lm = group(code).landmarks;
    std::sort(lm.begin(), lm.end());
    std::vector<Index> out;
    out.reserve(lm.size() * 3);
    for (int j : lm)
      for (int c = 0; c < 3; ++c) out.push_back(3 * static_cast<Index>(j) + c);
    return out;
  }

  /// True when row r of a 3L vector lies on a landmark of group `code`.
  bool row_in_group(Index r, GroupCode code) const {
    return group_of_landmark(static_cast<int>(r / 3)) == code;
  }

  friend bool operator==(const LandmarkTopology& a, const LandmarkTopology& b) {
    if (a.landmark_count_ != b.landmark_count_ || a.groups_.size() != b.groups_.size()) return false;
    for (std::size_t i = 0; i < a.groups_.size(); ++i)
      if (a.groups_[i].code != b.groups_[i].code || a.groups_[i].landmarks != b.groups_[i].landmarks)
        return false;
    return true;
  }

 private:
  int landmark_count_;
  std::vector<Group> groups_;
  std::vector<int> landmark_group_;
};

// ---------------------------------------------------------------------------
// ExpressionModel

/// Landmark restriction of a 3DMM expression model: mean landmark positions
/// (L x 3) and the expression basis E (3L x M).
class ExpressionModel {
 public:
  ExpressionModel(Matrix mean_landmarks, Matrix basis)
      : mean_landmarks_(std::move(mean_landmarks)), basis_(std::move(basis)) {
    if (mean_landmarks_.cols() != 3) throw InputError("expression model: mean landmarks must be L x 3");
    if (basis_.rows() != 3 * mean_landmarks_.rows())
      throw InputError("expression model: basis has " + std::to_string(basis_.rows()) +
                       " rows, expected 3L = " + std::to_string(3 * mean_landmarks_.rows()));
    if (basis_.cols() < 1) throw InputError("expression model: basis needs at least one component");
    if (!basis_.allFinite() || !mean_landmarks_.allFinite())
      throw InputError("expression model: non-finite entries");
  }

  const Matrix& mean_landmarks() const noexcept { return mean_landmarks_; }
  const Matrix& basis() const noexcept { return basis_; }
  Index landmark_count() const noexcept { return mean_landmarks_.rows(); }
  Index component_count() const noexcept { return basis_.cols(); }

 private:
  Matrix mean_landmarks_;
  Matrix basis_;
};

// ---------------------------------------------------------------------------
// DeformationSample

/// Per-landmark displacement from the neutral face, 3j+c layout.
class DeformationSample {
 public:
  explicit DeformationSample(Vector values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw InputError("deformation sample: non-finite entries");
  }
  static DeformationSample zeros(Index dim) { return DeformationSample(Vector::Zero(dim)); }

  const Vector& values() const noexcept { return values_; }
  Index size() const noexcept { return values_.size(); }

 private:
  Vector values_;
};

// ---------------------------------------------------------------------------
// BasisDictionary

/// The learned coding system W (3L x K). Each atom (column) is tied to one
/// facial-feature group. Invariants (locality, norm bound, names) are not
/// enforced here; use validate_dictionary().
class BasisDictionary {
 public:
  BasisDictionary(Matrix atoms, std::vector<GroupCode> atom_groups, std::vector<std::string> atom_names,
                  double lambda_used, LandmarkTopology topology,
                  std::optional<std::vector<int>> activation_rank = std::nullopt)
      : atoms_(std::move(atoms)),
        atom_groups_(std::move(atom_groups)),
        atom_names_(std::move(atom_names)),
        activation_rank_(std::move(activation_rank)),
        lambda_used_(lambda_used),
        topology_(std::move(topology)) {
    if (atoms_.rows() != topology_.dimension())
      throw InputError("dictionary: atoms have " + std::to_string(atoms_.rows()) + " rows, topology needs " +
                       std::to_string(topology_.dimension()));
    const auto k = static_cast<std::size_t>(atoms_.cols());
    if (atom_groups_.size() != k) throw InputError("dictionary: atom_groups length differs from K");
    if (atom_names_.size() != k) throw InputError("dictionary: atom_names length differs from K");
    if (!(lambda_used_ > 0.0)) throw InputError("dictionary: lambda must be positive");
    if (activation_rank_) {
      std::vector<int> sorted = *activation_rank_;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i)
        if (sorted.size() != k || sorted[i] != static_cast<int>(i))
          throw InputError("dictionary: activation_rank is not a permutation of [0, K)");
    }
  }

  const Matrix& atoms() const noexcept { return atoms_; }
  Index atom_count() const noexcept { return atoms_.cols(); }
  Index dimension() const noexcept { return atoms_.rows(); }
  const std::vector<GroupCode>& atom_groups() const noexcept { return atom_groups_; }
  const std::vector<std::string>& atom_names() const noexcept { return atom_names_; }
  const std::optional<std::vector<int>>& activation_rank() const noexcept { return activation_rank_; }
  double lambda_used() const noexcept { return lambda_used_; }
  const LandmarkTopology& topology() const noexcept { return topology_; }

  BasisDictionary with_names(std::vector<std::string> names) const {
    return {atoms_, atom_groups_, std::move(names), lambda_used_, topology_, activation_rank_};
  }
  BasisDictionary with_rank(std::vector<int> rank) const {
    return {atoms_, atom_groups_, atom_names_, lambda_used_, topology_, std::move(rank)};
  }
  BasisDictionary with_atoms(Matrix atoms) const {
    return {std::move(atoms), atom_groups_, atom_names_, lambda_used_, topology_, activation_rank_};
  }

 private:
  Matrix atoms_;
  std::vector<GroupCode> atom_groups_;
  std::vector<std::string> atom_names_;
  std::optional<std::vector<int>> activation_rank_;
  double lambda_used_;
  LandmarkTopology topology_;
};

/// Names "<code>-<ordinal>" with a 1-based ordinal among atoms of the same
/// group, in storage order.
inline std::vector<std::string> names_for_groups(const std::vector<GroupCode>& groups) {
  std::array<int, 6> counter{};
  std::vector<std::string> names;
  names.reserve(groups.size());
  for (GroupCode g : groups) {
    int ordinal = ++counter[static_cast<std::size_t>(g)];
    names.push_back(std::string(to_string(g)) + "-" + std::to_string(ordinal));
  }
  return names;
}

// ---------------------------------------------------------------------------
// CoefficientSeries

/// Behavioral time series of one video: T frames of K BU activations plus
/// (pitch, yaw, roll) head rotation in radians.
class CoefficientSeries {
 public:
  CoefficientSeries(double frame_rate, Matrix bu_coefficients, Matrix head_rotation)
      : frame_rate_(frame_rate), bu_(std::move(bu_coefficients)), head_(std::move(head_rotation)) {
    if (!(frame_rate_ > 0.0) || !std::isfinite(frame_rate_))
      throw InputError("coefficient series: frame rate must be positive");
    if (head_.cols() != 3) throw InputError("coefficient series: head rotation must have 3 columns");
    if (bu_.rows() != head_.rows())
      throw InputError("coefficient series: BU and head-rotation row counts differ");
    if (bu_.rows() < 1) throw InputError("coefficient series: needs at least one frame");
    if (!bu_.allFinite() || !head_.allFinite()) throw InputError("coefficient series: non-finite entries");
  }

  double frame_rate() const noexcept { return frame_rate_; }
  const Matrix& bu_coefficients() const noexcept { return bu_; }
  const Matrix& head_rotation() const noexcept { return head_; }
  Index frame_count() const noexcept { return bu_.rows(); }
  Index bu_count() const noexcept { return bu_.cols(); }

  /// All Q = K + 3 channels as a T x Q matrix (BUs first, then pitch, yaw, roll).
  Matrix channels() const {
    Matrix out(bu_.rows(), bu_.cols() + 3);
    out << bu_, head_;
    return out;
  }

 private:
  double frame_rate_;
  Matrix bu_;
  Matrix head_;
};

// ---------------------------------------------------------------------------
// Operations

/// E * epsilon, the landmark-restricted expression deformation.
inline DeformationSample synthesize_deformation(const ExpressionModel& model, const Eigen::Ref<const Vector>& epsilon) {
  if (epsilon.size() != model.component_count())
    throw InputError("synthesize_deformation: epsilon has length " + std::to_string(epsilon.size()) +
                     ", model has M = " + std::to_string(model.component_count()));
  if (!epsilon.allFinite()) throw InputError("synthesize_deformation: non-finite coefficients");
  return DeformationSample(model.basis() * epsilon);
}

/// W * z. Atoms with z_k == 0 are skipped, so rows outside the groups of the
/// active atoms stay exactly 0.0.
inline DeformationSample synthesize_from_dictionary(const BasisDictionary& dict, const Eigen::Ref<const Vector>& z) {
  if (z.size() != dict.atom_count())
    throw InputError("synthesize_from_dictionary: z has length " + std::to_string(z.size()) +
                     ", dictionary has K = " + std::to_string(dict.atom_count()));
  if (!z.allFinite()) throw InputError("synthesize_from_dictionary: non-finite coefficients");
  Vector out = Vector::Zero(dict.dimension());
  for (Index k = 0; k < z.size(); ++k)
    if (z[k] != 0.0) out.noalias() += z[k] * dict.atoms().col(k);
  return DeformationSample(std::move(out));
}

struct ValidationIssue {
  enum class Kind { kLocality, kNorm, kName, kNonFinite };
  Kind kind;
  Index atom;
  Index row;  // offending row for locality issues, -1 otherwise
  std::string message;
};

using ValidationReport = std::vector<ValidationIssue>;

inline constexpr double kAtomNormBound = 1.0 + 1e-9;

/// Lists every violated dictionary invariant. Empty iff the dictionary is valid.
inline ValidationReport validate_dictionary(const BasisDictionary& dict) {
  ValidationReport report;
  const auto& topo = dict.topology();
  const auto expected = names_for_groups(dict.atom_groups());
  for (Index k = 0; k < dict.atom_count(); ++k) {
    const GroupCode g = dict.atom_groups()[static_cast<std::size_t>(k)];
    auto col = dict.atoms().col(k);
    if (!col.allFinite()) {
      report.push_back({ValidationIssue::Kind::kNonFinite, k, -1, "atom " + std::to_string(k) + " has non-finite entries"});
      continue;
    }
    for (Index r = 0; r < col.size(); ++r) {
      if (!topo.row_in_group(r, g) && col[r] != 0.0) {
        std::ostringstream msg;
        msg << "atom " << k << " (" << to_string(g) << ") has nonzero entry " << col[r] << " at row " << r
            << " outside its group";
        report.push_back({ValidationIssue::Kind::kLocality, k, r, msg.str()});
      }
    }
    const double norm = col.norm();
    if (norm > kAtomNormBound) {
      std::ostringstream msg;
      msg << "atom " << k << " has l2 norm " << norm << " > 1";
      report.push_back({ValidationIssue::Kind::kNorm, k, -1, msg.str()});
    }
    const auto& name = dict.atom_names()[static_cast<std::size_t>(k)];
    if (name != expected[static_cast<std::size_t>(k)]) {
      report.push_back({ValidationIssue::Kind::kName, k, -1,
                        "atom " + std::to_string(k) + " is named '" + name + "', expected '" +
                            expected[static_cast<std::size_t>(k)] + "'"});
    }
  }
  return report;
}

}  // namespace facial_basis
