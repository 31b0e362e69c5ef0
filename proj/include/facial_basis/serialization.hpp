#pragma once

// File formats of the toolkit. JSON documents carry a "format_version" field;
// CSV files carry it in their '#' preamble (see csv.hpp). Loaders reject
// versions they do not know.
//
// Dictionary = JSON metadata + matrix payload. The payload is either
//   binary: 8-byte magic "FBDICT01", uint64 rows, uint64 cols (little endian),
//           then rows*cols little-endian IEEE-754 doubles in column-major order;
//   csv:    one matrix row per line, shortest round-trip decimals.

#include <array>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "facial_basis/behavior_features.hpp"
#include "facial_basis/classifier.hpp"
#include "facial_basis/csv.hpp"
#include "facial_basis/dict_learn.hpp"
#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/sparse_coder.hpp"

namespace facial_basis {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace formats {
inline constexpr std::string_view kTopology = "facial-basis/topology/1";
inline constexpr std::string_view kExpressionModel = "facial-basis/expression-model/1";
inline constexpr std::string_view kDictionary = "facial-basis/dictionary/1";
inline constexpr std::string_view kCorpus = "facial-basis/corpus/1";
inline constexpr std::string_view kFrames = "facial-basis/frames/1";
inline constexpr std::string_view kCoefficients = "facial-basis/coefficients/1";
inline constexpr std::string_view kTrainingLog = "facial-basis/training-log/1";
inline constexpr std::string_view kFeatures = "facial-basis/features/1";
inline constexpr std::string_view kFeatureMap = "facial-basis/feature-map/1";
inline constexpr std::string_view kLabels = "facial-basis/labels/1";
inline constexpr std::string_view kReport = "facial-basis/evaluation-report/1";
inline constexpr std::string_view kWeightSummary = "facial-basis/weight-summary/1";
inline constexpr std::string_view kRankManifest = "facial-basis/rank-manifest/1";
inline constexpr std::string_view kCodes = "facial-basis/codes/1";
inline constexpr std::string_view kConfig = "facial-basis/config/1";
}  // namespace formats

/// FNV-1a 64 of the canonical (sorted-key) JSON dump, as 16 hex digits.
inline std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, std::string("byte ") + std::to_string(e.byte) + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

inline void expect_json_version(const json& doc, std::string_view expected, const std::string& source) {
  if (!doc.is_object() || !doc.contains("format_version"))
    throw ParseError(source, 0, "missing format_version, expected '" + std::string(expected) + "'");
  const auto v = doc.at("format_version").get<std::string>();
  if (v != expected)
    throw ParseError(source, 0, "unsupported format version '" + v + "', expected '" + std::string(expected) + "'");
}

template <class Fn>
auto json_field(const std::string& source, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
}

// ---------------------------------------------------------------------------
// Configuration blocks

inline json allocation_to_json(const GroupAllocation& a) {
  json j = json::object();
  for (GroupCode g : kAllGroups) j[std::string(to_string(g))] = a[static_cast<std::size_t>(g)];
  return j;
}

inline GroupAllocation allocation_from_json(const json& j) {
  GroupAllocation a{};
  for (const auto& [key, value] : j.items()) {
    auto g = parse_group_code(key);
    if (!g) throw ConfigError("allocation: unknown group code '" + key + "'");
    a[static_cast<std::size_t>(*g)] = value.get<int>();
  }
  return a;
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known, std::string_view block) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw ConfigError(std::string(block) + ": unknown key '" + key + "'");
  }
}

inline json to_json(const LearnConfig& c) {
  return {{"atom_count", c.atom_count},
          {"lambda", c.lambda},
          {"group_allocation", c.group_allocation ? allocation_to_json(*c.group_allocation) : json(nullptr)},
          {"outer_iterations", c.outer_iterations},
          {"seed", c.seed},
          {"init", std::string(to_string(c.init))},
          {"convergence_tol", c.convergence_tol},
          {"coding_max_iterations", c.coding_max_iterations},
          {"coding_tolerance", c.coding_tolerance}};
}

inline InitMethod parse_init(const std::string& s) {
  if (s == "masked_gaussian") return InitMethod::kMaskedGaussian;
  if (s == "masked_data_samples") return InitMethod::kMaskedDataSamples;
  throw ConfigError("learn: unknown init '" + s + "'");
}

inline LearnConfig learn_config_from_json(const json& j) {
  reject_unknown_keys(j, {"atom_count", "lambda", "group_allocation", "outer_iterations", "seed", "init",
                          "convergence_tol", "coding_max_iterations", "coding_tolerance"},
                      "learn");
  LearnConfig c;
  read_if(j, "atom_count", c.atom_count);
  read_if(j, "lambda", c.lambda);
  if (j.contains("group_allocation") && !j.at("group_allocation").is_null())
    c.group_allocation = allocation_from_json(j.at("group_allocation"));
  read_if(j, "outer_iterations", c.outer_iterations);
  read_if(j, "seed", c.seed);
  if (j.contains("init")) c.init = parse_init(j.at("init").get<std::string>());
  read_if(j, "convergence_tol", c.convergence_tol);
  read_if(j, "coding_max_iterations", c.coding_max_iterations);
  read_if(j, "coding_tolerance", c.coding_tolerance);
  return c;
}

inline json to_json(const CodingConfig& c) {
  return {{"lambda", c.lambda}, {"max_iterations", c.max_iterations}, {"tolerance", c.tolerance},
          {"interior_point_fallback", c.interior_point_fallback}};
}

inline CodingConfig coding_config_from_json(const json& j) {
  reject_unknown_keys(j, {"lambda", "max_iterations", "tolerance", "interior_point_fallback"}, "coding");
  CodingConfig c;
  read_if(j, "lambda", c.lambda);
  read_if(j, "max_iterations", c.max_iterations);
  read_if(j, "tolerance", c.tolerance);
  read_if(j, "interior_point_fallback", c.interior_point_fallback);
  return c;
}

inline json to_json(const WccConfig& c) {
  return {{"window_seconds", c.window_seconds},
          {"window_stride_seconds", c.window_stride_seconds ? json(*c.window_stride_seconds) : json(nullptr)},
          {"lag_range_seconds", c.lag_range_seconds},
          {"lag_step_frames", c.lag_step_frames},
          {"selected_channels", c.selected_channels ? json(*c.selected_channels) : json(nullptr)}};
}

inline WccConfig wcc_config_from_json(const json& j) {
  reject_unknown_keys(j, {"window_seconds", "window_stride_seconds", "lag_range_seconds", "lag_step_frames",
                          "selected_channels"},
                      "wcc");
  WccConfig c;
  read_if(j, "window_seconds", c.window_seconds);
  if (j.contains("window_stride_seconds") && !j.at("window_stride_seconds").is_null())
    c.window_stride_seconds = j.at("window_stride_seconds").get<double>();
  read_if(j, "lag_range_seconds", c.lag_range_seconds);
  read_if(j, "lag_step_frames", c.lag_step_frames);
  if (j.contains("selected_channels") && !j.at("selected_channels").is_null())
    c.selected_channels = j.at("selected_channels").get<std::vector<int>>();
  return c;
}

inline json to_json(const CvConfig& c) {
  return {{"c_grid", c.c_grid},
          {"inner_folds", c.inner_folds},
          {"seed", c.seed},
          {"standardize", c.standardize},
          {"svm_tolerance", c.svm.tolerance},
          {"svm_max_iterations", c.svm.max_iterations},
          {"class_balanced", c.svm.balanced}};
}

inline CvConfig cv_config_from_json(const json& j) {
  reject_unknown_keys(j, {"c_grid", "inner_folds", "seed", "standardize", "svm_tolerance", "svm_max_iterations",
                          "class_balanced"},
                      "cv");
  CvConfig c;
  read_if(j, "c_grid", c.c_grid);
  read_if(j, "inner_folds", c.inner_folds);
  read_if(j, "seed", c.seed);
  read_if(j, "standardize", c.standardize);
  read_if(j, "svm_tolerance", c.svm.tolerance);
  read_if(j, "svm_max_iterations", c.svm.max_iterations);
  read_if(j, "class_balanced", c.svm.balanced);
  return c;
}

/// Everything a pipeline run can be configured with. Command-line flags
/// override the values loaded from a config file.
struct PipelineConfig {
  std::optional<std::string> topology_path;
  std::optional<std::string> model_path;
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  unsigned threads = 1;
  LearnConfig learn;
  CodingConfig coding;
  WccConfig wcc;
  CvConfig cv;
  int subsample_count = 100;
  double subsample_fraction = 0.9;
};

inline json to_json(const PipelineConfig& c) {
  return {{"format_version", formats::kConfig},
          {"topology", c.topology_path ? json(*c.topology_path) : json(nullptr)},
          {"model", c.model_path ? json(*c.model_path) : json(nullptr)},
          {"output", c.output_dir},
          {"seed", c.seed},
          {"threads", c.threads},
          {"learn", to_json(c.learn)},
          {"coding", to_json(c.coding)},
          {"wcc", to_json(c.wcc)},
          {"cv", to_json(c.cv)},
          {"subsample_count", c.subsample_count},
          {"subsample_fraction", c.subsample_fraction}};
}

inline PipelineConfig pipeline_config_from_json(const json& j, const std::string& source = "config") {
  expect_json_version(j, formats::kConfig, source);
  return json_field(source, [&] {
    reject_unknown_keys(j, {"format_version", "topology", "model", "output", "seed", "threads", "learn", "coding",
                            "wcc", "cv", "subsample_count", "subsample_fraction"},
                        "config");
    PipelineConfig c;
    if (j.contains("topology") && !j.at("topology").is_null()) c.topology_path = j.at("topology").get<std::string>();
    if (j.contains("model") && !j.at("model").is_null()) c.model_path = j.at("model").get<std::string>();
    read_if(j, "output", c.output_dir);
    read_if(j, "seed", c.seed);
    read_if(j, "threads", c.threads);
    if (j.contains("learn")) c.learn = learn_config_from_json(j.at("learn"));
    if (j.contains("coding")) c.coding = coding_config_from_json(j.at("coding"));
    if (j.contains("wcc")) c.wcc = wcc_config_from_json(j.at("wcc"));
    if (j.contains("cv")) c.cv = cv_config_from_json(j.at("cv"));
    read_if(j, "subsample_count", c.subsample_count);
    read_if(j, "subsample_fraction", c.subsample_fraction);
    return c;
  });
}

// ---------------------------------------------------------------------------
// Topology and expression model

inline json to_json(const LandmarkTopology& t) {
  json groups = json::array();
  for (const auto& g : t.groups()) groups.push_back({{"code", std::string(to_string(g.code))}, {"landmarks", g.landmarks}});
  return {{"format_version", formats::kTopology}, {"landmark_count", t.landmark_count()}, {"groups", groups}};
}

inline LandmarkTopology topology_from_json(const json& j, const std::string& source = "topology") {
  expect_json_version(j, formats::kTopology, source);
  return json_field(source, [&] {
    std::vector<LandmarkTopology::Group> groups;
    for (const auto& g : j.at("groups")) {
      const auto code = g.at("code").get<std::string>();
      auto parsed = parse_group_code(code);
      if (!parsed) throw ParseError(source, 0, "unknown group code '" + code + "'");
      groups.push_back({*parsed, g.at("landmarks").get<std::vector<int>>()});
    }
    return LandmarkTopology(j.at("landmark_count").get<int>(), std::move(groups));
  });
}

inline LandmarkTopology load_topology(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("topology file not found: '" + path.string() + "'");
  return topology_from_json(read_json(path), path.string());
}

inline json to_json(const ExpressionModel& m) {
  json mean = json::array(), basis = json::array();
  for (Index j = 0; j < m.landmark_count(); ++j)
    mean.push_back({m.mean_landmarks()(j, 0), m.mean_landmarks()(j, 1), m.mean_landmarks()(j, 2)});
  for (Index r = 0; r < m.basis().rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.basis().cols()));
    for (Index c = 0; c < m.basis().cols(); ++c) row[static_cast<std::size_t>(c)] = m.basis()(r, c);
    basis.push_back(row);
  }
  return {{"format_version", formats::kExpressionModel},
          {"landmark_count", m.landmark_count()},
          {"component_count", m.component_count()},
          {"mean_landmarks", mean},
          {"basis", basis}};
}

inline ExpressionModel load_expression_model(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("expression model file not found: '" + path.string() + "'");
  const json j = read_json(path);
  expect_json_version(j, formats::kExpressionModel, path.string());
  return json_field(path.string(), [&] {
    const auto mean = j.at("mean_landmarks").get<std::vector<std::vector<double>>>();
    const auto basis = j.at("basis").get<std::vector<std::vector<double>>>();
    Matrix mean_m(static_cast<Index>(mean.size()), 3);
    for (std::size_t r = 0; r < mean.size(); ++r) {
      if (mean[r].size() != 3) throw ParseError(path.string(), 0, "mean_landmarks rows must have 3 entries");
      for (int c = 0; c < 3; ++c) mean_m(static_cast<Index>(r), c) = mean[r][static_cast<std::size_t>(c)];
    }
    const std::size_t cols = basis.empty() ? 0 : basis.front().size();
    Matrix basis_m(static_cast<Index>(basis.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < basis.size(); ++r) {
      if (basis[r].size() != cols) throw ParseError(path.string(), 0, "basis rows have differing lengths");
      for (std::size_t c = 0; c < cols; ++c) basis_m(static_cast<Index>(r), static_cast<Index>(c)) = basis[r][c];
    }
    return ExpressionModel(std::move(mean_m), std::move(basis_m));
  });
}

// ---------------------------------------------------------------------------
// Dictionary

enum class PayloadEncoding { kBinary, kCsv };

namespace detail {

inline constexpr std::array<char, 8> kDictMagic = {'F', 'B', 'D', 'I', 'C', 'T', '0', '1'};

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(b)])) << (8 * b);
  return v;
}

}  // namespace detail

inline std::string encode_matrix_binary(const Matrix& m) {
  std::string out(detail::kDictMagic.begin(), detail::kDictMagic.end());
  detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
  detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Index c = 0; c < m.cols(); ++c)
    for (Index r = 0; r < m.rows(); ++r) detail::put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
  return out;
}

inline Matrix decode_matrix_binary(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 24 || !std::equal(detail::kDictMagic.begin(), detail::kDictMagic.end(), bytes.begin()))
    throw ParseError(source, 0, "not a dictionary payload (bad magic)");
  const auto rows = detail::get_u64(bytes, 8), cols = detail::get_u64(bytes, 16);
  if (rows > (1u << 30) || cols > (1u << 30) || bytes.size() != 24 + 8 * rows * cols)
    throw ParseError(source, 0, "payload size does not match its " + std::to_string(rows) + " x " +
                                    std::to_string(cols) + " header (byte length " + std::to_string(bytes.size()) + ")");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::size_t pos = 24;
  for (Index c = 0; c < m.cols(); ++c)
    for (Index r = 0; r < m.rows(); ++r, pos += 8) m(r, c) = std::bit_cast<double>(detail::get_u64(bytes, pos));
  return m;
}

struct DictionaryFile {
  BasisDictionary dictionary;
  json metadata;
};

/// Writes `<stem>.json` plus `<stem>.bin` or `<stem>.csv`. `extra` entries are
/// merged into the metadata (config, config_hash, training summary, ...).
inline void save_dictionary(const fs::path& json_path, const BasisDictionary& dict, const json& extra,
                            PayloadEncoding encoding = PayloadEncoding::kBinary) {
  fs::path payload = json_path;
  payload.replace_extension(encoding == PayloadEncoding::kBinary ? ".bin" : ".csv");
  json groups = json::array();
  for (GroupCode g : dict.atom_groups()) groups.push_back(std::string(to_string(g)));
  GroupAllocation alloc{};
  for (GroupCode g : dict.atom_groups()) ++alloc[static_cast<std::size_t>(g)];
  json meta = extra.is_object() ? extra : json::object();
  meta["format_version"] = formats::kDictionary;
  meta["atom_count"] = dict.atom_count();
  meta["dimension"] = dict.dimension();
  meta["lambda"] = dict.lambda_used();
  meta["allocation"] = allocation_to_json(alloc);
  meta["atom_names"] = dict.atom_names();
  meta["atom_groups"] = groups;
  meta["activation_rank"] = dict.activation_rank() ? json(*dict.activation_rank()) : json(nullptr);
  meta["topology"] = to_json(dict.topology());
  meta["payload"] = {{"file", payload.filename().string()},
                     {"encoding", encoding == PayloadEncoding::kBinary ? "f64le" : "csv"},
                     {"rows", dict.dimension()},
                     {"cols", dict.atom_count()}};
  if (encoding == PayloadEncoding::kBinary) {
    write_text(payload, encode_matrix_binary(dict.atoms()));
  } else {
    CsvWriter w(formats::kDictionary, {{"rows", std::to_string(dict.dimension())}, {"cols", std::to_string(dict.atom_count())}});
    w.header(dict.atom_names());
    for (Index r = 0; r < dict.dimension(); ++r) w.numeric_row(dict.atoms().row(r));
    write_text(payload, w.str());
  }
  write_json(json_path, meta);
}

inline DictionaryFile load_dictionary(const fs::path& json_path) {
  if (!fs::exists(json_path)) throw InputError("dictionary file not found: '" + json_path.string() + "'");
  const json meta = read_json(json_path);
  const std::string src = json_path.string();
  expect_json_version(meta, formats::kDictionary, src);
  return json_field(src, [&] {
    const auto& payload = meta.at("payload");
    const fs::path payload_path = json_path.parent_path() / payload.at("file").get<std::string>();
    const auto encoding = payload.at("encoding").get<std::string>();
    Matrix atoms;
    if (encoding == "f64le") {
      atoms = decode_matrix_binary(read_text(payload_path), payload_path.string());
    } else if (encoding == "csv") {
      const auto table = read_csv(payload_path);
      table.expect_version(formats::kDictionary, true);
      std::vector<Index> cols(table.header.size());
      for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = static_cast<Index>(i);
      atoms = table.numbers(cols);
    } else {
      throw ParseError(src, 0, "unknown payload encoding '" + encoding + "'");
    }
    if (atoms.rows() != payload.at("rows").get<Index>() || atoms.cols() != payload.at("cols").get<Index>())
      throw ParseError(src, 0, "payload dimensions disagree with metadata");
    std::vector<GroupCode> groups;
    for (const auto& g : meta.at("atom_groups")) {
      auto parsed = parse_group_code(g.get<std::string>());
      if (!parsed) throw ParseError(src, 0, "unknown group code '" + g.get<std::string>() + "'");
      groups.push_back(*parsed);
    }
    std::optional<std::vector<int>> rank;
    if (!meta.at("activation_rank").is_null()) rank = meta.at("activation_rank").get<std::vector<int>>();
    BasisDictionary dict(std::move(atoms), std::move(groups), meta.at("atom_names").get<std::vector<std::string>>(),
                         meta.at("lambda").get<double>(), topology_from_json(meta.at("topology"), src), std::move(rank));
    return DictionaryFile{std::move(dict), meta};
  });
}

// ---------------------------------------------------------------------------
// Corpora and per-video frame files

/// Column names of a 3L deformation: x0,y0,z0,x1,...
inline std::vector<std::string> deformation_columns(Index landmarks) {
  std::vector<std::string> out;
  for (Index j = 0; j < landmarks; ++j)
    for (const char* axis : {"x", "y", "z"}) out.push_back(axis + std::to_string(j));
  return out;
}

inline std::vector<std::string> epsilon_columns(Index m) {
  std::vector<std::string> out;
  for (Index i = 0; i < m; ++i) out.push_back("eps" + std::to_string(i));
  return out;
}

/// Reads rows of either deformations (x0,y0,z0,...) or expression
/// coefficients (eps0,...). Coefficients are mapped through the model.
inline Matrix read_deformation_rows(const CsvTable& table, Index landmark_count, const ExpressionModel* model) {
  std::vector<Index> cols;
  if (table.column("x0") >= 0) {
    for (const auto& name : deformation_columns(landmark_count)) {
      const Index c = table.column(name);
      if (c < 0) throw ParseError(table.source, 1, "missing deformation column '" + name + "'");
      cols.push_back(c);
    }
    return table.numbers(cols);
  }
  if (table.column("eps0") >= 0) {
    if (!model) throw InputError(table.source + ": expression coefficients require an expression model (--model)");
    if (model->landmark_count() != landmark_count)
      throw InputError("expression model has " + std::to_string(model->landmark_count()) +
                       " landmarks, the topology has " + std::to_string(landmark_count));
    for (const auto& name : epsilon_columns(model->component_count())) {
      const Index c = table.column(name);
      if (c < 0) throw ParseError(table.source, 1, "missing coefficient column '" + name + "'");
      cols.push_back(c);
    }
    const Matrix eps = table.numbers(cols);
    Matrix out(eps.rows(), model->basis().rows());
    for (Index r = 0; r < eps.rows(); ++r)
      out.row(r) = synthesize_deformation(*model, eps.row(r).transpose()).values().transpose();
    return out;
  }
  throw ParseError(table.source, 1, "expected deformation columns (x0,y0,z0,...) or coefficient columns (eps0,...)");
}

inline Matrix load_corpus(const fs::path& path, Index landmark_count, const ExpressionModel* model) {
  const auto table = read_csv(path);
  table.expect_version(formats::kCorpus, false);
  return read_deformation_rows(table, landmark_count, model);
}

inline std::string corpus_csv(const Matrix& samples, Index landmark_count,
                              const std::vector<std::pair<std::string, std::string>>& meta = {}) {
  CsvWriter w(formats::kCorpus, meta);
  w.header(deformation_columns(landmark_count));
  for (Index r = 0; r < samples.rows(); ++r) w.numeric_row(samples.row(r));
  return w.str();
}

struct VideoFrames {
  std::vector<DeformationSample> frames;
  Matrix pose;  // T x 3, zeros when absent
  double frame_rate = 0.0;
  bool has_pose = false;
};

inline VideoFrames load_video_frames(const fs::path& path, Index landmark_count, const ExpressionModel* model,
                                     bool require_pose, double default_frame_rate) {
  const auto table = read_csv(path);
  if (table.format_version != formats::kCorpus) table.expect_version(formats::kFrames, false);
  VideoFrames v;
  const Matrix d = read_deformation_rows(table, landmark_count, model);
  for (Index r = 0; r < d.rows(); ++r) v.frames.emplace_back(d.row(r).transpose());
  const Index p = table.column("pitch"), y = table.column("yaw"), ro = table.column("roll");
  v.has_pose = p >= 0 && y >= 0 && ro >= 0;
  if (v.has_pose) {
    v.pose = table.numbers({p, y, ro});
  } else if (require_pose) {
    throw ParseError(table.source, 1, "missing pose columns pitch,yaw,roll (use --no-pose to encode without them)");
  } else {
    v.pose = Matrix::Zero(d.rows(), 3);
  }
  v.frame_rate = default_frame_rate;
  if (auto it = table.meta.find("frame_rate"); it != table.meta.end()) {
    auto fr = parse_double(it->second);
    if (!fr || !(*fr > 0.0)) throw ParseError(table.source, 1, "invalid frame_rate '" + it->second + "'");
    v.frame_rate = *fr;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Coefficient series

inline std::string coefficients_csv(const CoefficientSeries& s, const std::vector<std::string>& bu_names,
                                    const std::string& hash) {
  CsvWriter w(formats::kCoefficients, {{"frame_rate", format_double(s.frame_rate())}, {"config", hash}});
  std::vector<std::string> header = bu_names;
  header.insert(header.end(), {"pitch", "yaw", "roll"});
  w.header(header);
  const Matrix all = s.channels();
  for (Index t = 0; t < all.rows(); ++t) w.numeric_row(all.row(t));
  return w.str();
}

struct NamedSeries {
  CoefficientSeries series;
  std::vector<std::string> bu_names;
};

inline NamedSeries load_coefficients(const fs::path& path) {
  const auto table = read_csv(path);
  table.expect_version(formats::kCoefficients, false);
  const Index p = table.column("pitch"), y = table.column("yaw"), r = table.column("roll");
  if (p < 0 || y < 0 || r < 0) throw ParseError(table.source, 1, "missing pose columns pitch,yaw,roll");
  std::vector<Index> bu_cols;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto idx = static_cast<Index>(c);
    if (idx == p || idx == y || idx == r) continue;
    bu_cols.push_back(idx);
    names.push_back(table.header[c]);
  }
  double fr = 0.0;
  if (auto it = table.meta.find("frame_rate"); it != table.meta.end() && parse_double(it->second)) fr = *parse_double(it->second);
  if (!(fr > 0.0)) throw ParseError(table.source, 1, "missing or invalid frame_rate in preamble");
  if (table.rows.empty()) throw ParseError(table.source, 2, "no frames");
  return {CoefficientSeries(fr, table.numbers(bu_cols), table.numbers({p, y, r})), std::move(names)};
}

inline std::string training_log_csv(const TrainingLog& log, const std::string& hash) {
  CsvWriter w(formats::kTrainingLog, {{"config", hash}, {"stop_reason", log.stop_reason},
                                      {"reinitialized_atoms", std::to_string(log.reinitialized_atoms)}});
  w.header({"iteration", "objective", "mean_sparsity", "max_atom_norm"});
  for (const auto& r : log.records)
    w.row({std::to_string(r.iteration), format_double(r.objective), format_double(r.mean_sparsity),
           format_double(r.max_atom_norm)});
  return w.str();
}

// ---------------------------------------------------------------------------
// Features, labels, reports

struct FeatureTable {
  std::vector<std::string> video_ids;
  std::vector<Index> window_counts;
  Matrix values;  // V x Q^2
  std::vector<std::string> column_names;
};

inline std::string pair_name(const std::string& a, const std::string& b) { return a + "|" + b; }

inline std::string features_csv(const FeatureTable& f, const std::vector<std::pair<std::string, std::string>>& meta) {
  CsvWriter w(formats::kFeatures, meta);
  std::vector<std::string> header{"video_id", "window_count"};
  header.insert(header.end(), f.column_names.begin(), f.column_names.end());
  w.header(header);
  for (std::size_t v = 0; v < f.video_ids.size(); ++v)
    w.numeric_row(f.values.row(static_cast<Index>(v)), {f.video_ids[v], std::to_string(f.window_counts[v])});
  return w.str();
}

inline FeatureTable load_features(const fs::path& path) {
  const auto table = read_csv(path);
  table.expect_version(formats::kFeatures, false);
  if (table.header.size() < 3 || table.header[0] != "video_id" || table.header[1] != "window_count")
    throw ParseError(table.source, 1, "expected header video_id,window_count,<features...>");
  FeatureTable f;
  std::vector<Index> cols;
  for (std::size_t c = 2; c < table.header.size(); ++c) {
    cols.push_back(static_cast<Index>(c));
    f.column_names.push_back(table.header[c]);
  }
  f.values = table.numbers(cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    f.video_ids.push_back(table.rows[r][0]);
    f.window_counts.push_back(static_cast<Index>(table.number(r, 1)));
  }
  return f;
}

inline std::string feature_map_csv(const std::vector<std::string>& channel_names) {
  const auto q = static_cast<Index>(channel_names.size());
  CsvWriter w(formats::kFeatureMap, {{"channels", std::to_string(q)}});
  w.header({"index", "channel_i", "channel_j", "name_i", "name_j"});
  for (const auto& [i, j] : channel_pair_index(q))
    w.row({std::to_string(i * q + j), std::to_string(i), std::to_string(j), channel_names[static_cast<std::size_t>(i)],
           channel_names[static_cast<std::size_t>(j)]});
  return w.str();
}

/// Channel names recovered from a feature map (Q^2 rows).
inline std::vector<std::string> load_feature_map(const fs::path& path) {
  const auto table = read_csv(path);
  table.expect_version(formats::kFeatureMap, true);
  const auto q = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(table.rows.size()))));
  if (q * q != table.rows.size()) throw ParseError(table.source, 1, "feature map row count is not a perfect square");
  std::vector<std::string> names(q);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto i = static_cast<std::size_t>(table.number(r, 1));
    const auto j = static_cast<std::size_t>(table.number(r, 2));
    if (i >= q || j >= q || static_cast<std::size_t>(table.number(r, 0)) != i * q + j)
      throw ParseError(table.source, table.row_lines[r], "feature index does not match i*Q+j");
    names[i] = table.rows[r][3];
  }
  return names;
}

inline std::vector<std::pair<std::string, std::string>> load_labels(const fs::path& path) {
  const auto table = read_csv(path);
  table.expect_version(formats::kLabels, false);
  const Index id = table.column("video_id"), label = table.column("label");
  if (id < 0 || label < 0) throw ParseError(table.source, 1, "expected columns video_id,label");
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& row : table.rows) out.emplace_back(row[static_cast<std::size_t>(id)], row[static_cast<std::size_t>(label)]);
  return out;
}

inline json to_json(const EvaluationReport& r, const LabeledDataset& data) {
  json folds = json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"video_id", f.video_id},
                     {"label", data.class_names[f.label > 0 ? 1 : 0]},
                     {"predicted", data.class_names[f.predicted > 0 ? 1 : 0]},
                     {"decision_value", f.decision},
                     {"chosen_c", f.chosen_c},
                     {"inner_accuracy", f.inner_accuracy}});
  return {{"accuracy", r.accuracy},
          {"class_accuracy", {{data.class_names[0], r.class_accuracy[0]}, {data.class_names[1], r.class_accuracy[1]}}},
          {"folds", folds},
          {"seed", r.seed}};
}

}  // namespace facial_basis
