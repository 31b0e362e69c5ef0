// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <regex>
#include <sstream>

#include "cli_fixture.hpp"
#include "facial_basis/facial_basis.hpp"
#include "facial_basis/serialization.hpp"
#include "oracles.hpp"

using namespace facial_basis;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// Every learn run made here, for the locality and norm criteria.
struct LearnRun {
  std::string label;
  BasisDictionary dictionary;
  TrainingLog log;
};
std::vector<LearnRun> g_runs;

LearnResult record(const std::string& label, LearnResult r) {
  g_runs.push_back({label, r.dictionary, r.log});
  return r;
}

SynthSpec planted_spec(std::uint64_t seed) {
  SynthSpec spec;  // L = 51, K = 12, 3 active, sigma = 0.01, N = 2000
  spec.seed = seed;
  return spec;
}

LearnConfig planted_learn(std::uint64_t seed) {
  LearnConfig lc;
  lc.atom_count = 12;
  lc.seed = seed;
  lc.threads = 4;
  return lc;
}

Outcome planted_recovery() {
  const auto corpus = generate_planted_corpus(planted_spec(2024));
  const auto start = std::chrono::steady_clock::now();
  const auto result = record("planted seed 2024", learn(corpus.samples, corpus.truth.topology(), planted_learn(2024)));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto match = match_dictionaries(result.dictionary, corpus.truth);
  const bool ok = match.matches.size() == 12 && match.min_abs_cos >= 0.95 && seconds <= 60.0;
  return {ok, "min |cos| " + fmt(match.min_abs_cos) + " over " + std::to_string(match.matches.size()) +
                  " atoms, learn took " + fmt(seconds) + " s"};
}

Outcome objective_monotonicity() {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto corpus = generate_planted_corpus(planted_spec(seed));
    const auto r = record("planted seed " + std::to_string(seed), learn(corpus.samples, corpus.truth.topology(), planted_learn(seed)));
    for (std::size_t i = 1; i < r.log.records.size(); ++i)
      worst = std::max(worst, r.log.records[i].objective - r.log.records[i - 1].objective);
  }
  return {worst <= 1e-9, "largest per-step increase " + fmt(worst) + " over 20 seeds"};
}

Outcome config_fidelity(const clitest::ScratchDir& dir) {
  const auto out = dir.path().string();
  if (clitest::run({"--seed", "11", "--output", out, "synth", "--kind", "corpus", "--samples", "400"}).code != 0)
    return {false, "synth corpus failed"};
  const auto r = clitest::run({"--seed", "11", "--output", out, "learn", "--corpus", dir / "corpus.csv"});
  if (r.code != 0) return {false, "default learn failed: " + r.err};
  const auto file = load_dictionary(dir / "dictionary.json");
  const auto& meta = file.metadata;
  const bool lambda_ok = meta.at("config").at("lambda") == 0.2 && meta.at("lambda") == 0.2;
  const bool k_ok = meta.at("config").at("atom_count") == 50 && file.dictionary.atom_count() == 50;
  const std::regex pattern("^(LB|RB|LE|RE|NO|MO)-([1-9][0-9]*)$");
  int named = 0;
  for (std::size_t k = 0; k < file.dictionary.atom_names().size(); ++k) {
    const auto& name = file.dictionary.atom_names()[k];
    std::smatch m;
    if (std::regex_match(name, m, pattern) && m[1].str() == to_string(file.dictionary.atom_groups()[k])) ++named;
  }
  g_runs.push_back({"default CLI learn", file.dictionary, {}});
  auto log_table = read_csv(dir.path() / "training_log.csv");
  TrainingLog& log = g_runs.back().log;
  for (std::size_t i = 0; i < log_table.rows.size(); ++i)
    log.records.push_back({static_cast<int>(log_table.number(i, 0)), log_table.number(i, 1), log_table.number(i, 2),
                           log_table.number(i, 3)});
  return {lambda_ok && k_ok && named == 50,
          "lambda " + meta.at("config").at("lambda").dump() + ", K " + meta.at("config").at("atom_count").dump() +
              ", " + std::to_string(named) + "/50 names match the group-code scheme"};
}

Outcome locality() {
  std::size_t entries = 0, nonzero = 0, issues = 0;
  for (const auto& run : g_runs) {
    const auto& d = run.dictionary;
    for (Index k = 0; k < d.atom_count(); ++k)
      for (Index r = 0; r < d.dimension(); ++r)
        if (!d.topology().row_in_group(r, d.atom_groups()[static_cast<std::size_t>(k)])) {
          ++entries;
          if (d.atoms()(r, k) != 0.0 || std::signbit(d.atoms()(r, k))) ++nonzero;
        }
    issues += validate_dictionary(d).size();
  }
  return {nonzero == 0 && issues == 0, std::to_string(nonzero) + " of " + std::to_string(entries) +
                                           " off-mask entries not +0.0, " + std::to_string(issues) +
                                           " validation issues across " + std::to_string(g_runs.size()) + " learn runs"};
}

Outcome norm_bound() {
  double worst = 0.0;
  std::size_t records = 0;
  for (const auto& run : g_runs)
    for (const auto& rec : run.log.records) {
      worst = std::max(worst, rec.max_atom_norm);
      ++records;
    }
  return {worst <= 1.0 + 1e-9 && records > 0,
          "max atom norm " + fmt(worst) + " over " + std::to_string(records) + " logged iterations"};
}

BasisDictionary random_dictionary(Index k, std::mt19937_64& rng) {
  const auto topo = oracle::tiny_topology();
  Matrix w = oracle::random_matrix(topo.dimension(), k, rng);
  w.colwise().normalize();
  const std::vector<GroupCode> groups(static_cast<std::size_t>(k), GroupCode::MO);
  return BasisDictionary(w, groups, names_for_groups(groups), 0.2, topo);
}

Outcome lasso_oracle() {
  std::mt19937_64 rng(7);
  double worst_diff = 0.0, worst_kkt = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = 1 + trial % 6;
    const auto dict = random_dictionary(k, rng);
    const Vector d = dict.atoms() * oracle::random_matrix(k, 1, rng) + 0.3 * oracle::random_matrix(dict.dimension(), 1, rng);
    const Vector got = encode(dict, DeformationSample(d), {});
    worst_diff = std::max(worst_diff, (got - oracle::lasso_enumerate(dict.atoms(), d, 0.2)).cwiseAbs().maxCoeff());
    worst_kkt = std::max(worst_kkt, oracle::lasso_kkt_violation(dict.atoms(), d, got, 0.2));
  }
  return {worst_diff <= 1e-6 && worst_kkt <= 1e-8,
          "max coefficient difference " + fmt(worst_diff) + ", max KKT violation " + fmt(worst_kkt) + " on 200 instances"};
}

Outcome wcc_oracle() {
  std::mt19937_64 rng(8);
  const double fps = 10.0;  // 4 s window = 40 frames, 1 s lag = 10 frames
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix w = oracle::random_matrix(40, 5, rng);
    for (Index t = 1; t < 40; ++t) w.row(t) = 0.7 * w.row(t - 1) + w.row(t);
    WccConfig cfg;
    cfg.lag_step_frames = 1 + trial % 3;
    const Matrix got = window_wcc(CoefficientSeries(fps, w.leftCols(2), w.rightCols(3)), cfg, 0);
    worst = std::max(worst, (got - oracle::wcc_direct(w, 10, cfg.lag_step_frames)).cwiseAbs().maxCoeff());
  }
  double shift_min = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix x = oracle::random_matrix(43, 5, rng);
    Matrix w = x.topRows(40);
    w.col(3) = x.col(0).segment(0, 40);
    w.col(0) = x.col(0).segment(3, 40);
    for (double lag : {0.3, 0.6, 1.0}) {
      WccConfig cfg;
      cfg.lag_range_seconds = lag;
      const Matrix m = window_wcc(CoefficientSeries(fps, w.leftCols(2), w.rightCols(3)), cfg, 0);
      shift_min = std::min({shift_min, m(0, 3), m(3, 0)});
    }
  }
  return {worst <= 1e-10 && shift_min >= 1.0 - 1e-10,
          "max deviation " + fmt(worst) + " on 100 windows, 3-frame shift min correlation 1 - " + fmt(1.0 - shift_min)};
}

Outcome feature_dimension(const clitest::ScratchDir& dir) {
  const auto dict = load_dictionary(dir / "dictionary.json").dictionary;
  const Matrix frames = load_corpus(dir / "corpus.csv", 51, nullptr).topRows(150);
  std::vector<DeformationSample> samples;
  for (Index t = 0; t < frames.rows(); ++t) samples.emplace_back(frames.row(t).transpose());
  const Matrix codes = encode_series(dict, samples, {}, 4);
  std::mt19937_64 rng(9);
  const CoefficientSeries series(30.0, codes, oracle::random_matrix(frames.rows(), 3, rng));
  const auto f = video_features(series, WccConfig{}, {}, 4);
  return {f.values.size() == 2809 && dict.atom_count() == 50,
          "K " + std::to_string(dict.atom_count()) + " + 3 pose channels -> " + std::to_string(f.values.size()) + " features"};
}

LabeledDataset series_dataset(const LabeledSeriesSpec& spec) {
  const auto videos = generate_labeled_series(spec);
  LabeledDataset data;
  data.features.resize(static_cast<Index>(videos.size()), (spec.bu_channels + 3) * (spec.bu_channels + 3));
  for (std::size_t v = 0; v < videos.size(); ++v) {
    data.features.row(static_cast<Index>(v)) = video_features(videos[v].series, WccConfig{}).values.transpose();
    data.labels.push_back(videos[v].label);
    data.video_ids.push_back(videos[v].video_id);
  }
  return data;
}

Outcome end_to_end() {
  LabeledSeriesSpec spec;
  spec.videos_per_class = 30;
  spec.seed = 101;
  CvConfig cv;
  cv.seed = 101;
  const double coupled = nested_loo_evaluate(series_dataset(spec), cv, 4).accuracy;
  double lo = 1.0, hi = 0.0;
  spec.couple_class_a = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    spec.seed = 200 + seed;
    cv.seed = 200 + seed;
    const double acc = nested_loo_evaluate(series_dataset(spec), cv, 4).accuracy;
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  return {coupled >= 0.9 && lo >= 0.2 && hi <= 0.8,
          "coupled accuracy " + fmt(coupled) + ", null control range [" + fmt(lo) + ", " + fmt(hi) + "] over 20 seeds"};
}

Outcome svm_oracle() {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> size(3, 8);
  SvmConfig unweighted;
  unweighted.balanced = false;
  double worst = 0.0, worst_swap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = size(rng);
    const Matrix x = oracle::random_matrix(n, 1 + trial % 4, rng);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i % 2 ? 1 : -1;
    std::shuffle(y.begin(), y.end(), rng);
    const double c = std::array<double, 3>{0.1, 1.0, 10.0}[static_cast<std::size_t>(trial % 3)];
    const auto model = train_linear_svm(x, y, c, unweighted);
    worst = std::max(worst, (model.weights - oracle::svm_dual_enumerate(x, y, c)).cwiseAbs().maxCoeff());
    std::vector<int> swapped = y;
    for (int& v : swapped) v = -v;
    for (const SvmConfig& cfg : {unweighted, SvmConfig{}}) {
      const auto a = train_linear_svm(x, y, c, cfg);
      const auto b = train_linear_svm(x, swapped, c, cfg);
      worst_swap = std::max({worst_swap, (a.weights + b.weights).cwiseAbs().maxCoeff(), std::abs(a.bias + b.bias)});
    }
  }
  // Nested evaluation: label swap keeps accuracy, affine feature rescaling
  // keeps every prediction.
  int invariance_failures = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = generate_separable_blobs(12, 4, 0.5, seed, 1.5);
    auto swapped = data;
    for (int& v : swapped.labels) v = -v;
    auto scaled = data;
    for (Index f = 0; f < 4; ++f) scaled.features.col(f) = scaled.features.col(f).array() * std::pow(10.0, f - 1.5) + 3.0 * f;
    const auto a = nested_loo_evaluate(data, CvConfig{});
    const auto b = nested_loo_evaluate(swapped, CvConfig{});
    const auto s = nested_loo_evaluate(scaled, CvConfig{});
    if (a.accuracy != b.accuracy) ++invariance_failures;
    for (std::size_t i = 0; i < a.folds.size(); ++i) {
      if (a.folds[i].predicted != -b.folds[i].predicted) ++invariance_failures;
      if (a.folds[i].predicted != s.folds[i].predicted) ++invariance_failures;
    }
  }
  return {worst <= 1e-4 && worst_swap <= 1e-6 && invariance_failures == 0,
          "max weight difference " + fmt(worst) + " on 50 instances, label-swap asymmetry " + fmt(worst_swap) + ", " +
              std::to_string(invariance_failures) + " invariance violations"};
}

Outcome determinism() {
  clitest::ScratchDir a("acc_det_a"), b("acc_det_b");
  for (const clitest::ScratchDir* dir : {&a, &b}) {
    const auto out = dir->path().string();
    const std::string threads = dir == &a ? "1" : "4";
    const fs::path s = dir->path() / "series";
    const std::vector<std::vector<std::string>> commands{
        {"--seed", "5", "--output", out, "synth", "--kind", "corpus", "--samples", "300"},
        {"--seed", "5", "--output", out, "--threads", threads, "learn", "--corpus", *dir / "corpus.csv", "--atoms", "12"},
        {"--output", out, "validate", "--dictionary", *dir / "dictionary.json"},
        {"--output", out, "--threads", threads, "encode", "--dictionary", *dir / "dictionary.json", "--input", *dir / "corpus.csv", "--no-pose"},
        {"--output", out, "rank", "--dictionary", *dir / "dictionary.json", "--coefficients", *dir / "corpus.coefficients.csv"},
        {"--seed", "6", "--output", s.string(), "synth", "--kind", "series", "--videos-per-class", "8", "--frames", "200"},
        {"--seed", "6", "--output", out, "synth", "--kind", "topology"}};
    for (const auto& cmd : commands)
      if (auto r = clitest::run(cmd); r.code != 0) return {false, "command failed: " + r.err};
    std::vector<std::string> wcc{"--output", s.string(), "--threads", threads, "wcc", "--coefficients"};
    for (const auto& f : clitest::series_files(s)) wcc.push_back(f);
    if (auto r = clitest::run(wcc); r.code != 0) return {false, "wcc failed: " + r.err};
    if (auto r = clitest::run({"--seed", "6", "--output", s.string(), "--threads", threads, "classify", "--features",
                               (s / "features.csv").string(), "--labels", (s / "labels.csv").string(), "--subsamples", "10"});
        r.code != 0)
      return {false, "classify failed: " + r.err};
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a.path());
    if (clitest::slurp(a.path() / rel) != clitest::slurp(b.path() / rel)) ++differing;
  }
  const auto original = load_dictionary(a / "dictionary.json").dictionary;
  save_dictionary(a / "copy.json", original, {});
  const bool bit_exact = load_dictionary(a / "copy.json").dictionary.atoms().cwiseEqual(original.atoms()).all() &&
                         clitest::slurp(a.path() / "copy.bin") == clitest::slurp(a.path() / "dictionary.bin");
  return {differing == 0 && files > 20 && bit_exact,
          std::to_string(differing) + " of " + std::to_string(files) + " output files differ between reruns, binary round-trip " +
              (bit_exact ? "bit-exact" : "NOT bit-exact")};
}

Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main() {
  clitest::ScratchDir k50("acc_k50");
  // Criteria that produce learn runs go first so that locality and the norm
  // bound are checked over all of them.
  const Outcome recovery = guarded(planted_recovery);
  const Outcome monotone = guarded(objective_monotonicity);
  const Outcome fidelity = guarded([&] { return config_fidelity(k50); });
  const std::vector<std::pair<std::string, std::function<Outcome()>>> ordered{
      {"planted dictionary recovery", [&] { return recovery; }},
      {"locality exactness", locality},
      {"atom norm bound", norm_bound},
      {"objective monotonicity", [&] { return monotone; }},
      {"LASSO oracle equivalence", lasso_oracle},
      {"WCC oracle equivalence", wcc_oracle},
      {"feature dimension", [&] { return feature_dimension(k50); }},
      {"configuration fidelity", [&] { return fidelity; }},
      {"end-to-end classification", end_to_end},
      {"SVM oracle", svm_oracle},
      {"determinism and round-trip", determinism}};
  int failed = 0;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const Outcome o = guarded(ordered[i].second);
    if (!o.pass) ++failed;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, ordered[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", ordered.size(), failed);
  return failed == 0 ? 0 : 1;
}
