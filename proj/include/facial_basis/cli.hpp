#pragma once

// Command-line front end: learn, encode, rank, wcc, classify, synth, validate.
// Exit codes: 0 success, 1 input/config error, 2 numerical/convergence
// error, 3 partial failure (some videos skipped).

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "facial_basis/behavior_features.hpp"
#include "facial_basis/classifier.hpp"
#include "facial_basis/dict_learn.hpp"
#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/parallel.hpp"
#include "facial_basis/serialization.hpp"
#include "facial_basis/sparse_coder.hpp"
#include "facial_basis/synth_oracle.hpp"

namespace facial_basis::cli {

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline GroupAllocation parse_allocation(const std::string& spec) {
  GroupAllocation a{};
  for (const auto& part : split(spec, ',')) {
    const auto eq = part.find('=');
    auto g = eq == std::string::npos ? std::nullopt : parse_group_code(part.substr(0, eq));
    if (!g) throw ConfigError("--allocation: expected CODE=count pairs, got '" + part + "'");
    a[static_cast<std::size_t>(*g)] = std::stoi(part.substr(eq + 1));
  }
  return a;
}

inline std::vector<double> parse_doubles(const std::string& s, const char* flag) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) {
    auto v = parse_double(part);
    if (!v) throw ConfigError(std::string(flag) + ": '" + part + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

/// File stem without a trailing ".coefficients" / ".frames".
inline std::string video_id_of(const fs::path& p) {
  std::string stem = p.stem().string();
  for (std::string_view suffix : {".coefficients", ".frames"})
    if (stem.size() > suffix.size() && stem.ends_with(suffix)) stem.resize(stem.size() - suffix.size());
  return stem;
}

inline PayloadEncoding parse_payload(const std::string& s) {
  if (s == "binary") return PayloadEncoding::kBinary;
  if (s == "csv") return PayloadEncoding::kCsv;
  throw ConfigError("--payload must be 'binary' or 'csv'");
}

}  // namespace detail

/// Options shared by every subcommand.
struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::optional<unsigned> threads;
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args) {
    CLI::App app{"Localized sparse facial-expression basis toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", globals_.config_path, "Pipeline configuration (JSON)");
    app.add_option("--seed", globals_.seed, "Random seed");
    app.add_option("--output", globals_.output, "Output directory");
    app.add_option("--threads", globals_.threads, "Worker threads");

    add_learn(app);
    add_encode(app);
    add_rank(app);
    add_wcc(app);
    add_classify(app);
    add_synth(app);
    add_validate(app);

    std::vector<std::string> argv_store = args;
    std::vector<char*> argv;
    std::string prog = "facial_basis";
    argv.push_back(prog.data());
    for (auto& a : argv_store) argv.push_back(a.data());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out_, err_);
      return code == 0 ? 0 : static_cast<int>(ExitCode::kInputError);
    }
    try {
      load_config();
      return dispatch_();
    } catch (const Error& e) {
      err_ << "error: " << e.what() << "\n";
      return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      return static_cast<int>(ExitCode::kInputError);
    }
  }

 private:
  // -------------------------------------------------------------------------
  void load_config() {
    if (!globals_.config_path.empty()) {
      if (!fs::exists(globals_.config_path))
        throw ConfigError("config file not found: '" + globals_.config_path + "'");
      cfg_ = pipeline_config_from_json(read_json(globals_.config_path), globals_.config_path);
    }
    if (globals_.seed) cfg_.seed = *globals_.seed;
    if (globals_.output) cfg_.output_dir = *globals_.output;
    if (globals_.threads) cfg_.threads = std::max(1u, *globals_.threads);
    cfg_.learn.seed = cfg_.seed;
    cfg_.cv.seed = cfg_.seed;
    cfg_.learn.threads = cfg_.threads;
  }

  fs::path out_path(const std::string& name) const { return fs::path(cfg_.output_dir) / name; }

  LandmarkTopology topology(const std::string& flag_value) const {
    if (!flag_value.empty()) return load_topology(flag_value);
    if (cfg_.topology_path) return load_topology(*cfg_.topology_path);
    return LandmarkTopology::ibug51();
  }

  std::optional<ExpressionModel> model(const std::string& flag_value) const {
    if (!flag_value.empty()) return load_expression_model(flag_value);
    if (cfg_.model_path) return load_expression_model(*cfg_.model_path);
    return std::nullopt;
  }

  // -------------------------------------------------------------------------
  struct LearnArgs {
    std::string corpus, model, topology, init, allocation, payload = "binary", name = "dictionary";
    std::optional<int> atoms, iterations;
    std::optional<double> lambda, tol;
  } learn_;

  void add_learn(CLI::App& app) {
    auto* sub = app.add_subcommand("learn", "Learn a localized dictionary from a corpus");
    sub->add_option("--corpus", learn_.corpus, "Corpus CSV of deformations (x0,y0,z0,...) or coefficients (eps0,...)")->required();
    sub->add_option("--model", learn_.model, "Expression model JSON (needed for coefficient corpora)");
    sub->add_option("--topology", learn_.topology, "Landmark topology JSON (default: iBUG-51)");
    sub->add_option("--atoms", learn_.atoms, "Number of atoms K (default 50)");
    sub->add_option("--lambda", learn_.lambda, "Sparsity weight (default 0.2)");
    sub->add_option("--iterations", learn_.iterations, "Maximum outer iterations (default 100)");
    sub->add_option("--tol", learn_.tol, "Relative objective change for convergence (default 1e-5)");
    sub->add_option("--init", learn_.init, "masked_data_samples | masked_gaussian");
    sub->add_option("--allocation", learn_.allocation, "Atoms per group, e.g. LB=5,RB=5,LE=6,RE=6,NO=9,MO=19");
    sub->add_option("--payload", learn_.payload, "Dictionary payload: binary | csv");
    sub->add_option("--name", learn_.name, "Output file stem");
    sub->callback([this] { dispatch_ = [this] { return cmd_learn(); }; });
  }

  int cmd_learn() {
    const auto topo = topology(learn_.topology);
    const auto expr = model(learn_.model);
    LearnConfig lc = cfg_.learn;
    if (learn_.atoms) lc.atom_count = *learn_.atoms;
    if (learn_.lambda) lc.lambda = *learn_.lambda;
    if (learn_.iterations) lc.outer_iterations = *learn_.iterations;
    if (learn_.tol) lc.convergence_tol = *learn_.tol;
    if (!learn_.init.empty()) lc.init = parse_init(learn_.init);
    if (!learn_.allocation.empty()) lc.group_allocation = detail::parse_allocation(learn_.allocation);
    const auto encoding = detail::parse_payload(learn_.payload);
    if (!fs::exists(learn_.corpus)) throw InputError("corpus file not found: '" + learn_.corpus + "'");
    const Matrix samples = load_corpus(learn_.corpus, topo.landmark_count(), expr ? &*expr : nullptr);

    const auto result = learn(samples, topo, lc);
    const json config = to_json(lc);
    const std::string hash = config_hash(config);
    json extra = {{"config", config},
                  {"config_hash", hash},
                  {"training",
                   {{"stop_reason", result.log.stop_reason},
                    {"iterations", result.log.records.back().iteration},
                    {"initial_objective", result.log.initial_objective()},
                    {"final_objective", result.log.final_objective()},
                    {"reinitialized_atoms", result.log.reinitialized_atoms},
                    {"samples", samples.rows()}}}};
    save_dictionary(out_path(learn_.name + ".json"), result.dictionary, extra, encoding);
    write_text(out_path("training_log.csv"), training_log_csv(result.log, hash));
    out_ << "learned " << result.dictionary.atom_count() << " atoms (" << result.log.stop_reason << " after "
         << result.log.records.back().iteration << " iterations, objective " << result.log.final_objective() << ")\n";
    return 0;
  }

  // -------------------------------------------------------------------------
  struct EncodeArgs {
    std::string dictionary, model;
    std::vector<std::string> inputs;
    double fps = 30.0;
    bool no_pose = false;
    std::optional<double> lambda;
    std::optional<int> atoms;
  } encode_;

  void add_encode(CLI::App& app) {
    auto* sub = app.add_subcommand("encode", "Encode per-video frames into BU coefficient series");
    sub->add_option("--dictionary", encode_.dictionary, "Dictionary JSON")->required();
    sub->add_option("--input", encode_.inputs, "Per-video frame CSV(s)")->required();
    sub->add_option("--model", encode_.model, "Expression model JSON (for eps0,... inputs)");
    sub->add_option("--fps", encode_.fps, "Frame rate when the input does not declare one");
    sub->add_flag("--no-pose", encode_.no_pose, "Accept inputs without pitch,yaw,roll (written as zeros)");
    sub->add_option("--lambda", encode_.lambda, "Sparsity weight (default: the dictionary's)");
    sub->add_option("--atoms", encode_.atoms, "Expected atom count; mismatch is an error");
    sub->callback([this] { dispatch_ = [this] { return cmd_encode(); }; });
  }

  int cmd_encode() {
    const auto file = load_dictionary(encode_.dictionary);
    const auto& dict = file.dictionary;
    if (encode_.atoms && *encode_.atoms != dict.atom_count())
      throw InputError("requested " + std::to_string(*encode_.atoms) + " atoms but the dictionary has K = " +
                       std::to_string(dict.atom_count()));
    const auto expr = model(encode_.model);
    CodingConfig cc = cfg_.coding;
    cc.lambda = encode_.lambda ? *encode_.lambda : dict.lambda_used();
    cc.validate();
    const json config = {{"coding", to_json(cc)},
                         {"dictionary", file.metadata.value("config_hash", std::string())},
                         {"no_pose", encode_.no_pose}};
    const std::string hash = config_hash(config);
    parallel_for(encode_.inputs.size(), cfg_.threads, [&](std::size_t i) {
      const fs::path in = encode_.inputs[i];
      const auto video = load_video_frames(in, dict.topology().landmark_count(), expr ? &*expr : nullptr,
                                           !encode_.no_pose, encode_.fps);
      if (video.frames.empty()) throw InputError(in.string() + ": no frames");
      const Matrix codes = encode_series(dict, video.frames, cc);
      const CoefficientSeries series(video.frame_rate, codes, video.pose);
      write_text(out_path(detail::video_id_of(in) + ".coefficients.csv"), coefficients_csv(series, dict.atom_names(), hash));
    });
    out_ << "encoded " << encode_.inputs.size() << " video(s)\n";
    return 0;
  }

  // -------------------------------------------------------------------------
  struct RankArgs {
    std::string dictionary, payload = "binary", name = "dictionary_ranked";
    std::vector<std::string> coefficients;
  } rank_;

  void add_rank(CLI::App& app) {
    auto* sub = app.add_subcommand("rank", "Order atoms by mean absolute activation");
    sub->add_option("--dictionary", rank_.dictionary, "Dictionary JSON")->required();
    sub->add_option("--coefficients", rank_.coefficients, "Coefficient CSV(s) from encode")->required();
    sub->add_option("--payload", rank_.payload, "Dictionary payload: binary | csv");
    sub->add_option("--name", rank_.name, "Output file stem");
    sub->callback([this] { dispatch_ = [this] { return cmd_rank(); }; });
  }

  int cmd_rank() {
    const auto file = load_dictionary(rank_.dictionary);
    const auto& dict = file.dictionary;
    std::vector<CoefficientSeries> series;
    for (const auto& path : rank_.coefficients) {
      auto named = load_coefficients(path);
      if (named.bu_names != dict.atom_names())
        throw InputError(path + ": BU columns (" + std::to_string(named.bu_names.size()) +
                         ") do not match the dictionary atoms (K = " + std::to_string(dict.atom_count()) + ")");
      series.push_back(std::move(named.series));
    }
    const Vector mean_abs = mean_abs_activation(dict.atom_count(), series);
    const auto ranked = rank_by_activation(dict, series);
    json extra = file.metadata;
    for (const char* key : {"format_version", "atom_count", "dimension", "lambda", "allocation", "atom_names",
                            "atom_groups", "activation_rank", "topology", "payload"})
      extra.erase(key);
    extra["ranking"] = {{"statistic", "mean_abs_activation"}, {"videos", rank_.coefficients.size()}};
    save_dictionary(out_path(rank_.name + ".json"), ranked, extra, detail::parse_payload(rank_.payload));
    CsvWriter w(formats::kRankManifest, {{"statistic", "mean_abs_activation"}, {"config", file.metadata.value("config_hash", std::string())}});
    w.header({"rank", "name", "atom_index", "mean_abs_activation"});
    const auto& order = *ranked.activation_rank();
    for (std::size_t r = 0; r < order.size(); ++r)
      w.row({std::to_string(r + 1), dict.atom_names()[static_cast<std::size_t>(order[r])], std::to_string(order[r]),
             format_double(mean_abs[order[r]])});
    write_text(out_path("rank_manifest.csv"), w.str());
    out_ << "ranked " << order.size() << " atoms; most active: " << dict.atom_names()[static_cast<std::size_t>(order[0])] << "\n";
    return 0;
  }

  // -------------------------------------------------------------------------
  struct WccArgs {
    std::vector<std::string> coefficients;
    std::optional<double> window, stride, lag;
    std::optional<int> lag_step, top_k;
    std::string channels, manifest;
  } wcc_;

  void add_wcc(CLI::App& app) {
    auto* sub = app.add_subcommand("wcc", "Windowed cross-correlation features per video");
    sub->add_option("--coefficients", wcc_.coefficients, "Coefficient CSV(s) from encode")->required();
    sub->add_option("--window", wcc_.window, "Window length in seconds (default 4)");
    sub->add_option("--stride", wcc_.stride, "Window stride in seconds (default window/2)");
    sub->add_option("--lag", wcc_.lag, "Maximum lag in seconds (default 1)");
    sub->add_option("--lag-step", wcc_.lag_step, "Lag step in frames (default 1)");
    sub->add_option("--channels", wcc_.channels, "Comma-separated channel names to keep");
    sub->add_option("--manifest", wcc_.manifest, "Rank manifest (with --top-k)");
    sub->add_option("--top-k", wcc_.top_k, "Keep the k most active BUs from --manifest plus pose channels");
    sub->callback([this] { dispatch_ = [this] { return cmd_wcc(); }; });
  }

  int cmd_wcc() {
    WccConfig wc = cfg_.wcc;
    std::vector<std::string> assumed;
    if (wcc_.window) wc.window_seconds = *wcc_.window;
    if (wcc_.stride) wc.window_stride_seconds = *wcc_.stride;
    if (wcc_.lag) wc.lag_range_seconds = *wcc_.lag;
    if (wcc_.lag_step) wc.lag_step_frames = *wcc_.lag_step;
    if (!wcc_.window && globals_.config_path.empty()) assumed.push_back("window");
    if (!wcc_.stride && !wc.window_stride_seconds) assumed.push_back("stride");
    if (!wcc_.lag && globals_.config_path.empty()) assumed.push_back("lag");

    std::vector<std::optional<NamedSeries>> loaded(wcc_.coefficients.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) loaded[i] = load_coefficients(wcc_.coefficients[i]);
    std::vector<std::string> all_names = loaded.front()->bu_names;
    all_names.insert(all_names.end(), {"pitch", "yaw", "roll"});
    for (std::size_t i = 1; i < loaded.size(); ++i)
      if (loaded[i]->bu_names != loaded.front()->bu_names)
        throw InputError(wcc_.coefficients[i] + ": channel names differ from " + wcc_.coefficients.front());

    std::vector<std::string> keep;
    if (!wcc_.channels.empty()) keep = detail::split(wcc_.channels, ',');
    if (wcc_.top_k) {
      if (wcc_.manifest.empty()) throw ConfigError("--top-k requires --manifest");
      const auto table = read_csv(wcc_.manifest);
      table.expect_version(formats::kRankManifest, true);
      const Index name_col = table.column("name");
      if (name_col < 0) throw ParseError(table.source, 1, "missing 'name' column");
      const auto k = static_cast<std::size_t>(std::max(0, *wcc_.top_k));
      if (k > table.rows.size()) throw ConfigError("--top-k exceeds the manifest length");
      for (std::size_t r = 0; r < k; ++r) keep.push_back(table.rows[r][static_cast<std::size_t>(name_col)]);
      keep.insert(keep.end(), {"pitch", "yaw", "roll"});
    }
    if (!keep.empty()) {
      std::vector<int> idx;
      for (const auto& name : keep) {
        auto it = std::find(all_names.begin(), all_names.end(), name);
        if (it == all_names.end()) throw ConfigError("unknown channel '" + name + "'");
        idx.push_back(static_cast<int>(it - all_names.begin()));
      }
      wc.selected_channels = idx;
    }
    std::vector<std::string> names = all_names;
    if (wc.selected_channels) {
      names.clear();
      for (int i : *wc.selected_channels) names.push_back(all_names[static_cast<std::size_t>(i)]);
    }
    const json config = to_json(wc);
    const std::string hash = config_hash(config);

    std::vector<std::optional<FeatureVector>> features(loaded.size());
    std::vector<std::string> failures(loaded.size());
    parallel_for(loaded.size(), cfg_.threads, [&](std::size_t i) {
      try {
        features[i] = video_features(loaded[i]->series, wc, names);
      } catch (const ConfigError&) {
        throw;
      } catch (const InputError& e) {
        failures[i] = e.what();
      }
    });
    FeatureTable table;
    const auto q = static_cast<Index>(names.size());
    for (const auto& [i, j] : channel_pair_index(q))
      table.column_names.push_back(pair_name(names[static_cast<std::size_t>(i)], names[static_cast<std::size_t>(j)]));
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
      if (!features[i]) {
        err_ << "warning: skipping " << wcc_.coefficients[i] << ": " << failures[i] << "\n";
        continue;
      }
      table.video_ids.push_back(detail::video_id_of(wcc_.coefficients[i]));
      table.window_counts.push_back(features[i]->window_count);
      rows.push_back(features[i]->values);
    }
    if (rows.empty()) {
      err_ << "error: no video was long enough for one window\n";
      return static_cast<int>(ExitCode::kInputError);
    }
    table.values.resize(static_cast<Index>(rows.size()), q * q);
    for (std::size_t r = 0; r < rows.size(); ++r) table.values.row(static_cast<Index>(r)) = rows[r].transpose();

    std::string assumed_list;
    for (const auto& a : assumed) assumed_list += (assumed_list.empty() ? "" : ",") + a;
    write_text(out_path("features.csv"),
               features_csv(table, {{"config", hash},
                                    {"window_seconds", format_double(wc.window_seconds)},
                                    {"stride_seconds", format_double(wc.stride_seconds())},
                                    {"lag_range_seconds", format_double(wc.lag_range_seconds)},
                                    {"lag_step_frames", std::to_string(wc.lag_step_frames)},
                                    {"channels", std::to_string(q)},
                                    {"assumed_defaults", assumed_list.empty() ? "none" : assumed_list}}));
    write_text(out_path("features_map.csv"), feature_map_csv(names));
    out_ << "wrote " << rows.size() << " feature vector(s) of length " << q * q << "\n";
    return rows.size() == loaded.size() ? 0 : static_cast<int>(ExitCode::kPartialFailure);
  }

  // -------------------------------------------------------------------------
  struct ClassifyArgs {
    std::string features, labels, feature_map, c_grid;
    std::optional<int> inner_folds, subsamples;
    std::optional<double> subsample_fraction;
    bool no_standardize = false;
  } classify_;

  void add_classify(CLI::App& app) {
    auto* sub = app.add_subcommand("classify", "Nested leave-one-out linear SVM evaluation");
    sub->add_option("--features", classify_.features, "Feature CSV from wcc")->required();
    sub->add_option("--labels", classify_.labels, "Labels CSV (video_id,label)")->required();
    sub->add_option("--feature-map", classify_.feature_map, "Feature map CSV (default: <features>_map.csv)");
    sub->add_option("--c-grid", classify_.c_grid, "Comma-separated C values, ascending");
    sub->add_option("--inner-folds", classify_.inner_folds, "Inner CV folds (default 5)");
    sub->add_flag("--no-standardize", classify_.no_standardize, "Disable per-fold z-scoring");
    sub->add_option("--subsamples", classify_.subsamples, "Retrainings for weight summaries (default 100)");
    sub->add_option("--subsample-fraction", classify_.subsample_fraction, "Fraction per class (default 0.9)");
    sub->callback([this] { dispatch_ = [this] { return cmd_classify(); }; });
  }

  int cmd_classify() {
    CvConfig cv = cfg_.cv;
    if (!classify_.c_grid.empty()) cv.c_grid = detail::parse_doubles(classify_.c_grid, "--c-grid");
    if (classify_.inner_folds) cv.inner_folds = *classify_.inner_folds;
    if (classify_.no_standardize) cv.standardize = false;
    const int subsamples = classify_.subsamples.value_or(cfg_.subsample_count);
    const double fraction = classify_.subsample_fraction.value_or(cfg_.subsample_fraction);
    cv.validate();

    if (!fs::exists(classify_.features)) throw InputError("features file not found: '" + classify_.features + "'");
    const auto table = load_features(classify_.features);
    fs::path map_path = classify_.feature_map;
    if (map_path.empty()) {
      map_path = fs::path(classify_.features);
      map_path.replace_filename(map_path.stem().string() + "_map.csv");
    }
    const auto channel_names = load_feature_map(map_path);
    if (static_cast<Index>(channel_names.size() * channel_names.size()) != table.values.cols())
      throw InputError("feature map has " + std::to_string(channel_names.size()) + " channels, features have " +
                       std::to_string(table.values.cols()) + " columns");

    const auto labels = load_labels(classify_.labels);
    std::map<std::string, std::string> label_of;
    for (const auto& [id, label] : labels) {
      if (label_of.contains(id)) throw InputError("labels: duplicate video id '" + id + "'");
      label_of[id] = label;
    }
    std::vector<std::string> unmatched;
    std::set<std::string> feature_ids(table.video_ids.begin(), table.video_ids.end());
    for (const auto& id : table.video_ids)
      if (!label_of.contains(id)) unmatched.push_back(id + " (no label)");
    for (const auto& [id, label] : labels)
      if (!feature_ids.contains(id)) unmatched.push_back(id + " (no features)");
    if (!unmatched.empty()) {
      std::string list;
      for (const auto& u : unmatched) list += (list.empty() ? "" : ", ") + u;
      throw InputError("unmatched video ids: " + list);
    }
    std::set<std::string> classes;
    for (const auto& [id, label] : labels) classes.insert(label);
    if (classes.size() != 2) throw InputError("labels must contain exactly two classes, found " + std::to_string(classes.size()));

    LabeledDataset data;
    data.class_names = {*classes.begin(), *std::next(classes.begin())};
    data.features = table.values;
    data.video_ids = table.video_ids;
    for (const auto& id : table.video_ids) data.labels.push_back(label_of[id] == data.class_names[1] ? 1 : -1);

    const auto report = nested_loo_evaluate(data, cv, cfg_.threads);
    const double c_final = modal_c(report);
    const auto weights = subsample_weights(data, c_final, subsamples, fraction, cfg_.seed, cv.standardize, cv.svm);
    const auto summary = component_weight_summary(weights, channel_names);

    json config = {{"cv", to_json(cv)}, {"subsample_count", subsamples}, {"subsample_fraction", fraction}};
    const std::string hash = config_hash(config);
    json doc = to_json(report, data);
    doc["format_version"] = formats::kReport;
    doc["config"] = config;
    doc["config_hash"] = hash;
    doc["class_names"] = {{"negative", data.class_names[0]}, {"positive", data.class_names[1]}};
    doc["weight_summary_c"] = c_final;
    doc["assumptions"] = {{"inner_cv", "stratified"}, {"standardize", cv.standardize}};
    doc["feature_count"] = table.column_names.size();
    write_json(out_path("report.json"), doc);

    CsvWriter w(formats::kWeightSummary, {{"config", hash}, {"c", format_double(c_final)},
                                          {"subsamples", std::to_string(subsamples)}});
    w.header({"rank", "component", "median", "mean", "min", "max"});
    for (std::size_t r = 0; r < summary.size(); ++r) {
      const auto [mn, mx] = std::minmax_element(summary[r].values.begin(), summary[r].values.end());
      w.row({std::to_string(r + 1), summary[r].name, format_double(summary[r].median), format_double(summary[r].mean),
             format_double(*mn), format_double(*mx)});
    }
    write_text(out_path("weight_summary.csv"), w.str());
    out_ << "leave-one-out accuracy " << report.accuracy << " over " << data.video_ids.size() << " videos\n";
    return 0;
  }

  // -------------------------------------------------------------------------
  struct SynthArgs {
    std::string kind, topology;
    int atoms = 12, samples = 2000, active = 3;
    double noise = 0.01, min_mag = 0.5, max_mag = 2.0;
    int videos_per_class = 30, bu = 5, frames = 600, lag = 3;
    double fps = 30.0, coupling = 0.9, series_noise = 0.1;
    bool null_control = false;
  } synth_;

  void add_synth(CLI::App& app) {
    auto* sub = app.add_subcommand("synth", "Write synthetic corpora, labeled series or the default topology");
    sub->add_option("--kind", synth_.kind, "corpus | series | topology")->required()->check(CLI::IsMember({"corpus", "series", "topology"}));
    sub->add_option("--topology", synth_.topology, "Landmark topology JSON (default: iBUG-51)");
    sub->add_option("--atoms", synth_.atoms, "corpus: planted atoms");
    sub->add_option("--samples", synth_.samples, "corpus: number of samples");
    sub->add_option("--active", synth_.active, "corpus: active atoms per sample");
    sub->add_option("--noise", synth_.noise, "corpus: Gaussian noise sigma");
    sub->add_option("--min-magnitude", synth_.min_mag, "corpus: smallest |coefficient|");
    sub->add_option("--max-magnitude", synth_.max_mag, "corpus: largest |coefficient|");
    sub->add_option("--videos-per-class", synth_.videos_per_class, "series: videos per class");
    sub->add_option("--bu", synth_.bu, "series: BU channels per video");
    sub->add_option("--frames", synth_.frames, "series: frames per video");
    sub->add_option("--fps", synth_.fps, "series: frame rate");
    sub->add_option("--lag", synth_.lag, "series: coupling lag in frames");
    sub->add_option("--coupling", synth_.coupling, "series: coupling strength in class A");
    sub->add_option("--series-noise", synth_.series_noise, "series: additive noise sigma");
    sub->add_flag("--null", synth_.null_control, "series: no coupling in either class");
    sub->callback([this] { dispatch_ = [this] { return cmd_synth(); }; });
  }

  int cmd_synth() {
    if (synth_.kind == "topology") {
      write_json(out_path("topology.json"), to_json(topology(synth_.topology)));
      out_ << "wrote topology.json\n";
      return 0;
    }
    if (synth_.kind == "corpus") {
      SynthSpec spec;
      spec.topology = topology(synth_.topology);
      spec.planted_atom_count = synth_.atoms;
      spec.samples = synth_.samples;
      spec.active_atoms_per_sample = synth_.active;
      spec.noise_sigma = synth_.noise;
      spec.min_magnitude = synth_.min_mag;
      spec.max_magnitude = synth_.max_mag;
      spec.seed = cfg_.seed;
      const auto corpus = generate_planted_corpus(spec);
      const std::vector<std::pair<std::string, std::string>> meta{{"seed", std::to_string(cfg_.seed)}};
      write_text(out_path("corpus.csv"), corpus_csv(corpus.samples, spec.topology.landmark_count(), meta));
      save_dictionary(out_path("truth.json"), corpus.truth, {{"synthetic", true}, {"seed", cfg_.seed}});
      CsvWriter w(formats::kCodes, meta);
      w.header(corpus.truth.atom_names());
      for (Index r = 0; r < corpus.codes.rows(); ++r) w.numeric_row(corpus.codes.row(r));
      write_text(out_path("true_codes.csv"), w.str());
      out_ << "wrote corpus.csv (" << corpus.samples.rows() << " samples), truth.json, true_codes.csv\n";
      return 0;
    }
    LabeledSeriesSpec spec;
    spec.videos_per_class = synth_.videos_per_class;
    spec.bu_channels = synth_.bu;
    spec.frames = synth_.frames;
    spec.frame_rate = synth_.fps;
    spec.lag_frames = synth_.lag;
    spec.coupling = synth_.coupling;
    spec.noise_sigma = synth_.series_noise;
    spec.couple_class_a = !synth_.null_control;
    spec.seed = cfg_.seed;
    const auto videos = generate_labeled_series(spec);
    std::vector<std::string> bu_names;
    for (int k = 1; k <= spec.bu_channels; ++k) bu_names.push_back("z" + std::to_string(k));
    CsvWriter labels(formats::kLabels, {{"seed", std::to_string(cfg_.seed)}});
    labels.header({"video_id", "label"});
    for (const auto& v : videos) {
      write_text(out_path(v.video_id + ".coefficients.csv"), coefficients_csv(v.series, bu_names, "synthetic"));
      labels.row({v.video_id, v.label > 0 ? "A" : "B"});
    }
    write_text(out_path("labels.csv"), labels.str());
    out_ << "wrote " << videos.size() << " coefficient series and labels.csv\n";
    return 0;
  }

  // -------------------------------------------------------------------------
  std::string validate_dictionary_path_;

  void add_validate(CLI::App& app) {
    auto* sub = app.add_subcommand("validate", "Check dictionary invariants");
    sub->add_option("--dictionary", validate_dictionary_path_, "Dictionary JSON")->required();
    sub->callback([this] { dispatch_ = [this] { return cmd_validate(); }; });
  }

  int cmd_validate() {
    const auto file = load_dictionary(validate_dictionary_path_);
    const auto report = validate_dictionary(file.dictionary);
    for (const auto& issue : report) out_ << issue.message << "\n";
    if (report.empty()) {
      out_ << "valid: " << file.dictionary.atom_count() << " atoms\n";
      return 0;
    }
    out_ << report.size() << " violation(s)\n";
    return static_cast<int>(ExitCode::kInputError);
  }

  std::ostream& out_;
  std::ostream& err_;
  GlobalOptions globals_;
  PipelineConfig cfg_;
  std::function<int()> dispatch_;
};

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return Runner(out, err).run(args);
}

}  // namespace facial_basis::cli
