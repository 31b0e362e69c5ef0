#pragma once

// Windowed cross-correlation (WCC) features of a Q-channel behavioral series.
//
// For a window of W frames starting at s and a lag tau >= 0, channel i is
// compared with channel j shifted forward by tau using only samples inside
// the window:  x_i[s .. s+W-tau-1]  vs  x_j[s+tau .. s+W-1]  (negative lags
// swap the roles). Each entry of the Q x Q window matrix is the Pearson
// correlation with the largest magnitude over the symmetric lag set
// {0, -h, +h, -2h, +2h, ...}, sign preserved; earlier lags in that order win
// ties. A channel that is constant over the window has an all-zero row and
// column, diagonal included. Other diagonal entries are exactly 1.
//
// The per-video feature vector is the mean over windows of the row-major
// flattened matrices: feature index i*Q + j holds the pair (i, j).

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"
#include "facial_basis/parallel.hpp"

namespace facial_basis {

struct WccConfig {
  double window_seconds = 4.0;
  std::optional<double> window_stride_seconds;  // window_seconds / 2 when unset
  double lag_range_seconds = 1.0;
  int lag_step_frames = 1;
  std::optional<std::vector<int>> selected_channels;  // indices into the Q channels

  double stride_seconds() const { return window_stride_seconds ? *window_stride_seconds : window_seconds / 2.0; }
};

/// WccConfig converted to frame counts for a given frame rate.
struct WccFrames {
  Index window = 0;
  Index stride = 0;
  Index max_lag = 0;
  Index lag_step = 1;

  static WccFrames from(const WccConfig& cfg, double frame_rate) {
    if (!(cfg.window_seconds > 0.0)) throw ConfigError("wcc: window_seconds must be positive");
    if (!(cfg.stride_seconds() > 0.0)) throw ConfigError("wcc: window stride must be positive");
    if (!(cfg.lag_range_seconds >= 0.0)) throw ConfigError("wcc: lag range must be non-negative");
    if (cfg.lag_step_frames <= 0) throw ConfigError("wcc: lag_step_frames must be positive");
    WccFrames f;
    f.window = static_cast<Index>(std::lround(cfg.window_seconds * frame_rate));
    f.stride = std::max<Index>(1, static_cast<Index>(std::lround(cfg.stride_seconds() * frame_rate)));
    f.max_lag = static_cast<Index>(std::lround(cfg.lag_range_seconds * frame_rate));
    f.lag_step = cfg.lag_step_frames;
    f.validate();
    return f;
  }

  void validate() const {
    if (window < 2) throw ConfigError("wcc: window must span at least 2 frames, got " + std::to_string(window));
    if (stride < 1 || lag_step < 1) throw ConfigError("wcc: stride and lag step must be positive");
    if (max_lag < 0 || max_lag >= window)
      throw ConfigError("wcc: lag range of " + std::to_string(max_lag) + " frames must be below the window length " +
                        std::to_string(window));
  }

  /// Lags in tie-break order: 0, -h, +h, -2h, +2h, ...
  std::vector<Index> lags() const {
    std::vector<Index> out{0};
    for (Index l = lag_step; l <= max_lag; l += lag_step) {
      out.push_back(-l);
      out.push_back(l);
    }
    return out;
  }
};

struct FeatureVector {
  Vector values;  // length Q^2, row-major over (i, j)
  std::vector<std::string> channel_names;
  Index window_count = 0;
};

namespace detail {

/// Pearson correlation of two equal-length segments; 0 when either is constant.
inline double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const Index m = a.size();
  if (m < 2) return 0.0;
  if (a.maxCoeff() == a.minCoeff() || b.maxCoeff() == b.minCoeff()) return 0.0;
  const double ma = a.mean();
  const double mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Index t = 0; t < m; ++t) {
    const double da = a[t] - ma;
    const double db = b[t] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Correlation of x_i[t] with x_j[t + lag] inside the window.
inline double lagged_pearson(const Matrix& window, Index i, Index j, Index lag) {
  const Index w = window.rows();
  const Index m = w - std::abs(lag);
  if (lag >= 0) return pearson(window.col(i).head(m), window.col(j).tail(m));
  return pearson(window.col(i).tail(m), window.col(j).head(m));
}

inline Matrix wcc_matrix(const Matrix& window, const WccFrames& frames) {
  const Index q = window.cols();
  const auto lags = frames.lags();
  Matrix out = Matrix::Zero(q, q);
  std::vector<bool> varies(static_cast<std::size_t>(q));
  for (Index i = 0; i < q; ++i) varies[static_cast<std::size_t>(i)] = window.col(i).maxCoeff() != window.col(i).minCoeff();
  for (Index i = 0; i < q; ++i) {
    if (!varies[static_cast<std::size_t>(i)]) continue;
    out(i, i) = 1.0;
    for (Index j = i + 1; j < q; ++j) {
      if (!varies[static_cast<std::size_t>(j)]) continue;
      double best = 0.0;
      for (Index lag : lags) {
        const double r = lagged_pearson(window, i, j, lag);
        if (std::abs(r) > std::abs(best)) best = r;
      }
      out(i, j) = best;
      out(j, i) = best;
    }
  }
  return out;
}

inline Matrix select_channels(const Matrix& channels, const std::optional<std::vector<int>>& selected) {
  if (!selected) return channels;
  Matrix out(channels.rows(), static_cast<Index>(selected->size()));
  for (std::size_t c = 0; c < selected->size(); ++c) {
    const int idx = (*selected)[c];
    if (idx < 0 || idx >= channels.cols())
      throw ConfigError("wcc: selected channel " + std::to_string(idx) + " out of range");
    out.col(static_cast<Index>(c)) = channels.col(idx);
  }
  return out;
}

}  // namespace detail

/// Default names: z1..zK, then pitch, yaw, roll.
inline std::vector<std::string> default_channel_names(Index bu_count) {
  std::vector<std::string> names;
  for (Index k = 0; k < bu_count; ++k) names.push_back("z" + std::to_string(k + 1));
  names.insert(names.end(), {"pitch", "yaw", "roll"});
  return names;
}

/// Frame offsets of every full window, in order.
inline std::vector<Index> window_starts(Index frame_count, const WccFrames& frames) {
  std::vector<Index> starts;
  for (Index s = 0; s + frames.window <= frame_count; s += frames.stride) starts.push_back(s);
  return starts;
}

/// Q x Q WCC matrix of the window starting at `window_start_frame`.
inline Matrix window_wcc(const CoefficientSeries& series, const WccConfig& cfg, Index window_start_frame) {
  const auto frames = WccFrames::from(cfg, series.frame_rate());
  if (window_start_frame < 0 || window_start_frame + frames.window > series.frame_count())
    throw InputError("window_wcc: window [" + std::to_string(window_start_frame) + ", " +
                     std::to_string(window_start_frame + frames.window) + ") exceeds the " +
                     std::to_string(series.frame_count()) + "-frame series");
  const Matrix channels = detail::select_channels(series.channels(), cfg.selected_channels);
  return detail::wcc_matrix(channels.middleRows(window_start_frame, frames.window), frames);
}

/// Averages the flattened window matrices over all full windows of the video.
inline FeatureVector video_features(const CoefficientSeries& series, const WccConfig& cfg,
                                    std::vector<std::string> channel_names = {}, unsigned threads = 1) {
  const auto frames = WccFrames::from(cfg, series.frame_rate());
  if (series.frame_count() < frames.window)
    throw InputError("video_features: series has " + std::to_string(series.frame_count()) +
                     " frames, at least " + std::to_string(frames.window) + " are required for one window");
  const Matrix channels = detail::select_channels(series.channels(), cfg.selected_channels);
  const Index q = channels.cols();
  if (channel_names.empty()) {
    const auto all = default_channel_names(series.bu_count());
    if (cfg.selected_channels) {
      for (int idx : *cfg.selected_channels) channel_names.push_back(all[static_cast<std::size_t>(idx)]);
    } else {
      channel_names = all;
    }
  }
  if (static_cast<Index>(channel_names.size()) != q)
    throw InputError("video_features: " + std::to_string(channel_names.size()) + " channel names for " +
                     std::to_string(q) + " channels");

  const auto starts = window_starts(series.frame_count(), frames);
  std::vector<Matrix> per_window(starts.size());
  parallel_for(starts.size(), threads, [&](std::size_t w) {
    per_window[w] = detail::wcc_matrix(channels.middleRows(starts[w], frames.window), frames);
  });

  Vector sum = Vector::Zero(q * q);
  for (const auto& m : per_window) {
    // row-major flatten
    for (Index i = 0; i < q; ++i) sum.segment(i * q, q) += m.row(i).transpose();
  }
  FeatureVector out;
  out.values = sum / static_cast<double>(starts.size());
  out.channel_names = std::move(channel_names);
  out.window_count = static_cast<Index>(starts.size());
  return out;
}

/// Feature index f = i*Q + j  ->  (i, j).
inline std::vector<std::pair<Index, Index>> channel_pair_index(Index q) {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(static_cast<std::size_t>(q * q));
  for (Index i = 0; i < q; ++i)
    for (Index j = 0; j < q; ++j) out.emplace_back(i, j);
  return out;
}

}  // namespace facial_basis
