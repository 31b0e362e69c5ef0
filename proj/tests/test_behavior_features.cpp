#include <gtest/gtest.h>

#include <random>

#include "facial_basis/behavior_features.hpp"
#include "oracles.hpp"

using namespace facial_basis;

namespace {

// 10 fps keeps windows short: 4 s window = 40 frames, 1 s lag = 10 frames.
constexpr double kFps = 10.0;

CoefficientSeries make_series(const Matrix& channels) {
  const Index q = channels.cols();
  return CoefficientSeries(kFps, channels.leftCols(q - 3), channels.rightCols(3));
}

Matrix smooth_noise(Index frames, Index q, std::mt19937_64& rng) {
  Matrix x = oracle::random_matrix(frames, q, rng);
  for (Index t = 1; t < frames; ++t) x.row(t) = 0.7 * x.row(t - 1) + x.row(t);
  return x;
}

}  // namespace

TEST(WccFrames, ConvertsSecondsToFrames) {
  const WccConfig cfg;
  const auto f = WccFrames::from(cfg, 30.0);
  EXPECT_EQ(f.window, 120);
  EXPECT_EQ(f.stride, 60);
  EXPECT_EQ(f.max_lag, 30);
  EXPECT_EQ(f.lags().size(), 61u);
  EXPECT_EQ(f.lags()[1], -1);
  EXPECT_EQ(f.lags()[2], 1);
}

TEST(WccFrames, RejectsLagNotShorterThanWindow) {
  WccConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.lag_range_seconds = 1.0;
  EXPECT_THROW(WccFrames::from(cfg, 30.0), ConfigError);
  cfg.lag_step_frames = 0;
  EXPECT_THROW(WccFrames::from(cfg, 30.0), ConfigError);
}

TEST(WindowWcc, DuplicatedChannelIsOne) {
  std::mt19937_64 rng(1);
  Matrix x = smooth_noise(40, 6, rng);
  x.col(4) = x.col(1);
  const Matrix m = window_wcc(make_series(x), WccConfig{}, 0);
  EXPECT_EQ(m(1, 4), 1.0);
  EXPECT_EQ(m(4, 1), 1.0);
  for (Index i = 0; i < 6; ++i) EXPECT_EQ(m(i, i), 1.0);
}

TEST(WindowWcc, ThreeFrameShiftGivesUnitCorrelation) {
  std::mt19937_64 rng(2);
  Matrix x = smooth_noise(43, 5, rng);
  Matrix w(40, 5);
  w = x.topRows(40);
  w.col(3) = x.col(0).segment(0, 40);
  w.col(0) = x.col(0).segment(3, 40);  // channel 0 leads channel 3 by 3 frames
  for (double lag_seconds : {0.3, 0.5, 1.0}) {
    WccConfig cfg;
    cfg.lag_range_seconds = lag_seconds;
    const Matrix m = window_wcc(make_series(w), cfg, 0);
    EXPECT_GE(m(0, 3), 1.0 - 1e-10);
    EXPECT_GE(m(3, 0), 1.0 - 1e-10);
  }
  WccConfig short_lag;
  short_lag.lag_range_seconds = 0.2;
  EXPECT_LT(window_wcc(make_series(w), short_lag, 0)(0, 3), 0.999);
}

TEST(WindowWcc, MatchesDirectOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix w = smooth_noise(40, 5, rng);
    WccConfig cfg;
    cfg.lag_step_frames = 1 + trial % 3;
    const Matrix got = window_wcc(make_series(w), cfg, 0);
    const Matrix want = oracle::wcc_direct(w, 10, cfg.lag_step_frames);
    EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-10) << "trial " << trial;
  }
}

TEST(WindowWcc, ConstantChannelGivesZeroRowAndColumn) {
  std::mt19937_64 rng(4);
  Matrix w = smooth_noise(40, 5, rng);
  w.col(2).setConstant(0.25);
  const Matrix m = window_wcc(make_series(w), WccConfig{}, 0);
  EXPECT_TRUE(m.row(2).isZero(0.0));
  EXPECT_TRUE(m.col(2).isZero(0.0));
  EXPECT_EQ(m(0, 0), 1.0);
}

TEST(WindowWcc, InvariantToPositiveAffineRescaling) {
  std::mt19937_64 rng(5);
  const Matrix w = smooth_noise(40, 5, rng);
  Matrix scaled = w;
  scaled.col(1) = 3.0 * w.col(1).array() + 7.0;
  scaled.col(4) = 0.01 * w.col(4).array() - 2.0;
  const Matrix a = window_wcc(make_series(w), WccConfig{}, 0);
  const Matrix b = window_wcc(make_series(scaled), WccConfig{}, 0);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WindowWcc, ChannelPermutationPermutesMatrix) {
  std::mt19937_64 rng(6);
  const Matrix w = smooth_noise(40, 6, rng);
  const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
  Matrix p(40, 6);
  for (Index c = 0; c < 6; ++c) p.col(c) = w.col(perm[static_cast<std::size_t>(c)]);
  const Matrix a = window_wcc(make_series(w), WccConfig{}, 0);
  const Matrix b = window_wcc(make_series(p), WccConfig{}, 0);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j)
      EXPECT_NEAR(b(i, j), a(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]), 1e-12);
}

TEST(WindowWcc, StartOutOfRangeIsInputError) {
  std::mt19937_64 rng(7);
  EXPECT_THROW(window_wcc(make_series(smooth_noise(40, 5, rng)), WccConfig{}, 1), InputError);
}

TEST(VideoFeatures, SingleWindowEqualsFlattenedMatrix) {
  std::mt19937_64 rng(8);
  const auto s = make_series(smooth_noise(45, 5, rng));
  const auto f = video_features(s, WccConfig{});
  ASSERT_EQ(f.window_count, 1);
  const Matrix m = window_wcc(s, WccConfig{}, 0);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) EXPECT_EQ(f.values[i * 5 + j], m(i, j));
}

TEST(VideoFeatures, AveragesOverWindows) {
  std::mt19937_64 rng(9);
  const auto s = make_series(smooth_noise(100, 5, rng));
  const auto f = video_features(s, WccConfig{});
  // 4 s windows with 2 s stride over 10 s: starts at 0, 20, 40, 60
  ASSERT_EQ(f.window_count, 4);
  Matrix mean = Matrix::Zero(5, 5);
  for (Index start : {0, 20, 40, 60}) mean += window_wcc(s, WccConfig{}, start);
  mean /= 4.0;
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(f.values[i * 5 + j], mean(i, j), 1e-15);
}

TEST(VideoFeatures, IdenticalWindowsAverageToThatWindow) {
  std::mt19937_64 rng(10);
  const Matrix block = smooth_noise(20, 5, rng);
  Matrix x(60, 5);
  x << block, block, block;
  const auto s = make_series(x);
  WccConfig cfg;
  cfg.window_seconds = 2.0;
  cfg.window_stride_seconds = 2.0;
  cfg.lag_range_seconds = 0.5;
  const auto f = video_features(s, cfg);
  ASSERT_EQ(f.window_count, 3);
  const Matrix m = window_wcc(s, cfg, 0);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(f.values[i * 5 + j], m(i, j), 1e-15);
}

TEST(VideoFeatures, FiftyAtomsGive2809Features) {
  std::mt19937_64 rng(11);
  const auto s = make_series(smooth_noise(50, 53, rng));
  const auto f = video_features(s, WccConfig{});
  EXPECT_EQ(f.values.size(), 2809);
  EXPECT_EQ(f.channel_names.size(), 53u);
  EXPECT_EQ(f.channel_names.front(), "z1");
  EXPECT_EQ(f.channel_names.back(), "roll");
}

TEST(VideoFeatures, ShortVideoIsInputError) {
  std::mt19937_64 rng(12);
  EXPECT_THROW(video_features(make_series(smooth_noise(39, 5, rng)), WccConfig{}), InputError);
}

TEST(VideoFeatures, ChannelSelection) {
  std::mt19937_64 rng(13);
  const auto s = make_series(smooth_noise(60, 6, rng));
  WccConfig cfg;
  cfg.selected_channels = std::vector<int>{0, 5};
  const auto f = video_features(s, cfg);
  ASSERT_EQ(f.values.size(), 4);
  const auto full = video_features(s, WccConfig{});
  EXPECT_EQ(f.values[1], full.values[0 * 6 + 5]);
  EXPECT_EQ(f.channel_names, (std::vector<std::string>{"z1", "roll"}));
}

TEST(VideoFeatures, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(14);
  const auto s = make_series(smooth_noise(300, 8, rng));
  EXPECT_EQ(video_features(s, WccConfig{}, {}, 1).values, video_features(s, WccConfig{}, {}, 4).values);
}

TEST(ChannelPairs, RowMajorOrder) {
  const auto pairs = channel_pair_index(3);
  ASSERT_EQ(pairs.size(), 9u);
  EXPECT_EQ(pairs[1], (std::pair<Index, Index>{0, 1}));
  EXPECT_EQ(pairs[3], (std::pair<Index, Index>{1, 0}));
}
