#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <thread>

#include "disents/error.hpp"
#include "disents/trainer.hpp"
#include "test_util.hpp"

namespace disents {
namespace {

constexpr std::size_t kL = 16, kH = 8;

DataSplits small_splits(std::uint64_t seed = 0) {
  SynthConfig sc = default_synth_config();
  sc.length = 600;
  sc.seed = seed;
  WindowSpec ws;
  ws.lookback = kL;
  ws.horizon = kH;
  return make_splits(synth_generate(sc), ws);
}

ModelConfig small_model(std::size_t experts = 2) {
  ModelConfig c;
  c.backbone.lookback = kL;
  c.backbone.horizon = kH;
  c.experts = experts;
  c.d_model = 16;
  c.heads = 2;
  return c;
}

TrainConfig quick(std::size_t epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.patience = 100;
  t.lr = 5e-3;
  return t;
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.lr = -1.0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Fit, PatienceZeroRunsOneEpoch) {
  DataSplits s = small_splits();
  DisenTSModel m(small_model());
  TrainConfig t = quick(5);
  t.patience = 0;
  FitResult r = fit(m, s, t);
  EXPECT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Fit, HistoryAndImprovement) {
  DataSplits s = small_splits();
  DisenTSModel m(small_model());
  const double initial = evaluate(m, s.val).mse;
  std::size_t calls = 0;
  FitResult r = fit(m, s, quick(3), [&](const EpochRecord& e) {
    ++calls;
    EXPECT_EQ(e.epoch, calls);
    EXPECT_EQ(e.epsilon.size(), 2u);
  });
  EXPECT_EQ(r.history.size(), 3u);
  EXPECT_EQ(calls, 3u);
  const std::size_t per_epoch = (s.train.size() + 31) / 32;
  EXPECT_EQ(r.steps, 3 * per_epoch);
  EXPECT_LT(r.history.back().val_mse, initial);
  // the restored model is the best epoch's model
  EXPECT_DOUBLE_EQ(evaluate(m, s.val).mse, r.best_val_mse);
}

TEST(Fit, EmptySplitRejected) {
  DataSplits s = small_splits();
  s.val = WindowSet();
  DisenTSModel m(small_model());
  EXPECT_THROW(fit(m, s, quick()), ConfigError);
  EXPECT_THROW(evaluate(m, WindowSet()), ConfigError);
}

TEST(Fit, SameSeedSameRun) {
  DataSplits s = small_splits();
  auto run = [&] {
    DisenTSModel m(small_model());
    TrainConfig t = quick();
    t.seed = 4;
    FitResult r = fit(m, s, t);
    return std::pair(r.history.back().train_lfc, evaluate(m, s.test).mse);
  };
  EXPECT_EQ(run(), run());
}

// Ramp windows normalize to the same shape, so a zero-weight backbone whose
// bias is the normalized continuation forecasts every window exactly.
TEST(Evaluate, PerfectPredictorScoresZero) {
  SeriesDataset ds;
  ds.values = Tensor({300, 2});
  for (std::size_t t = 0; t < 300; ++t) {
    ds.values.at(t, 0) = 0.5 * static_cast<double>(t);
    ds.values.at(t, 1) = 2.0 * static_cast<double>(t) - 7.0;
  }
  ds.channel_names = {"slow", "fast"};
  WindowSpec ws;
  ws.lookback = kL;
  ws.horizon = kH;
  DataSplits s = make_splits(ds, ws);

  ModelConfig mc = small_model(1);
  mc.unified = true;
  mc.eps_norm = 1e-15;  // the default eps leaves a ~1e-5 scale mismatch between channels
  DisenTSModel m(mc);
  Tensor probe({1, 1, kL + kH});
  for (std::size_t t = 0; t < kL + kH; ++t) probe[t] = static_cast<double>(t);
  Stationarized n = m.stationarizer().stationarize(Tensor({1, 1, kL}, std::vector<double>(probe.data().begin(), probe.data().begin() + kL)));
  Tensor bias({kH});
  for (std::size_t h = 0; h < kH; ++h)
    bias[h] = (probe[kL + h] - n.mean[0]) / (n.stdev[0] + m.stationarizer().eps());
  m.backbones()[0].param("weight").mutable_value().fill(0.0);
  m.backbones()[0].param("bias").mutable_value() = bias;

  Metrics r = evaluate(m, s.test);
  EXPECT_LE(r.mse, 1e-20);
  EXPECT_LE(r.mae, 1e-10);
}

TEST(Evaluate, AccountingThreadsAndPurity) {
  DataSplits s = small_splits();
  DisenTSModel m(small_model());
  Metrics a = evaluate(m, s.test, 7, 1);
  Metrics b = evaluate(m, s.test, 7, 3);
  Metrics c = evaluate(m, s.test, 7, 1);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.per_channel_mse, b.per_channel_mse);
  EXPECT_EQ(a.mse, c.mse);
  EXPECT_EQ(a.mae, c.mae);
  EXPECT_EQ(a.windows, s.test.size());
  ASSERT_EQ(a.per_channel_mse.size(), 8u);
  const double mean_pc = std::accumulate(a.per_channel_mse.begin(), a.per_channel_mse.end(), 0.0) / 8.0;
  EXPECT_NEAR(mean_pc, a.mse, 1e-10);
}

TEST(Evaluate, StandardizedTargetsHaveUnitScale) {
  // Squared standardized targets average to about the target variance, the
  // score of an all-zero forecast.
  SynthConfig sc = default_synth_config();
  sc.groups[0].slope = sc.groups[1].slope = 0.0;
  WindowSpec ws;
  ws.lookback = kL;
  ws.horizon = kH;
  DataSplits s = make_splits(synth_generate(sc), ws);
  Batch all = s.test.batch_range(0, s.test.size());
  double sq = 0.0;
  for (double v : all.y.data()) sq += v * v;
  EXPECT_NEAR(sq / static_cast<double>(all.y.size()), 1.0, 0.1);
}

TEST(MeanRouting, RowsSumToOne) {
  DataSplits s = small_splits();
  DisenTSModel m(small_model(3));
  Tensor b = mean_routing(m, s.test);
  ASSERT_EQ(b.shape(), (Shape{8, 3}));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(b.at(c, 0) + b.at(c, 1) + b.at(c, 2), 1.0, 1e-9);
}

TEST(UnifiedBaseline, MatchesSingleExpertWithoutSimilarity) {
  DataSplits s = small_splits();
  TrainConfig t = quick();
  t.seed = 2;
  BaselineResult base = unified_baseline(s, small_model(1).backbone, t, 5);

  ModelConfig mc = small_model(1);
  mc.loss.lambda = 0.0;
  mc.seed = 5;
  DisenTSModel m(mc);
  fit(m, s, t);
  Metrics direct = evaluate(m, s.test);
  EXPECT_EQ(base.metrics.mse, direct.mse);
  EXPECT_EQ(base.metrics.per_channel_mse, direct.per_channel_mse);

  BaselineResult again = unified_baseline(s, small_model(1).backbone, t, 5);
  EXPECT_EQ(again.metrics.mse, base.metrics.mse);
}

TEST(Threads, EnvironmentCap) {
  ::setenv("DISENTS_THREADS", "1", 1);
  EXPECT_EQ(threads_from_env(), 1u);
  ::setenv("DISENTS_THREADS", "100000", 1);
  EXPECT_GE(threads_from_env(), 1u);
  EXPECT_LE(threads_from_env(), std::max(1u, std::thread::hardware_concurrency()));
  ::unsetenv("DISENTS_THREADS");
  EXPECT_EQ(threads_from_env(), 1u);
}

}  // namespace
}  // namespace disents
