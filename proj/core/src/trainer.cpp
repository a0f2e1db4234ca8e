#include "disents/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <thread>

#include "disents/error.hpp"

namespace disents {

namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kDropoutStream = 12;

struct BatchSums {
  std::vector<double> sq;   // per channel
  std::vector<double> abs;  // per channel
};

BatchSums batch_errors(const DisenTSModel& model, const Batch& b) {
  const ForwardResult r = model.forward(b.x, false);
  const Tensor& p = r.prediction.value();
  const std::size_t B = p.dim(0), C = p.dim(1), H = p.dim(2);
  BatchSums s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < H; ++t) {
        const double d = p.at(n, c, t) - b.y.at(n, c, t);
        s.sq[c] += d * d;
        s.abs[c] += std::abs(d);
      }
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (eval_threads < 1) throw ConfigError("evaluation threads must be >= 1");
}

std::size_t threads_from_env() {
  const char* env = std::getenv("DISENTS_THREADS");
  std::size_t n = 1;
  if (env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = static_cast<std::size_t>(v);
  }
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min(n, hw);
}

Metrics evaluate(const DisenTSModel& model, const WindowSet& windows, std::size_t batch_size,
                 std::size_t threads) {
  if (windows.empty()) throw ConfigError("evaluate: empty split");
  if (batch_size < 1) throw ConfigError("evaluate: batch size must be >= 1");
  const std::size_t n_batches = (windows.size() + batch_size - 1) / batch_size;
  std::vector<BatchSums> partial(n_batches);
  auto run = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t i = worker; i < n_batches; i += workers) {
      const std::size_t first = i * batch_size;
      const std::size_t count = std::min(batch_size, windows.size() - first);
      partial[i] = batch_errors(model, windows.batch_range(first, count));
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, n_batches);
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run, w, threads);
    for (auto& t : pool) t.join();
  }

  const std::size_t C = windows.channels();
  Metrics m;
  m.windows = windows.size();
  m.per_channel_mse.assign(C, 0.0);
  std::vector<double> abs_sum(C, 0.0);
  for (const auto& p : partial)
    for (std::size_t c = 0; c < C; ++c) {
      m.per_channel_mse[c] += p.sq[c];
      abs_sum[c] += p.abs[c];
    }
  const double per_channel = static_cast<double>(windows.size() * windows.horizon());
  double sq_total = 0.0, abs_total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    sq_total += m.per_channel_mse[c];
    abs_total += abs_sum[c];
    m.per_channel_mse[c] /= per_channel;
  }
  m.mse = sq_total / (per_channel * static_cast<double>(C));
  m.mae = abs_total / (per_channel * static_cast<double>(C));
  return m;
}

Tensor mean_routing(const DisenTSModel& model, const WindowSet& windows, std::size_t batch_size) {
  if (windows.empty()) throw ConfigError("mean_routing: empty split");
  const std::size_t C = windows.channels(), K = model.experts();
  Tensor acc({C, K});
  for (std::size_t first = 0; first < windows.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, windows.size() - first);
    const Tensor beta = model.forward(windows.batch_range(first, count).x, false).beta.value();
    for (std::size_t n = 0; n < count; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k) acc.at(c, k) += beta.at(n, c, k);
  }
  for (double& v : acc.data()) v /= static_cast<double>(windows.size());
  return acc;
}

FitResult fit(DisenTSModel& model, const DataSplits& splits, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  if (splits.train.empty() || splits.val.empty()) throw ConfigError("fit: empty train or validation split");

  const Rng root(cfg.seed);
  Rng shuffle = root.derive(kShuffleStream);
  Rng dropout = root.derive(kDropoutStream);
  AdamState opt(model.parameters(), AdamConfig{cfg.lr});

  FitResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  ModelState best = model.snapshot();
  std::size_t since_best = 0;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(splits.train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle.engine());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.epsilon.assign(model.config().unified ? 0 : model.experts(), 0.0);
    std::size_t steps = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      const Batch batch = splits.train.batch(std::span(order).subspan(first, count));
      const StepReport step = train_step(model, batch, opt, dropout);
      rec.train_lfc += step.l_fc;
      rec.train_lsc += step.l_sc;
      for (std::size_t m = 0; m < step.epsilon.size(); ++m) rec.epsilon[m] += step.epsilon[m];
      ++steps;
    }
    result.steps += steps;
    rec.train_lfc /= static_cast<double>(steps);
    rec.train_lsc /= static_cast<double>(steps);
    for (double& e : rec.epsilon) e /= static_cast<double>(steps);
    rec.val_mse = evaluate(model, splits.val, cfg.batch_size, cfg.eval_threads).mse;
    rec.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_mse < result.best_val_mse) {
      result.best_val_mse = rec.val_mse;
      result.best_epoch = epoch;
      best = model.snapshot();
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) break;
  }
  model.restore(best);
  return result;
}

BaselineResult unified_baseline(const DataSplits& splits, const BackboneConfig& backbone,
                                const TrainConfig& cfg, std::uint64_t model_seed) {
  ModelConfig mc;
  mc.backbone = backbone;
  mc.experts = 1;
  mc.unified = true;
  mc.seed = model_seed;
  DisenTSModel model(mc);
  BaselineResult r;
  r.fit = fit(model, splits, cfg);
  r.metrics = evaluate(model, splits.test, cfg.batch_size, cfg.eval_threads);
  return r;
}

}  // namespace disents
