#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "disents/data.hpp"
#include "disents/pipeline.hpp"

namespace disents {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::size_t eval_threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_lfc = 0.0;
  double train_lsc = 0.0;
  double val_mse = 0.0;
  std::vector<double> epsilon;  // mean over the epoch's steps, per expert
  double elapsed_s = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  std::uint64_t steps = 0;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> per_channel_mse;
  std::size_t windows = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch loop over shuffled training batches (last partial batch kept) with
/// early stopping on validation MSE; the best-validation state is restored
/// before returning.
FitResult fit(DisenTSModel& model, const DataSplits& splits, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

/// Eval-mode metrics over every window of `windows`. Batches may be spread
/// over `threads` workers; results do not depend on the thread count.
Metrics evaluate(const DisenTSModel& model, const WindowSet& windows, std::size_t batch_size = 32,
                 std::size_t threads = 1);

/// Mean routing signal per channel over all windows: [C, K].
Tensor mean_routing(const DisenTSModel& model, const WindowSet& windows, std::size_t batch_size = 32);

struct BaselineResult {
  Metrics metrics;
  FitResult fit;
};

/// One normalized backbone trained on all channels with the same data and
/// optimizer settings as DisenTS.
BaselineResult unified_baseline(const DataSplits& splits, const BackboneConfig& backbone,
                                const TrainConfig& cfg, std::uint64_t model_seed);

/// Worker count from DISENTS_THREADS (default 1, capped at hardware threads).
std::size_t threads_from_env();

}  // namespace disents
