#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "disents/tensor.hpp"

namespace disents {

/// Multivariate series stored time-major: values is [T, C].
struct SeriesDataset {
  Tensor values;
  std::vector<std::string> channel_names;
  std::vector<int> group_labels;  // synthetic data only; empty otherwise

  std::size_t length() const { return values.rank() == 2 ? values.dim(0) : 0; }
  std::size_t channels() const { return values.rank() == 2 ? values.dim(1) : 0; }
};

/// Reads a header + numeric-rows CSV. A leading timestamp column is dropped
/// when its header is "date" or its first data cell is not a number.
SeriesDataset load_csv(const std::filesystem::path& path);
/// Writes the header and one row per time step (no timestamp column).
void write_csv(const SeriesDataset& ds, const std::filesystem::path& path);
/// Sidecar "channel_name,group" file used for routing purity.
void write_labels(const SeriesDataset& ds, const std::filesystem::path& path);
/// Labels in the dataset's channel order; throws ParseError on unknown or
/// missing channels.
std::vector<int> read_labels(const std::filesystem::path& path,
                             const std::vector<std::string>& channel_names);

struct WindowSpec {
  std::size_t lookback = 96;
  std::size_t horizon = 24;
  std::size_t stride = 1;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double test_fraction = 0.2;

  void validate() const;
};

/// Input/target batch: x is [B, C, lookback], y is [B, C, horizon].
struct Batch {
  Tensor x;
  Tensor y;
};

/// Sliding windows over one split, materialized on demand.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const Tensor> series, std::size_t lookback, std::size_t horizon,
            std::size_t stride);

  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::size_t channels() const { return series_ ? series_->dim(1) : 0; }
  std::size_t lookback() const noexcept { return lookback_; }
  std::size_t horizon() const noexcept { return horizon_; }
  /// First time index of window i.
  std::size_t start(std::size_t i) const { return i * stride_; }

  /// Window i as x [C, lookback], y [C, horizon].
  Batch window(std::size_t i) const;
  Batch batch(std::span<const std::size_t> indices) const;
  /// Windows [first, first + count).
  Batch batch_range(std::size_t first, std::size_t count) const;

 private:
  std::shared_ptr<const Tensor> series_;
  std::size_t lookback_ = 0, horizon_ = 0, stride_ = 1, count_ = 0;
};

/// Throws ConfigError if the split is shorter than lookback + horizon.
WindowSet sliding_windows(const Tensor& split, std::size_t lookback, std::size_t horizon,
                          std::size_t stride = 1);

struct StandardizedSplits {
  Tensor train, val, test;  // [T_split, C]; val/test carry `lookback` rows of leading context
  std::vector<double> mean, stdev;  // train-split statistics per channel
};

/// Chronological split, z-scored with train-only statistics (std floor 1e-8).
StandardizedSplits split_standardize(const SeriesDataset& ds, const WindowSpec& spec);

struct DataSplits {
  WindowSet train, val, test;
  std::vector<double> mean, stdev;
};

DataSplits make_splits(const SeriesDataset& ds, const WindowSpec& spec);

struct GroupSpec {
  double period = 24.0;
  double amplitude = 1.0;
  double slope = 0.0;
  double phase_jitter = 3.141592653589793;  // channel phase ~ U[-jitter, jitter]
  int sign = 1;
};

struct SynthConfig {
  std::vector<GroupSpec> groups;
  std::size_t length = 4000;
  std::size_t channels_per_group = 4;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One generated channel: the `member`-th channel of `group`. A channel's
/// values depend only on (seed, group, member), never on its position.
struct ChannelSlot {
  std::size_t group = 0;
  std::size_t member = 0;
};

/// Two sign-opposed groups (periods 24/36), 4 channels each, T = 4000.
SynthConfig default_synth_config();
/// Four groups, 4 channels each, for expert-count sweeps.
SynthConfig four_group_synth_config();

/// Group-major layout: group 0's channels first.
SeriesDataset synth_generate(const SynthConfig& cfg);
SeriesDataset synth_generate(const SynthConfig& cfg, std::span<const ChannelSlot> layout);

/// Fraction of channels whose argmax expert (ties -> lowest index) equals the
/// majority argmax of their group. beta_mean is [C, K].
double routing_purity(const Tensor& beta_mean, std::span<const int> group_labels);

}  // namespace disents
