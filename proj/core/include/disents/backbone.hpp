#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "disents/autodiff.hpp"
#include "disents/random.hpp"

namespace disents {

enum class BackboneKind { Linear, DecompLinear, Mlp };

std::string_view to_string(BackboneKind kind);
/// Accepts "linear", "decomp-linear", "mlp"; throws ConfigError otherwise.
BackboneKind parse_backbone_kind(std::string_view name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Linear;
  std::size_t lookback = 96;
  std::size_t horizon = 24;
  std::size_t hidden = 64;          // mlp only
  std::size_t decomp_kernel = 25;   // decomp-linear only, odd

  void validate() const;
};

/// Channel-independent forecaster: maps every row of [rows, lookback] to
/// [rows, horizon] with the same function.
class Backbone {
 public:
  /// Weights ~ N(0, 0.02^2), biases zero, drawn from `init`.
  Backbone(const BackboneConfig& config, Rng& init);

  const BackboneConfig& config() const noexcept { return config_; }

  Var forecast_rows(const Var& x, bool training = false) const;
  /// [B, C, lookback] -> [B, C, horizon].
  Var forecast_batch(const Var& x, bool training = false) const;

  /// Parameters in a fixed order; names are stable checkpoint keys.
  const ParamSet& parameters() const noexcept { return params_; }
  Var param(std::string_view name) const;
  std::size_t parameter_count() const;

 private:
  BackboneConfig config_;
  ParamSet params_;
  Tensor trend_operator_;  // decomp-linear only
};

/// y = x * weight + bias.
Var linear_forward(const Var& x, const Var& weight, const Var& bias);

/// [L, L] matrix A such that x * A is the centered moving average of each
/// row of x, with the series padded at both ends by edge replication.
Tensor moving_average_operator(std::size_t length, std::size_t kernel);

struct DecompParams {
  Var trend_weight, trend_bias, seasonal_weight, seasonal_bias;
};
/// trend = moving average of x, seasonal = x - trend; each mapped by its own
/// linear layer and summed.
Var decomp_linear_forward(const Var& x, const DecompParams& params, const Tensor& trend_operator);

struct MlpParams {
  Var w1, b1, w2, b2;
};
/// gelu(x * w1 + b1) * w2 + b2.
Var mlp_forward(const Var& x, const MlpParams& params);

}  // namespace disents
