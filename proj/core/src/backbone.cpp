#include "disents/backbone.hpp"

#include <algorithm>

#include "disents/error.hpp"

namespace disents {

namespace {
constexpr double kInitStd = 0.02;
}

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::Linear: return "linear";
    case BackboneKind::DecompLinear: return "decomp-linear";
    case BackboneKind::Mlp: return "mlp";
  }
  return "unknown";
}

BackboneKind parse_backbone_kind(std::string_view name) {
  if (name == "linear") return BackboneKind::Linear;
  if (name == "decomp-linear") return BackboneKind::DecompLinear;
  if (name == "mlp") return BackboneKind::Mlp;
  throw ConfigError("unknown backbone kind '" + std::string(name) +
                    "' (expected linear, decomp-linear or mlp)");
}

void BackboneConfig::validate() const {
  if (lookback < 1) throw ConfigError("lookback must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (kind == BackboneKind::Mlp && hidden < 1) throw ConfigError("mlp hidden width must be >= 1");
  if (kind == BackboneKind::DecompLinear) {
    if (decomp_kernel % 2 == 0) throw ConfigError("decomp kernel must be odd");
    if (decomp_kernel > lookback) {
      throw ConfigError("decomp kernel " + std::to_string(decomp_kernel) + " exceeds lookback " +
                        std::to_string(lookback));
    }
  }
}

Backbone::Backbone(const BackboneConfig& config, Rng& init) : config_(config) {
  config_.validate();
  const std::size_t L = config_.lookback, H = config_.horizon;
  auto weight = [&](Shape s) { return Var::parameter(init.normal_tensor(std::move(s), kInitStd)); };
  auto bias = [](std::size_t n) { return Var::parameter(Tensor::zeros({n})); };
  switch (config_.kind) {
    case BackboneKind::Linear:
      params_ = {{"weight", weight({L, H})}, {"bias", bias(H)}};
      break;
    case BackboneKind::DecompLinear:
      params_ = {{"trend_weight", weight({L, H})},
                 {"trend_bias", bias(H)},
                 {"seasonal_weight", weight({L, H})},
                 {"seasonal_bias", bias(H)}};
      trend_operator_ = moving_average_operator(L, config_.decomp_kernel);
      break;
    case BackboneKind::Mlp:
      params_ = {{"w1", weight({L, config_.hidden})},
                 {"b1", bias(config_.hidden)},
                 {"w2", weight({config_.hidden, H})},
                 {"b2", bias(H)}};
      break;
  }
}

Var Backbone::param(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.var;
  throw ContractError("backbone has no parameter '" + std::string(name) + "'");
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

Var Backbone::forecast_rows(const Var& x, bool /*training*/) const {
  if (x.value().rank() != 2 || x.dim(1) != config_.lookback) {
    throw ShapeError("backbone expects [rows, " + std::to_string(config_.lookback) + "], got " +
                     shape_str(x.shape()));
  }
  switch (config_.kind) {
    case BackboneKind::Linear:
      return linear_forward(x, params_[0].var, params_[1].var);
    case BackboneKind::DecompLinear:
      return decomp_linear_forward(
          x, DecompParams{params_[0].var, params_[1].var, params_[2].var, params_[3].var},
          trend_operator_);
    case BackboneKind::Mlp:
      return mlp_forward(x, MlpParams{params_[0].var, params_[1].var, params_[2].var, params_[3].var});
  }
  throw ContractError("unreachable backbone kind");
}

Var Backbone::forecast_batch(const Var& x, bool training) const {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != config_.lookback) {
    throw ShapeError("backbone expects [B, C, " + std::to_string(config_.lookback) + "], got " +
                     shape_str(s));
  }
  Var rows = ops::reshape(x, {s[0] * s[1], s[2]});
  return ops::reshape(forecast_rows(rows, training), {s[0], s[1], config_.horizon});
}

Var linear_forward(const Var& x, const Var& weight, const Var& bias) {
  if (weight.value().rank() != 2 || bias.shape() != Shape{weight.dim(1)}) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + " and bias " +
                     shape_str(bias.shape()) + " are inconsistent");
  }
  return ops::add(ops::matmul(x, weight), bias);
}

Tensor moving_average_operator(std::size_t length, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("moving-average kernel must be odd");
  if (kernel > length) throw ConfigError("moving-average kernel exceeds series length");
  Tensor a({length, length});
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto last = static_cast<std::ptrdiff_t>(length) - 1;
  const double w = 1.0 / static_cast<double>(kernel);
  for (std::ptrdiff_t t = 0; t <= last; ++t) {
    for (std::ptrdiff_t j = -half; j <= half; ++j) {
      const auto src = std::clamp<std::ptrdiff_t>(t + j, 0, last);
      a.at(static_cast<std::size_t>(src), static_cast<std::size_t>(t)) += w;
    }
  }
  return a;
}

Var decomp_linear_forward(const Var& x, const DecompParams& p, const Tensor& trend_operator) {
  if (trend_operator.rank() != 2 || x.dim(1) != trend_operator.dim(0)) {
    throw ShapeError("decomp-linear: trend operator " + shape_str(trend_operator.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  Var trend = ops::matmul(x, Var::constant(trend_operator));
  Var seasonal = ops::sub(x, trend);
  return ops::add(linear_forward(trend, p.trend_weight, p.trend_bias),
                  linear_forward(seasonal, p.seasonal_weight, p.seasonal_bias));
}

Var mlp_forward(const Var& x, const MlpParams& p) {
  Var hidden = ops::gelu(linear_forward(x, p.w1, p.b1));
  return linear_forward(hidden, p.w2, p.b2);
}

}  // namespace disents
