#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "disents/autodiff.hpp"
#include "disents/backbone.hpp"
#include "disents/data.hpp"
#include "disents/gate.hpp"
#include "disents/lwa.hpp"
#include "disents/objectives.hpp"
#include "disents/optim.hpp"

namespace disents {

struct Stationarized {
  Tensor x;      // [B, C, L]
  Tensor mean;   // [B, C, 1]
  Tensor stdev;  // [B, C, 1], population std
};

/// Per-window, per-channel instance normalization and its exact inverse.
class Stationarizer {
 public:
  explicit Stationarizer(double eps = 1e-5) : eps_(eps) {}

  /// x_norm = (x - mean) / (std + eps) over the last axis.
  Stationarized stationarize(const Tensor& x) const;
  /// y * (std + eps) + mean.
  Var destationarize(const Var& y_norm, const Tensor& mean, const Tensor& stdev) const;

  double eps() const noexcept { return eps_; }

 private:
  double eps_;
};

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t experts = 2;
  // Gate sizes; lookback/horizon/experts are taken from the fields above.
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  double gate_dropout = 0.1;
  LwaConfig lwa;
  LossConfig loss;
  double eps_norm = 1e-5;
  /// Single backbone, no gate, no signatures, no similarity term.
  bool unified = false;
  std::uint64_t seed = 0;

  GateConfig gate_config() const;
  void validate() const;
};

struct ForwardResult {
  Var prediction;                  // [B, C, L_out], dataset scale
  Var beta;                        // [B, C, K]
  std::vector<Var> expert_outputs; // K x [B, C, L_out], stationarized space
  Stationarized norm;
};

/// Snapshot of everything training mutates.
struct ModelState {
  std::vector<Tensor> params;
  std::vector<Tensor> gamma;
  std::vector<std::uint64_t> ema_updates;
};

/// K backbones mixed per channel by the forecaster-aware gate, wrapped in
/// instance normalization. With `unified` set it degenerates to one
/// normalized backbone.
class DisenTSModel {
 public:
  explicit DisenTSModel(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t experts() const noexcept { return backbones_.size(); }
  const std::vector<Backbone>& backbones() const noexcept { return backbones_; }
  const GateParams& gate() const noexcept { return gate_; }
  const EmaRegistry& registry() const noexcept { return registry_; }
  EmaRegistry& registry() noexcept { return registry_; }
  const Stationarizer& stationarizer() const noexcept { return stationarizer_; }

  /// All trainable parameters: "expert<m>.<name>" then "gate.<name>"
  /// (gate omitted in unified mode).
  const ParamSet& parameters() const noexcept { return params_; }

  /// x: [B, C, L_in] on the dataset scale. `rng` drives gate dropout and is
  /// only needed when training.
  ForwardResult forward(const Tensor& x, bool training, Rng* rng = nullptr) const;

  ModelState snapshot() const;
  void restore(const ModelState& state);

 private:
  ModelConfig config_;
  std::vector<Backbone> backbones_;
  GateParams gate_;
  EmaRegistry registry_;
  Stationarizer stationarizer_;
  ParamSet params_;
};

struct StepReport {
  double l_fc = 0.0;
  double l_sc = 0.0;
  double total = 0.0;
  std::vector<double> epsilon;  // per expert, over the whole batch
};

struct StepOptions {
  /// Leave the similarity term out of the loss entirely (signatures are
  /// still estimated and the EMA still advances).
  bool skip_similarity = false;
};

/// One optimization step: forward, forecasting loss, per-expert top-k
/// linear approximation, similarity constraint, backward, Adam update and
/// finally the EMA update with the now-constant batch signatures.
/// Throws NumericError naming the first non-finite quantity.
StepReport train_step(DisenTSModel& model, const Batch& batch, AdamState& optimizer, Rng& rng,
                      StepOptions options = {});

/// Batch signatures W_m for every expert from an existing forward pass.
std::vector<ForecasterSignature> batch_signatures(const DisenTSModel& model, const ForwardResult& fwd);

}  // namespace disents
