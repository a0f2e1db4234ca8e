#include "disents/pipeline.hpp"

#include <cmath>

#include "disents/error.hpp"

namespace disents {

namespace {

// Stream ids for Rng::derive off the model seed.
constexpr std::uint64_t kGateStream = 1;
constexpr std::uint64_t kRegistryStream = 2;
constexpr std::uint64_t kBackboneStream = 100;

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace

Stationarized Stationarizer::stationarize(const Tensor& x) const {
  if (x.rank() != 3) throw ShapeError("stationarize expects [B, C, L], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  Stationarized s{Tensor(x.shape()), Tensor({B, C, 1}), Tensor({B, C, 1})};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t t = 0; t < L; ++t) m += x.at(b, c, t);
      m /= static_cast<double>(L);
      double v = 0.0;
      for (std::size_t t = 0; t < L; ++t) v += (x.at(b, c, t) - m) * (x.at(b, c, t) - m);
      const double sd = std::sqrt(v / static_cast<double>(L));
      s.mean.at(b, c, 0) = m;
      s.stdev.at(b, c, 0) = sd;
      for (std::size_t t = 0; t < L; ++t) s.x.at(b, c, t) = (x.at(b, c, t) - m) / (sd + eps_);
    }
  }
  return s;
}

Var Stationarizer::destationarize(const Var& y_norm, const Tensor& mean, const Tensor& stdev) const {
  const Shape& s = y_norm.shape();
  if (s.size() != 3 || mean.shape() != Shape{s[0], s[1], 1} || stdev.shape() != mean.shape()) {
    throw ShapeError("destationarize: prediction " + shape_str(s) + " vs statistics " +
                     shape_str(mean.shape()));
  }
  Tensor scale(stdev.shape());
  for (std::size_t i = 0; i < scale.size(); ++i) scale[i] = stdev[i] + eps_;
  return ops::add(ops::mul(y_norm, Var::constant(std::move(scale))), Var::constant(mean));
}

GateConfig ModelConfig::gate_config() const {
  GateConfig g;
  g.lookback = backbone.lookback;
  g.horizon = backbone.horizon;
  g.experts = experts;
  g.d_model = d_model;
  g.heads = heads;
  g.ffn_mult = ffn_mult;
  g.dropout = gate_dropout;
  return g;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (experts < 1) throw ConfigError("number of experts must be >= 1");
  if (unified && experts != 1) throw ConfigError("unified mode uses exactly one backbone");
  if (!unified) gate_config().validate();
  lwa.validate();
  loss.validate();
  if (!(eps_norm > 0.0)) throw ConfigError("normalization eps must be > 0");
}

DisenTSModel::DisenTSModel(const ModelConfig& config)
    : config_(config), stationarizer_(config.eps_norm) {
  config_.validate();
  const Rng root(config_.seed);
  for (std::size_t m = 0; m < config_.experts; ++m) {
    Rng init = root.derive(kBackboneStream + m);
    backbones_.emplace_back(config_.backbone, init);
    for (const auto& p : backbones_.back().parameters()) {
      params_.push_back({"expert" + std::to_string(m) + "." + p.name, p.var});
    }
  }
  if (!config_.unified) {
    Rng gate_init = root.derive(kGateStream);
    gate_ = GateParams::create(config_.gate_config(), gate_init);
    for (const auto& p : gate_.parameters()) params_.push_back({"gate." + p.name, p.var});
  }
  Rng reg_init = root.derive(kRegistryStream);
  registry_ = EmaRegistry(config_.experts, config_.backbone.lookback, config_.backbone.horizon,
                          config_.lwa.alpha, reg_init);
}

ForwardResult DisenTSModel::forward(const Tensor& x, bool training, Rng* rng) const {
  if (x.rank() != 3 || x.dim(2) != config_.backbone.lookback) {
    throw ShapeError("model expects [B, C, " + std::to_string(config_.backbone.lookback) + "], got " +
                     shape_str(x.shape()));
  }
  ForwardResult r;
  r.norm = stationarizer_.stationarize(x);
  const Var x_norm = Var::constant(r.norm.x);
  const std::size_t B = x.dim(0), C = x.dim(1);

  if (config_.unified) {
    r.beta = Var::constant(Tensor::ones({B, C, 1}));
  } else {
    r.beta = route(x_norm, registry_.gamma(), gate_, training, rng);
  }

  Var mixed;
  for (std::size_t m = 0; m < backbones_.size(); ++m) {
    Var out = backbones_[m].forecast_batch(x_norm, training);
    Var weighted = ops::mul(ops::slice(r.beta, 2, m, 1), out);
    mixed = m == 0 ? weighted : ops::add(mixed, weighted);
    r.expert_outputs.push_back(std::move(out));
  }
  r.prediction = stationarizer_.destationarize(mixed, r.norm.mean, r.norm.stdev);
  return r;
}

ModelState DisenTSModel::snapshot() const {
  ModelState s;
  for (const auto& p : params_) s.params.push_back(p.var.value());
  s.gamma = registry_.gamma();
  s.ema_updates = registry_.update_counts();
  return s;
}

void DisenTSModel::restore(const ModelState& state) {
  if (state.params.size() != params_.size()) throw ShapeError("model restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.params[i].shape() != params_[i].var.shape()) {
      throw ShapeError("model restore: '" + params_[i].name + "' expects " +
                       shape_str(params_[i].var.shape()) + ", got " + shape_str(state.params[i].shape()));
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var v = params_[i].var;
    v.mutable_value() = state.params[i];
  }
  registry_.restore(state.gamma, state.ema_updates);
}

std::vector<ForecasterSignature> batch_signatures(const DisenTSModel& model, const ForwardResult& fwd) {
  const std::size_t pool = fwd.norm.x.dim(0) * fwd.norm.x.dim(1);
  const std::size_t k = model.config().lwa.resolve_k(pool, model.config().backbone.lookback);
  const Tensor& beta = fwd.beta.value();
  std::vector<ForecasterSignature> sigs;
  sigs.reserve(model.experts());
  for (std::size_t m = 0; m < model.experts(); ++m) {
    TopKSelection sel = select_top_k(beta, fwd.norm.x, fwd.expert_outputs[m], m, std::min(k, pool));
    sigs.push_back(approximate(sel.inputs, sel.outputs, model.config().lwa.rcond));
  }
  return sigs;
}

StepReport train_step(DisenTSModel& model, const Batch& batch, AdamState& optimizer, Rng& rng,
                      StepOptions options) {
  const ModelConfig& cfg = model.config();
  const ParamSet& params = model.parameters();
  zero_grads(params);

  const ForwardResult fwd = model.forward(batch.x, true, &rng);
  const Var l_fc = mse_loss(fwd.prediction, Var::constant(batch.y));
  require_finite(l_fc.item(), "forecasting loss");

  StepReport report;
  std::vector<ForecasterSignature> sigs;
  Var loss = l_fc;
  if (!cfg.unified) {
    sigs = batch_signatures(model, fwd);
    if (!options.skip_similarity) {
      std::vector<Var> w;
      for (const auto& s : sigs) w.push_back(s.weights);
      const Var l_sc = similarity_constraint(w, model.registry().gamma(), cfg.loss);
      require_finite(l_sc.item(), "similarity constraint");
      report.l_sc = l_sc.item();
      loss = total_loss(l_fc, l_sc, cfg.loss.lambda);
    }
  }
  report.l_fc = l_fc.item();
  report.total = loss.item();
  require_finite(report.total, "total loss");

  backward(loss);
  adam_step(params, optimizer);

  const std::size_t rows = batch.x.dim(0) * batch.x.dim(1);
  const Tensor x_rows = fwd.norm.x.reshaped({rows, cfg.backbone.lookback});
  for (std::size_t m = 0; m < sigs.size(); ++m) {
    const Tensor& w = sigs[m].weights.value();
    require_finite(frobenius_norm(w), "linear weight approximation");
    model.registry().update(m, w);
    report.epsilon.push_back(approximation_error(
        fwd.expert_outputs[m].value().reshaped({rows, cfg.backbone.horizon}), x_rows, w));
  }
  return report;
}

}  // namespace disents
