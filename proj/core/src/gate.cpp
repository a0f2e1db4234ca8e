#include "disents/gate.hpp"

#include <cmath>

#include "disents/error.hpp"

namespace disents {

namespace {

constexpr double kInitStd = 0.02;

Var affine(const Var& x, const Var& w, const Var& b) { return ops::add(ops::matmul(x, w), b); }

}  // namespace

void GateConfig::validate() const {
  if (experts < 1) throw ConfigError("gate needs at least one expert");
  if (lookback < 1 || horizon < 1) throw ConfigError("gate lookback/horizon must be >= 1");
  if (d_model < 2) throw ConfigError("gate hidden size must be >= 2");
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("gate hidden size " + std::to_string(d_model) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  if (ffn_mult < 1) throw ConfigError("gate feed-forward multiplier must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("gate dropout must lie in [0, 1)");
}

GateParams GateParams::create(const GateConfig& config, Rng& init) {
  config.validate();
  const std::size_t d = config.d_model, f = config.ffn_mult * config.d_model;
  auto w = [&](std::size_t r, std::size_t c) {
    return Var::parameter(init.normal_tensor({r, c}, kInitStd));
  };
  auto zeros = [](std::size_t n) { return Var::parameter(Tensor::zeros({n})); };
  auto ones = [](std::size_t n) { return Var::parameter(Tensor::ones({n})); };

  GateParams p;
  p.config = config;
  p.w_in = w(config.lookback, d);
  p.sig_w1 = w(config.lookback * config.horizon, f);
  p.sig_b1 = zeros(f);
  p.sig_w2 = w(f, d);
  p.sig_b2 = zeros(d);
  p.wq = w(d, d);
  p.bq = zeros(d);
  p.wk = w(d, d);
  p.bk = zeros(d);
  p.wv = w(d, d);
  p.bv = zeros(d);
  p.wo = w(d, d);
  p.bo = zeros(d);
  p.ffn_w1 = w(d, f);
  p.ffn_b1 = zeros(f);
  p.ffn_w2 = w(f, d);
  p.ffn_b2 = zeros(d);
  p.ln1_gain = ones(d);
  p.ln1_bias = zeros(d);
  p.ln2_gain = ones(d);
  p.ln2_bias = zeros(d);
  p.w_out = w(d, config.experts);
  return p;
}

ParamSet GateParams::parameters() const {
  return {{"w_in", w_in},         {"sig_w1", sig_w1},     {"sig_b1", sig_b1},
          {"sig_w2", sig_w2},     {"sig_b2", sig_b2},     {"wq", wq},
          {"bq", bq},             {"wk", wk},             {"bk", bk},
          {"wv", wv},             {"bv", bv},             {"wo", wo},
          {"bo", bo},             {"ffn_w1", ffn_w1},     {"ffn_b1", ffn_b1},
          {"ffn_w2", ffn_w2},     {"ffn_b2", ffn_b2},     {"ln1_gain", ln1_gain},
          {"ln1_bias", ln1_bias}, {"ln2_gain", ln2_gain}, {"ln2_bias", ln2_bias},
          {"w_out", w_out}};
}

Var embed_channels(const Var& x, const Var& w_in) {
  const Shape& s = x.shape();
  if (s.size() != 3 || w_in.value().rank() != 2 || s[2] != w_in.dim(0)) {
    throw ShapeError("embed_channels: input " + shape_str(s) + " incompatible with projection " +
                     shape_str(w_in.shape()));
  }
  Var rows = ops::reshape(x, {s[0] * s[1], s[2]});
  return ops::reshape(ops::matmul(rows, w_in), {s[0], s[1], w_in.dim(1)});
}

Var embed_forecasters(std::span<const Tensor> gamma, const GateParams& params) {
  if (gamma.empty()) throw ContractError("embed_forecasters: no expert signatures");
  const GateConfig& c = params.config;
  const std::size_t flat = c.lookback * c.horizon;
  Tensor stacked({gamma.size(), flat});
  for (std::size_t k = 0; k < gamma.size(); ++k) {
    if (gamma[k].shape() != Shape{c.lookback, c.horizon}) {
      throw ShapeError("embed_forecasters: signature " + std::to_string(k) + " has shape " +
                       shape_str(gamma[k].shape()) + ", expected " +
                       shape_str({c.lookback, c.horizon}));
    }
    std::copy(gamma[k].data().begin(), gamma[k].data().end(),
              stacked.data().begin() + static_cast<std::ptrdiff_t>(k * flat));
  }
  Var h = ops::gelu(affine(Var::constant(std::move(stacked)), params.sig_w1, params.sig_b1));
  return affine(h, params.sig_w2, params.sig_b2);
}

AttentionOutput cross_attend(const Var& h_x, const Var& h_f, const GateParams& params,
                             bool training, Rng* rng) {
  const GateConfig& c = params.config;
  const Shape& s = h_x.shape();
  if (s.size() != 3 || s[2] != c.d_model) {
    throw ShapeError("cross_attend: queries must be [B, C, " + std::to_string(c.d_model) +
                     "], got " + shape_str(s));
  }
  if (h_f.value().rank() != 2 || h_f.dim(1) != c.d_model) {
    throw ShapeError("cross_attend: keys must be [K, " + std::to_string(c.d_model) + "], got " +
                     shape_str(h_f.shape()));
  }
  const std::size_t rows = s[0] * s[1];
  const std::size_t dh = c.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var x = ops::reshape(h_x, {rows, c.d_model});
  Var q = affine(x, params.wq, params.bq);
  Var k = affine(h_f, params.wk, params.bk);
  Var v = affine(h_f, params.wv, params.bv);

  AttentionOutput result;
  std::vector<Var> heads;
  heads.reserve(c.heads);
  for (std::size_t h = 0; h < c.heads; ++h) {
    Var qh = ops::slice(q, 1, h * dh, dh);
    Var kh = ops::slice(k, 1, h * dh, dh);
    Var vh = ops::slice(v, 1, h * dh, dh);
    Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_scale);
    Var attn = ops::softmax_lastdim(scores);
    result.weights.push_back(attn.value());
    heads.push_back(ops::matmul(attn, vh));
  }
  Var attended = affine(ops::concat(heads, 1), params.wo, params.bo);
  attended = ops::dropout(attended, c.dropout, training, rng);
  Var h1 = ops::layer_norm_lastdim(ops::add(x, attended), params.ln1_gain, params.ln1_bias);

  Var ff = affine(ops::gelu(affine(h1, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2);
  ff = ops::dropout(ff, c.dropout, training, rng);
  Var h2 = ops::layer_norm_lastdim(ops::add(h1, ff), params.ln2_gain, params.ln2_bias);

  result.hidden = ops::reshape(h2, {s[0], s[1], c.d_model});
  return result;
}

Var route(const Var& x, std::span<const Tensor> gamma, const GateParams& params, bool training,
          Rng* rng) {
  const GateConfig& c = params.config;
  if (gamma.size() != c.experts) {
    throw ShapeError("route: got " + std::to_string(gamma.size()) + " signatures for " +
                     std::to_string(c.experts) + " experts");
  }
  Var h_x = embed_channels(x, params.w_in);
  Var h_f = embed_forecasters(gamma, params);
  Var hidden = cross_attend(h_x, h_f, params, training, rng).hidden;
  const Shape& s = hidden.shape();
  Var logits = ops::matmul(ops::reshape(hidden, {s[0] * s[1], s[2]}), params.w_out);
  return ops::reshape(ops::softmax_lastdim(logits), {s[0], s[1], c.experts});
}

}  // namespace disents
