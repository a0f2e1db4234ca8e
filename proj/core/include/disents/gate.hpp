#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "disents/autodiff.hpp"
#include "disents/random.hpp"

namespace disents {

struct GateConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 24;
  std::size_t experts = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  double dropout = 0.1;

  std::size_t head_dim() const { return d_model / heads; }
  void validate() const;
};

/// Learnable state of the forecaster-aware gate.
///
/// Channel rows are projected by `w_in`; each expert signature (an
/// [lookback, horizon] matrix) is flattened and embedded by a two-layer
/// perceptron. A post-norm cross-attention block lets channels (queries)
/// attend over experts (keys/values), and `w_out` maps the result to one
/// logit per expert.
struct GateParams {
  GateConfig config;

  Var w_in;                                   // [L_in, d]
  Var sig_w1, sig_b1, sig_w2, sig_b2;         // L_in*L_out -> ffn_mult*d -> d
  Var wq, bq, wk, bk, wv, bv, wo, bo;         // [d, d], [d]
  Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;         // d -> ffn_mult*d -> d
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias; // [d]
  Var w_out;                                  // [d, K]

  /// Matrices ~ N(0, 0.02^2); biases 0; layer-norm gains 1.
  static GateParams create(const GateConfig& config, Rng& init);

  ParamSet parameters() const;
};

struct AttentionOutput {
  Var hidden;                    // [B, C, d]
  std::vector<Tensor> weights;   // one [B*C, K] attention map per head
};

/// h_x = x * w_in per channel row: [B, C, L_in] -> [B, C, d].
Var embed_channels(const Var& x, const Var& w_in);

/// h_f = MLP(flatten(gamma_j)) for each expert: K x [L_in, L_out] -> [K, d].
/// Signatures enter as constants; only the MLP receives gradients.
Var embed_forecasters(std::span<const Tensor> gamma, const GateParams& params);

/// Post-norm transformer block with channel queries and expert keys/values.
AttentionOutput cross_attend(const Var& h_x, const Var& h_f, const GateParams& params,
                             bool training, Rng* rng);

/// Routing signal beta = softmax over experts of cross_attend(...) * w_out.
/// Output [B, C, K]; each (b, c) slice lies on the probability simplex.
Var route(const Var& x, std::span<const Tensor> gamma, const GateParams& params, bool training,
          Rng* rng);

}  // namespace disents
