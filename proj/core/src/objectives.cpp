#include "disents/objectives.hpp"

#include <cmath>
#include <vector>

#include "disents/error.hpp"

namespace disents {

namespace {
constexpr double kNormEps = 1e-12;
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
}

Var mse_loss(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  return ops::mean(ops::square(ops::sub(pred, target)));
}

Var similarity_constraint(std::span<const Var> w, std::span<const Tensor> gamma, const LossConfig& cfg) {
  const std::size_t K = w.size();
  if (K == 0) throw ContractError("similarity_constraint: no signatures");
  if (gamma.size() != K) {
    throw ShapeError("similarity_constraint: " + std::to_string(K) + " batch signatures vs " +
                     std::to_string(gamma.size()) + " EMA signatures");
  }
  const std::size_t flat = w[0].value().size();
  std::vector<Var> rows;
  rows.reserve(K);
  Tensor g({K, flat});
  for (std::size_t i = 0; i < K; ++i) {
    if (w[i].value().size() != flat || gamma[i].size() != flat) {
      throw ShapeError("similarity_constraint: signature " + std::to_string(i) + " size mismatch");
    }
    rows.push_back(ops::reshape(w[i], {1, flat}));
    double norm = 0.0;
    for (double v : gamma[i].data()) norm += v * v;
    const double denom = cfg.normalize_sims ? std::sqrt(norm) + kNormEps : 1.0;
    for (std::size_t j = 0; j < flat; ++j) g.at(i, j) = gamma[i][j] / denom;
  }
  Var wm = ops::concat(rows, 0);
  double inv_tau = 1.0;
  if (cfg.normalize_sims) {
    Var norms = ops::add_scalar(ops::sqrt(ops::sum_lastdim(ops::square(wm))), kNormEps);
    wm = ops::div(wm, norms);
    inv_tau = 1.0 / cfg.tau;
  }
  Var logits = ops::scale(ops::matmul(wm, ops::transpose(Var::constant(std::move(g)))), inv_tau);
  Var logp = ops::log_softmax_lastdim(logits);
  return ops::neg(ops::sum(ops::mul(logp, Var::constant(Tensor::eye(K)))));
}

Var total_loss(const Var& l_fc, const Var& l_sc, double lambda) {
  return ops::add(l_fc, ops::scale(l_sc, lambda));
}

}  // namespace disents
