#include "disents/lwa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "disents/error.hpp"

namespace disents {

std::size_t LwaConfig::resolve_k(std::size_t pool, std::size_t lookback) const {
  return std::min(pool, top_k > 0 ? top_k : 2 * lookback);
}

void LwaConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("EMA alpha must lie in [0, 1]");
  if (rcond < 0.0) throw ConfigError("rcond must be non-negative");
}

TopKSelection select_top_k(const Tensor& beta, const Tensor& x, const Var& y_hat,
                           std::size_t expert, std::size_t k) {
  if (beta.rank() != 3 || x.rank() != 3 || y_hat.value().rank() != 3) {
    throw ShapeError("select_top_k: beta, x and forecasts must be rank 3");
  }
  const std::size_t B = beta.dim(0), C = beta.dim(1), K = beta.dim(2);
  if (x.dim(0) != B || x.dim(1) != C || y_hat.dim(0) != B || y_hat.dim(1) != C) {
    throw ShapeError("select_top_k: beta " + shape_str(beta.shape()) + ", x " + shape_str(x.shape()) +
                     " and forecasts " + shape_str(y_hat.shape()) + " disagree on [B, C]");
  }
  if (expert >= K) throw ContractError("select_top_k: expert index out of range");
  const std::size_t pool = B * C;
  if (k < 1 || k > pool) {
    throw ContractError("select_top_k: k = " + std::to_string(k) + " outside [1, " +
                        std::to_string(pool) + "]");
  }

  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto score = [&](std::size_t r) { return beta[r * K + expert]; };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  order.resize(k);

  const std::size_t L = x.dim(2);
  TopKSelection sel;
  sel.rows = order;
  sel.inputs = Tensor({k, L});
  for (std::size_t i = 0; i < k; ++i) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(order[i] * L), L,
                sel.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * L));
  }
  Var flat = ops::reshape(y_hat, {pool, y_hat.dim(2)});
  sel.outputs = ops::gather_rows(flat, sel.rows);
  return sel;
}

ForecasterSignature approximate(const Tensor& x_hat, const Var& f_hat, double rcond) {
  if (x_hat.rank() != 2 || f_hat.value().rank() != 2 || x_hat.dim(0) != f_hat.dim(0)) {
    throw ShapeError("approximate: inputs " + shape_str(x_hat.shape()) + " and outputs " +
                     shape_str(f_hat.shape()) + " disagree");
  }
  if (!f_hat.value().all_finite()) throw NumericError("approximate: non-finite forecasts");
  return {ops::matmul(Var::constant(pinv(x_hat, rcond)), f_hat)};
}

EmaRegistry::EmaRegistry(std::size_t experts, std::size_t lookback, std::size_t horizon,
                         double alpha, Rng& init)
    : updates_(experts, 0), alpha_(alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("EMA alpha must lie in [0, 1]");
  gamma_.reserve(experts);
  for (std::size_t m = 0; m < experts; ++m) gamma_.push_back(init.normal_tensor({lookback, horizon}, 0.02));
}

void EmaRegistry::update(std::size_t expert, const Tensor& w) {
  if (expert >= gamma_.size()) throw ContractError("ema_update: expert index out of range");
  Tensor& g = gamma_[expert];
  if (w.shape() != g.shape()) {
    throw ContractError("ema_update: signature shape " + shape_str(w.shape()) + " does not match " +
                        shape_str(g.shape()));
  }
  if (updates_[expert] == 0) {
    g = w;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = alpha_ * g[i] + (1.0 - alpha_) * w[i];
  }
  ++updates_[expert];
}

void EmaRegistry::restore(std::vector<Tensor> gamma, std::vector<std::uint64_t> updates) {
  if (gamma.size() != gamma_.size() || updates.size() != updates_.size()) {
    throw ShapeError("EMA registry restore: expert count mismatch");
  }
  for (std::size_t m = 0; m < gamma.size(); ++m) {
    if (gamma[m].shape() != gamma_[m].shape()) {
      throw ShapeError("EMA registry restore: signature " + std::to_string(m) + " has shape " +
                       shape_str(gamma[m].shape()) + ", expected " + shape_str(gamma_[m].shape()));
    }
  }
  gamma_ = std::move(gamma);
  updates_ = std::move(updates);
}

double approximation_error(const Tensor& outputs, const Tensor& x_rows, const Tensor& w) {
  const Tensor approx = matmul_values(x_rows, w);
  if (approx.shape() != outputs.shape()) {
    throw ShapeError("approximation_error: outputs " + shape_str(outputs.shape()) +
                     " vs linear map " + shape_str(approx.shape()));
  }
  if (outputs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double d = outputs[i] - approx[i];
    s += d * d;
  }
  return s / static_cast<double>(outputs.size());
}

double approximation_error(const Backbone& backbone, const Tensor& x_rows, const Tensor& w) {
  const Var out = backbone.forecast_rows(Var::constant(x_rows), false);
  return approximation_error(out.value(), x_rows, w);
}

double mean_pairwise_cosine(std::span<const Tensor> mats) {
  if (mats.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < mats.size(); ++a) {
    for (std::size_t b = a + 1; b < mats.size(); ++b) {
      if (mats[a].size() != mats[b].size()) {
        throw ShapeError("mean_pairwise_cosine: " + shape_str(mats[a].shape()) + " vs " +
                         shape_str(mats[b].shape()));
      }
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < mats[a].size(); ++i) {
        dot += mats[a][i] * mats[b][i];
        na += mats[a][i] * mats[a][i];
        nb += mats[b][i] * mats[b][i];
      }
      total += dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

}  // namespace disents
