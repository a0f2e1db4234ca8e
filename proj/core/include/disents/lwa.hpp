#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "disents/autodiff.hpp"
#include "disents/backbone.hpp"
#include "disents/linalg.hpp"
#include "disents/random.hpp"

namespace disents {

struct LwaConfig {
  std::size_t top_k = 0;  // 0 selects min(pool, 2 * lookback)
  double alpha = 0.9;     // EMA decay: weight kept on the previous signature
  double rcond = kDefaultRcond;

  /// Effective k for a pool of `pool` candidate rows; never exceeds the pool.
  std::size_t resolve_k(std::size_t pool, std::size_t lookback) const;
  void validate() const;
};

/// Rows chosen for one expert's regression. `inputs` are constants;
/// `outputs` keep their link to the expert's parameters.
struct TopKSelection {
  std::vector<std::size_t> rows;  // flat b * C + c indices, in selection order
  Tensor inputs;                  // [k, L_in]
  Var outputs;                    // [k, L_out]
};

/// Pools all B*C channel rows, ranks them by beta[:, :, expert] descending
/// (ties: lower flat index first) and keeps the top k.
/// x: [B, C, L_in], y_hat: [B, C, L_out] expert forecast of x.
TopKSelection select_top_k(const Tensor& beta, const Tensor& x, const Var& y_hat,
                           std::size_t expert, std::size_t k);

/// Batch linear approximation W = pinv(x_hat) * f_hat. The pseudo-inverse is
/// a constant, so gradients reach f_hat through pinv(x_hat)^T * G.
struct ForecasterSignature {
  Var weights;  // [L_in, L_out]
};
ForecasterSignature approximate(const Tensor& x_hat, const Var& f_hat, double rcond = kDefaultRcond);

/// EMA-smoothed signatures, one per expert.
class EmaRegistry {
 public:
  EmaRegistry() = default;
  /// Before any update, each signature holds N(0, 0.02^2) noise from `init`.
  EmaRegistry(std::size_t experts, std::size_t lookback, std::size_t horizon, double alpha, Rng& init);

  /// gamma_m <- alpha * gamma_m + (1 - alpha) * W; the first update of an
  /// expert copies W verbatim.
  void update(std::size_t expert, const Tensor& w);

  const std::vector<Tensor>& gamma() const noexcept { return gamma_; }
  const Tensor& gamma(std::size_t expert) const { return gamma_.at(expert); }
  bool initialized(std::size_t expert) const { return updates_.at(expert) > 0; }
  std::uint64_t updates(std::size_t expert) const { return updates_.at(expert); }
  double alpha() const noexcept { return alpha_; }
  std::size_t experts() const noexcept { return gamma_.size(); }

  /// Restores saved state (checkpoint loading, best-epoch rollback).
  void restore(std::vector<Tensor> gamma, std::vector<std::uint64_t> updates);
  const std::vector<std::uint64_t>& update_counts() const noexcept { return updates_; }

 private:
  std::vector<Tensor> gamma_;
  std::vector<std::uint64_t> updates_;
  double alpha_ = 0.9;
};

/// epsilon = mean over rows and horizon of (f(x) - x * W)^2.
double approximation_error(const Backbone& backbone, const Tensor& x_rows, const Tensor& w);
/// Same metric from already computed outputs.
double approximation_error(const Tensor& outputs, const Tensor& x_rows, const Tensor& w);

/// Mean cosine similarity over unordered pairs of flattened matrices.
/// Zero for fewer than two matrices.
double mean_pairwise_cosine(std::span<const Tensor> mats);

}  // namespace disents
