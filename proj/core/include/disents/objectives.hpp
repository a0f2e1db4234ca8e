#pragma once

#include <span>

#include "disents/autodiff.hpp"

namespace disents {

struct LossConfig {
  double lambda = 0.1;          // weight of the similarity constraint
  double tau = 0.1;             // temperature (cosine mode only)
  bool normalize_sims = true;   // cosine similarity; false = raw inner product, tau forced to 1

  void validate() const;
};

/// Mean squared error over all elements.
Var mse_loss(const Var& pred, const Var& target);

/// InfoNCE over flattened signatures: for each expert i the batch signature
/// W_i should match its own EMA signature gamma_i against every gamma_j.
/// Signatures in `gamma` are constants.
Var similarity_constraint(std::span<const Var> w, std::span<const Tensor> gamma, const LossConfig& cfg);

/// l_fc + lambda * l_sc.
Var total_loss(const Var& l_fc, const Var& l_sc, double lambda);

}  // namespace disents
