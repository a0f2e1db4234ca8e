#pragma once

#include <cstdint>
#include <vector>

#include "disents/autodiff.hpp"

namespace disents {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators for one parameter list, in list order.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig cfg);
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Throws ContractError if the state does not match the params.
void adam_step(const ParamSet& params, AdamState& state);

}  // namespace disents
