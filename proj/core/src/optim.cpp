#include "disents/optim.hpp"

#include <cmath>

#include "disents/error.hpp"

namespace disents {

AdamState::AdamState(const ParamSet& params, AdamConfig cfg) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto& p : params) {
    first_moment.emplace_back(p.var.shape());
    second_moment.emplace_back(p.var.shape());
  }
}

void adam_step(const ParamSet& params, AdamState& state) {
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].var.shape() != state.first_moment[i].shape() ||
        params[i].var.shape() != state.second_moment[i].shape()) {
      throw ContractError("adam_step: moment shape mismatch for parameter '" + params[i].name +
                          "': " + shape_str(params[i].var.shape()) + " vs " +
                          shape_str(state.first_moment[i].shape()));
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Var v = params[i].var;
    const Tensor g = v.grad();
    Tensor& w = v.mutable_value();
    Tensor& m = state.first_moment[i];
    Tensor& s = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      s[j] = c.beta2 * s[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double s_hat = s[j] / bc2;
      w[j] -= c.lr * m_hat / (std::sqrt(s_hat) + c.eps);
    }
  }
}

}  // namespace disents
