#pragma once

#include <functional>

#include "disents/autodiff.hpp"

namespace disents {

inline constexpr double kGradCheckStep = 1e-4;

/// Compares the recorded gradient of a scalar function against central
/// differences with step `h`. Returns max |analytic - numeric| / max(1, |numeric|)
/// over all coordinates of `x`.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                  double h = kGradCheckStep);

/// Same check over every coordinate of several parameters at once. `loss`
/// is re-evaluated with each coordinate perturbed in place; it must be
/// deterministic.
double grad_check(const std::function<Var()>& loss, const ParamSet& params,
                  double h = kGradCheckStep);

}  // namespace disents
