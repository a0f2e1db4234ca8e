#pragma once

#include "disents/tensor.hpp"

namespace disents {

/// Default relative singular-value cutoff for pinv().
inline constexpr double kDefaultRcond = 1e-6;

/// Moore-Penrose pseudo-inverse of an [m, n] matrix via SVD. Singular values
/// at or below rcond * sigma_max are treated as zero. Throws NumericError on
/// non-finite input. The result is a plain Tensor: it never takes part in
/// differentiation.
Tensor pinv(const Tensor& x, double rcond = kDefaultRcond);

}  // namespace disents
