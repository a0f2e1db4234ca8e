#include "disents/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace disents {

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
  Var xv = Var::parameter(x);
  ParamSet params{{"x", xv}};
  return grad_check([&] { return f(xv); }, params, h);
}

double grad_check(const std::function<Var()>& loss, const ParamSet& params, double h) {
  zero_grads(params);
  backward(loss());
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.var.grad());

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var v = params[k].var;
    Tensor& w = v.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double up = loss().item();
      w[i] = orig - h;
      const double down = loss().item();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  zero_grads(params);
  return worst;
}

}  // namespace disents
