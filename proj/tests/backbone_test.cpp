#include <gtest/gtest.h>

#include <cmath>

#include "disents/backbone.hpp"
#include "disents/error.hpp"
#include "disents/gradcheck.hpp"
#include "test_util.hpp"

namespace disents {
namespace {

using testing::random_tensor;

BackboneConfig config(BackboneKind kind, std::size_t lookback = 8, std::size_t horizon = 4) {
  BackboneConfig c;
  c.kind = kind;
  c.lookback = lookback;
  c.horizon = horizon;
  c.hidden = 6;
  c.decomp_kernel = 3;
  return c;
}

Backbone make(BackboneKind kind, std::uint64_t seed = 1, std::size_t lookback = 8,
              std::size_t horizon = 4) {
  Rng rng(seed);
  return Backbone(config(kind, lookback, horizon), rng);
}

void zero_all(const Backbone& b) {
  for (const NamedParam& p : b.parameters()) Var(p.var).mutable_value().fill(0.0);
}

const BackboneKind kAllKinds[] = {BackboneKind::Linear, BackboneKind::DecompLinear, BackboneKind::Mlp};

TEST(Backbone, KindNames) {
  for (BackboneKind k : kAllKinds) EXPECT_EQ(parse_backbone_kind(to_string(k)), k);
  EXPECT_THROW(parse_backbone_kind("transformer"), ConfigError);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig c = config(BackboneKind::DecompLinear);
  c.decomp_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config(BackboneKind::Linear);
  c.lookback = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backbone, LinearIdentityMap) {
  Backbone b = make(BackboneKind::Linear, 1, 5, 5);
  b.param("weight").mutable_value() = Tensor::eye(5);
  b.param("bias").mutable_value().fill(0.0);
  Tensor x = random_tensor({3, 5}, 2);
  EXPECT_EQ(b.forecast_rows(Var::constant(x)).value(), x);
}

TEST(Backbone, ZeroParametersGiveBias) {
  Tensor x = random_tensor({3, 8}, 3);
  for (BackboneKind k : kAllKinds) {
    Backbone b = make(k);
    zero_all(b);
    EXPECT_EQ(b.forecast_rows(Var::constant(x)).value(), Tensor({3, 4})) << to_string(k);
  }
}

TEST(Backbone, LinearParameterCount) {
  EXPECT_EQ(make(BackboneKind::Linear, 1, 96, 24).parameter_count(), 96u * 24u + 24u);
}

TEST(Backbone, InitStatistics) {
  Backbone b = make(BackboneKind::Linear, 7, 96, 24);
  const Tensor& w = b.param("weight").value();
  double s = 0.0, ss = 0.0;
  for (double v : w.data()) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(w.size());
  EXPECT_NEAR(s / n, 0.0, 2e-3);
  EXPECT_NEAR(std::sqrt(ss / n), 0.02, 1e-3);
  EXPECT_EQ(b.param("bias").value(), Tensor({24}));
  EXPECT_THROW(b.param("nope"), ContractError);
}

TEST(Backbone, RowPermutationEquivariance) {
  Tensor x = random_tensor({4, 8}, 4);
  Tensor perm({4, 8});
  const std::size_t order[] = {2, 0, 3, 1};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 8; ++j) perm.at(r, j) = x.at(order[r], j);
  for (BackboneKind k : kAllKinds) {
    Backbone b = make(k);
    Tensor y = b.forecast_rows(Var::constant(x)).value();
    Tensor yp = b.forecast_rows(Var::constant(perm)).value();
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(yp.at(r, j), y.at(order[r], j));
  }
}

TEST(Backbone, BatchEqualsPerChannelLoop) {
  Tensor x = random_tensor({3, 5, 8}, 5);
  for (BackboneKind k : kAllKinds) {
    Backbone b = make(k);
    Tensor y = b.forecast_batch(Var::constant(x)).value();
    ASSERT_EQ(y.shape(), (Shape{3, 5, 4}));
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t c = 0; c < 5; ++c) {
        Tensor row({1, 8});
        for (std::size_t j = 0; j < 8; ++j) row[j] = x.at(i, c, j);
        Tensor out = b.forecast_rows(Var::constant(row)).value();
        for (std::size_t j = 0; j < 4; ++j) worst = std::max(worst, std::abs(out[j] - y.at(i, c, j)));
      }
    }
    EXPECT_LE(worst, 1e-12) << to_string(k);
  }
}

TEST(Backbone, SingleChannelBatchIsRows) {
  Backbone b = make(BackboneKind::Mlp);
  Tensor x = random_tensor({1, 1, 8}, 6);
  EXPECT_EQ(b.forecast_batch(Var::constant(x)).value().reshaped({1, 4}),
            b.forecast_rows(Var::constant(x.reshaped({1, 8}))).value());
}

TEST(Backbone, ZeroInputBiasFreeLinear) {
  Backbone b = make(BackboneKind::Linear);
  EXPECT_EQ(b.forecast_batch(Var::constant(Tensor({2, 3, 8}))).value(), Tensor({2, 3, 4}));
}

TEST(LinearForward, IdentityInputReadsWeights) {
  Tensor w = random_tensor({3, 2}, 7);
  Tensor y = linear_forward(Var::constant(Tensor::eye(3)), Var::constant(w), Var::constant(Tensor({2}))).value();
  EXPECT_EQ(y, w);
  Tensor bias({2}, std::vector<double>{1.5, -2.0});
  Tensor yb = linear_forward(Var::constant(random_tensor({4, 3}, 8)), Var::constant(Tensor({3, 2})),
                             Var::constant(bias))
                  .value();
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(yb.at(r, 0), 1.5);
    EXPECT_EQ(yb.at(r, 1), -2.0);
  }
}

TEST(LinearForward, GradCheck) {
  Tensor x = random_tensor({4, 3}, 9);
  ParamSet ps{{"w", Var::parameter(random_tensor({3, 2}, 10))}, {"b", Var::parameter(random_tensor({2}, 11))}};
  Tensor t = random_tensor({4, 2}, 12);
  auto loss = [&] {
    return ops::mean(ops::square(ops::sub(linear_forward(Var::constant(x), ps[0].var, ps[1].var), Var::constant(t))));
  };
  EXPECT_LE(grad_check(loss, ps), 1e-4);
  EXPECT_LE(grad_check([&](const Var& v) { return ops::sum(ops::square(linear_forward(v, ps[0].var, ps[1].var))); }, x),
            1e-4);
}

TEST(MovingAverage, RampInteriorIsExact) {
  const std::size_t L = 12, k = 5;
  Tensor op = moving_average_operator(L, k);
  Tensor ramp({1, L});
  for (std::size_t j = 0; j < L; ++j) ramp[j] = 0.5 * static_cast<double>(j) - 1.0;
  Tensor trend = matmul_values(ramp, op);
  for (std::size_t j = k / 2; j + k / 2 < L; ++j) EXPECT_NEAR(trend[j], ramp[j], 1e-12);
  // edge replication: first output averages two copies of x0 with x0..x2
  EXPECT_NEAR(trend[0], (3 * ramp[0] + ramp[1] + ramp[2]) / 5.0, 1e-12);
}

TEST(MovingAverage, KernelOneIsIdentity) {
  EXPECT_EQ(moving_average_operator(6, 1), Tensor::eye(6));
}

TEST(DecompLinear, ConstantSeries) {
  Backbone b = make(BackboneKind::DecompLinear, 3);
  const Tensor& tw = b.param("trend_weight").value();
  b.param("trend_bias").mutable_value() = random_tensor({4}, 13);
  b.param("seasonal_bias").mutable_value() = random_tensor({4}, 14);
  Tensor x({2, 8}, 2.5);
  Tensor y = b.forecast_rows(Var::constant(x)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 8; ++i) col += tw.at(i, j);
    const double expect = 2.5 * col + b.param("trend_bias").value()[j] + b.param("seasonal_bias").value()[j];
    EXPECT_NEAR(y.at(0, j), expect, 1e-12);
    EXPECT_NEAR(y.at(1, j), expect, 1e-12);
  }
}

TEST(DecompLinear, TrendPlusSeasonalIsInput) {
  // With both branches given the identity map, output = trend + seasonal = x.
  Tensor op = moving_average_operator(6, 3);
  DecompParams p{Var::constant(Tensor::eye(6)), Var::constant(Tensor({6})), Var::constant(Tensor::eye(6)),
                 Var::constant(Tensor({6}))};
  Tensor x = random_tensor({3, 6}, 15);
  EXPECT_LE(max_abs_diff(decomp_linear_forward(Var::constant(x), p, op).value(), x), 1e-12);
}

TEST(DecompLinear, KernelOneDegenerates) {
  Tensor x = random_tensor({3, 6}, 16);
  Tensor tw = random_tensor({6, 2}, 17), sw = random_tensor({6, 2}, 18);
  Tensor tb = random_tensor({2}, 19), sb = random_tensor({2}, 20);
  DecompParams p{Var::constant(tw), Var::constant(tb), Var::constant(sw), Var::constant(sb)};
  Tensor y = decomp_linear_forward(Var::constant(x), p, moving_average_operator(6, 1)).value();
  Tensor expect = matmul_values(x, tw);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 2; ++j) expect.at(r, j) += tb[j] + sb[j];
  EXPECT_LE(max_abs_diff(y, expect), 1e-12);
}

TEST(DecompLinear, GradCheck) {
  Backbone b = make(BackboneKind::DecompLinear, 4);
  Tensor x = random_tensor({3, 8}, 21), t = random_tensor({3, 4}, 22);
  auto loss = [&] { return ops::mean(ops::square(ops::sub(b.forecast_rows(Var::constant(x)), Var::constant(t)))); };
  EXPECT_LE(grad_check(loss, b.parameters()), 1e-4);
}

TEST(Mlp, ZeroOutputWeights) {
  Backbone b = make(BackboneKind::Mlp, 5);
  b.param("w2").mutable_value().fill(0.0);
  b.param("b2").mutable_value() = random_tensor({4}, 23);
  Tensor y = b.forecast_rows(Var::constant(random_tensor({3, 8}, 24))).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.at(r, j), b.param("b2").value()[j]);
}

TEST(Mlp, ZeroInputClosedForm) {
  Backbone b = make(BackboneKind::Mlp, 6);
  Tensor b1 = random_tensor({6}, 25);
  b.param("b1").mutable_value() = b1;
  Tensor h({1, 6});
  for (std::size_t j = 0; j < 6; ++j) h[j] = 0.5 * b1[j] * (1.0 + std::erf(b1[j] / std::sqrt(2.0)));
  Tensor expect = matmul_values(h, b.param("w2").value());
  Tensor y = b.forecast_rows(Var::constant(Tensor({1, 8}))).value();
  EXPECT_LE(max_abs_diff(y, expect), 1e-14);
}

TEST(Mlp, GradCheck) {
  Backbone b = make(BackboneKind::Mlp, 7);
  for (const NamedParam& p : b.parameters()) Var(p.var).mutable_value() = random_tensor(p.var.shape(), 30, 0.5);
  Tensor x = random_tensor({3, 8}, 26), t = random_tensor({3, 4}, 27);
  auto loss = [&] { return ops::mean(ops::square(ops::sub(b.forecast_rows(Var::constant(x)), Var::constant(t)))); };
  EXPECT_LE(grad_check(loss, b.parameters()), 1e-4);
}

TEST(Backbone, SeededInitIsDeterministic) {
  for (BackboneKind k : kAllKinds) {
    Backbone a = make(k, 42), b = make(k, 42), c = make(k, 43);
    EXPECT_EQ(a.parameters()[0].var.value(), b.parameters()[0].var.value());
    EXPECT_NE(a.parameters()[0].var.value(), c.parameters()[0].var.value());
  }
}

}  // namespace
}  // namespace disents
