#include <gtest/gtest.h>

#include <cmath>

#include "disents/error.hpp"
#include "disents/gradcheck.hpp"
#include "disents/pipeline.hpp"
#include "test_util.hpp"

namespace disents {
namespace {

using testing::random_tensor;

ModelConfig toy_config(std::size_t experts = 2) {
  ModelConfig c;
  c.backbone.lookback = 8;
  c.backbone.horizon = 4;
  c.experts = experts;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.seed = 3;
  return c;
}

// Series-like input with a per-channel level and scale, so stationarization matters.
Tensor toy_input(std::size_t B, std::size_t C, std::size_t L, std::uint64_t seed) {
  Tensor x = random_tensor({B, C, L}, seed);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < L; ++t) x.at(b, c, t) = 3.0 * x.at(b, c, t) + 10.0 * static_cast<double>(c) - 4.0;
  return x;
}

TEST(Stationarize, ConstantChannel) {
  Stationarizer s;
  Stationarized r = s.stationarize(Tensor({1, 1, 3}, 3.0));
  for (double v : r.x.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.mean[0], 3.0);
  EXPECT_EQ(r.stdev[0], 0.0);
}

TEST(Stationarize, TwoPoint) {
  Stationarized r = Stationarizer().stationarize(Tensor({1, 1, 2}, std::vector<double>{-1, 1}));
  EXPECT_NEAR(r.x[0], -1.0, 1e-4);
  EXPECT_NEAR(r.x[1], 1.0, 1e-4);
}

TEST(Stationarize, MomentsOnRandomInput) {
  Stationarized r = Stationarizer().stationarize(toy_input(3, 4, 16, 1));
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t c = 0; c < 4; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t t = 0; t < 16; ++t) m += r.x.at(b, c, t) / 16.0;
      for (std::size_t t = 0; t < 16; ++t) v += (r.x.at(b, c, t) - m) * (r.x.at(b, c, t) - m) / 16.0;
      EXPECT_LE(std::abs(m), 1e-10);
      EXPECT_NEAR(std::sqrt(v), 1.0, 1e-4);
    }
  }
}

TEST(Destationarize, Examples) {
  Stationarizer s;
  Tensor mean = random_tensor({2, 3, 1}, 2), sd = random_tensor({2, 3, 1}, 3);
  for (double& v : sd.data()) v = std::abs(v);
  Tensor y = s.destationarize(Var::constant(Tensor({2, 3, 4})), mean, sd).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(y.at(b, c, t), mean.at(b, c, 0));

  Tensor yn = random_tensor({2, 3, 4}, 4);
  Tensor id = s.destationarize(Var::constant(yn), Tensor({2, 3, 1}), Tensor({2, 3, 1}, 1.0 - s.eps())).value();
  EXPECT_LE(max_abs_diff(id, yn), 1e-6);
}

TEST(Destationarize, RoundTrip) {
  Stationarizer s;
  Tensor x = toy_input(4, 5, 12, 5);
  Stationarized r = s.stationarize(x);
  EXPECT_LE(max_abs_diff(s.destationarize(Var::constant(r.x), r.mean, r.stdev).value(), x), 1e-6);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = toy_config();
  c.experts = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config(2);
  c.unified = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Forward, SingleExpertIsWrappedBackbone) {
  DisenTSModel m(toy_config(1));
  Tensor x = toy_input(2, 3, 8, 6);
  ForwardResult r = m.forward(x, false);
  for (double v : r.beta.value().data()) EXPECT_EQ(v, 1.0);
  Stationarized n = m.stationarizer().stationarize(x);
  Tensor expect = m.stationarizer()
                      .destationarize(m.backbones()[0].forecast_batch(Var::constant(n.x)), n.mean, n.stdev)
                      .value();
  EXPECT_EQ(r.prediction.value(), expect);
}

TEST(Forward, IdenticalBackbonesIgnoreRouting) {
  DisenTSModel m(toy_config(3));
  for (std::size_t e = 1; e < 3; ++e)
    for (std::size_t i = 0; i < m.backbones()[0].parameters().size(); ++i)
      Var(m.backbones()[e].parameters()[i].var).mutable_value() = m.backbones()[0].parameters()[i].var.value();
  Tensor x = toy_input(2, 3, 8, 7);
  ForwardResult r = m.forward(x, false);
  Stationarized n = m.stationarizer().stationarize(x);
  Tensor single = m.stationarizer()
                      .destationarize(m.backbones()[0].forecast_batch(Var::constant(n.x)), n.mean, n.stdev)
                      .value();
  EXPECT_LE(max_abs_diff(r.prediction.value(), single), 1e-10);
}

TEST(Forward, EqualsHandComposition) {
  DisenTSModel m(toy_config(2));
  Tensor x = toy_input(2, 3, 8, 8);
  ForwardResult r = m.forward(x, false);

  Stationarized n = m.stationarizer().stationarize(x);
  Tensor beta = route(Var::constant(n.x), m.registry().gamma(), m.gate(), false, nullptr).value();
  Tensor o0 = m.backbones()[0].forecast_batch(Var::constant(n.x)).value();
  Tensor o1 = m.backbones()[1].forecast_batch(Var::constant(n.x)).value();
  Tensor expect({2, 3, 4});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double scale = n.stdev.at(b, c, 0) + m.stationarizer().eps();
      for (std::size_t t = 0; t < 4; ++t) {
        const double mix = beta.at(b, c, 0) * o0.at(b, c, t) + beta.at(b, c, 1) * o1.at(b, c, t);
        expect.at(b, c, t) = mix * scale + n.mean.at(b, c, 0);
      }
    }
  }
  EXPECT_LE(max_abs_diff(r.prediction.value(), expect), 1e-12);
  EXPECT_EQ(r.beta.value(), beta);
}

TEST(Forward, MixtureBound) {
  DisenTSModel m(toy_config(3));
  for (const NamedParam& p : m.parameters()) Var(p.var).mutable_value() = random_tensor(p.var.shape(), 9, 0.3);
  Tensor x = toy_input(3, 4, 8, 10);
  ForwardResult r = m.forward(x, false);
  Stationarized n = m.stationarizer().stationarize(x);
  Tensor mixed = r.prediction.value();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t t = 0; t < 4; ++t) {
        const double yn = (mixed.at(b, c, t) - n.mean.at(b, c, 0)) / (n.stdev.at(b, c, 0) + m.stationarizer().eps());
        double lo = 1e300, hi = -1e300;
        for (const Var& o : r.expert_outputs) {
          lo = std::min(lo, o.value().at(b, c, t));
          hi = std::max(hi, o.value().at(b, c, t));
        }
        EXPECT_GE(yn, lo - 1e-9);
        EXPECT_LE(yn, hi + 1e-9);
      }
}

TEST(Forward, ParameterNamesAndUnifiedMode) {
  DisenTSModel m(toy_config(2));
  EXPECT_EQ(m.parameters().front().name, "expert0.weight");
  EXPECT_EQ(m.parameters().back().name, "gate.w_out");
  ModelConfig u = toy_config(1);
  u.unified = true;
  DisenTSModel unified(u);
  EXPECT_EQ(unified.parameters().size(), 2u);
  EXPECT_THROW(m.forward(Tensor({1, 2, 7}), false), ShapeError);
}

// The end-to-end toy: K=2, L_in=8, L_out=4, C=3, B=2.
TEST(EndToEnd, TotalLossGradCheck) {
  for (BackboneKind kind : {BackboneKind::Linear, BackboneKind::Mlp}) {
    ModelConfig cfg = toy_config(2);
    cfg.backbone.kind = kind;
    cfg.backbone.hidden = 5;
    DisenTSModel m(cfg);
    for (const NamedParam& p : m.parameters())
      if (p.var.value().rank() == 2) Var(p.var).mutable_value() = random_tensor(p.var.shape(), 11, 0.3);
    m.registry().update(0, random_tensor({8, 4}, 12, 0.3));
    m.registry().update(1, random_tensor({8, 4}, 13, 0.3));
    const Tensor x = toy_input(2, 3, 8, 14), y = toy_input(2, 3, 4, 15);
    auto loss = [&] {
      Rng rng(16);  // fixed dropout masks
      ForwardResult f = m.forward(x, true, &rng);
      Var l_fc = mse_loss(f.prediction, Var::constant(y));
      std::vector<Var> w;
      for (const auto& s : batch_signatures(m, f)) w.push_back(s.weights);
      return total_loss(l_fc, similarity_constraint(w, m.registry().gamma(), cfg.loss), cfg.loss.lambda);
    };
    EXPECT_LE(grad_check(loss, m.parameters()), 1e-4) << to_string(kind);
  }
}

Batch toy_batch(std::uint64_t seed) { return {toy_input(4, 3, 8, seed), toy_input(4, 3, 4, seed + 1)}; }

TEST(TrainStep, LossDecompositionAndFirstEma) {
  DisenTSModel m(toy_config(2));
  AdamState opt(m.parameters(), {});
  Rng rng(1);
  const Batch batch = toy_batch(20);

  // Signatures that the step will compute, from an identical forward pass.
  Rng probe_rng(1);
  ForwardResult f = m.forward(batch.x, true, &probe_rng);
  std::vector<ForecasterSignature> sigs = batch_signatures(m, f);

  StepReport r = train_step(m, batch, opt, rng);
  EXPECT_EQ(r.total, r.l_fc + m.config().loss.lambda * r.l_sc);
  ASSERT_EQ(r.epsilon.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(m.registry().gamma(e), sigs[e].weights.value());
    EXPECT_EQ(m.registry().updates(e), 1u);
  }
}

TEST(TrainStep, ZeroLambdaMatchesSkippedSimilarity) {
  ModelConfig cfg = toy_config(2);
  cfg.loss.lambda = 0.0;
  DisenTSModel a(cfg), b(cfg);
  AdamState oa(a.parameters(), {}), ob(b.parameters(), {});
  Rng ra(5), rb(5);
  for (std::uint64_t s = 0; s < 3; ++s) {
    train_step(a, toy_batch(30 + s), oa, ra);
    train_step(b, toy_batch(30 + s), ob, rb, StepOptions{true});
  }
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i].var.value(), b.parameters()[i].var.value()) << a.parameters()[i].name;
  EXPECT_EQ(a.registry().gamma(), b.registry().gamma());
}

TEST(TrainStep, Deterministic) {
  auto run = [] {
    DisenTSModel m(toy_config(2));
    AdamState opt(m.parameters(), {});
    Rng rng(7);
    std::vector<double> losses;
    for (std::uint64_t s = 0; s < 3; ++s) losses.push_back(train_step(m, toy_batch(40 + s), opt, rng).total);
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStep, NonFiniteInputNamesQuantity) {
  DisenTSModel m(toy_config(2));
  AdamState opt(m.parameters(), {});
  Rng rng(1);
  Batch batch = toy_batch(50);
  batch.y[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(m, batch, opt, rng);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("forecasting loss"), std::string::npos);
  }
}

TEST(Model, SnapshotRestore) {
  DisenTSModel m(toy_config(2));
  ModelState s = m.snapshot();
  AdamState opt(m.parameters(), {});
  Rng rng(1);
  train_step(m, toy_batch(60), opt, rng);
  EXPECT_NE(m.snapshot().params, s.params);
  m.restore(s);
  EXPECT_EQ(m.snapshot().params, s.params);
  EXPECT_EQ(m.registry().updates(0), 0u);
}

}  // namespace
}  // namespace disents
