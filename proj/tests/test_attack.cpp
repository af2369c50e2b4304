#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "wslab/attack.hpp"
#include "wslab/error.hpp"
#include "wslab/rng.hpp"
#include "wslab/sensitivity.hpp"

using namespace wslab;

namespace {

struct Trained {
  FeatureMap map;
  FeatureMatrix phi;
  VectorXd Y;
  GLMModel base;
  GLMModel ft;
  GLMModel rt;
  TokenMatrix x;
  VectorXd phiX;
  double y = 1.0;
  ResidualProjector proj;
};

Trained make_setup(MapKind kind, std::uint64_t seed) {
  const Index N = 8, n = 4, d = 6;
  Trained s;
  s.map = kind == MapKind::rf ? FeatureMap(sample_rf(n, d, 64, Activation::relu(), seed))
                              : FeatureMap(kind, sample_raf(d, seed));
  std::vector<TokenMatrix> train;
  s.Y.resize(N);
  for (Index i = 0; i < N; ++i) {
    train.push_back(synth_context(n, d, seed * 100 + static_cast<std::uint64_t>(i)));
    s.Y[i] = i % 2 ? 1.0 : -1.0;
  }
  s.phi = feature_matrix(s.map, train);
  s.base = fit(s.map, s.phi, s.Y);
  s.x = synth_context(n, d, seed * 100 + 99);
  s.phiX = s.map.features(s.x);
  s.ft = finetune(s.base, s.phiX, s.y);
  s.rt = retrain(s.base, s.phi, s.Y, s.phiX, s.y);
  s.proj = ResidualProjector(s.phi.phi);
  return s;
}

AttackConfig config(AttackObjective o, double penalty = 0.0) {
  AttackConfig c;
  c.objective = o;
  c.penalty = penalty;
  c.optimizer.iterations = 40;
  c.optimizer.restarts = 3;
  c.optimizer.seed = 5;
  return c;
}

}  // namespace

TEST(Attack, Parsing) {
  bool pen = false;
  EXPECT_EQ(parse_objective("rt_pen", &pen), AttackObjective::rt_align);
  EXPECT_TRUE(pen);
  EXPECT_EQ(parse_objective("ft_align", &pen), AttackObjective::ft_align);
  EXPECT_FALSE(pen);
  EXPECT_THROW(parse_objective("xent"), Error);
  EXPECT_EQ(default_update(AttackObjective::rt_align), UpdateKind::retrained);
  EXPECT_EQ(default_update(AttackObjective::err), UpdateKind::finetuned);
  EXPECT_EQ(parse_update("retrain"), UpdateKind::retrained);
}

TEST(Attack, LossFormulas) {
  const Trained s = make_setup(MapKind::rf, 1);
  Rng rng(2);
  const VectorXd delta = random_on_sphere(6, 1.5, rng);
  const VectorXd phid = s.map.features(apply_perturbation(s.x, Perturbation::single(0, delta)));
  const AttackContext ctx{s.map, s.x, -1.0, s.base.theta, s.ft.theta, s.phiX, &s.proj};
  EXPECT_NEAR(attack_loss(ctx, config(AttackObjective::err), delta), std::pow(phid.dot(s.ft.theta) + 1.0, 2), 1e-12);
  const double c = phid.dot(s.phiX) / s.phiX.squaredNorm() + 1.0;
  EXPECT_NEAR(attack_loss(ctx, config(AttackObjective::ft_align), delta), c * c, 1e-12);
  const VectorXd r = s.proj.apply(s.phiX);
  const double cr = phid.dot(r) / r.squaredNorm() + 1.0;
  EXPECT_NEAR(attack_loss(ctx, config(AttackObjective::rt_align), delta), cr * cr, 1e-9);
  const double g = phid.dot(s.base.theta) - s.phiX.dot(s.base.theta);
  EXPECT_NEAR(attack_loss(ctx, config(AttackObjective::ft_align, 0.3), delta), c * c + 0.3 * g * g, 1e-12);
}

TEST(Attack, ZeroPenaltyIsBitwiseUnpenalized) {
  const Trained s = make_setup(MapKind::raf, 3);
  const AttackContext ctx{s.map, s.x, -1.0, s.base.theta, s.ft.theta, s.phiX, &s.proj};
  const AttackResult a = optimize_delta(ctx, config(AttackObjective::err));
  const AttackResult b = optimize_delta(ctx, config(AttackObjective::err, 0.0));
  EXPECT_EQ(std::memcmp(a.delta.data(), b.delta.data(), sizeof(double) * a.delta.size()), 0);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Attack, TraceMonotoneAndFeasible) {
  for (MapKind kind : {MapKind::rf, MapKind::raf, MapKind::relu_raf}) {
    const Trained s = make_setup(kind, 4);
    for (AttackObjective o : {AttackObjective::err, AttackObjective::ft_align, AttackObjective::rt_align}) {
      const GLMModel& tuned = o == AttackObjective::rt_align ? s.rt : s.ft;
      const AttackContext ctx{s.map, s.x, -1.0, s.base.theta, tuned.theta, s.phiX, &s.proj};
      const AttackConfig cfg = config(o, 0.1);
      const AttackResult res = optimize_delta(ctx, cfg);
      EXPECT_LE(res.delta.norm(), std::sqrt(6.0) * (1 + 1e-12));
      for (std::size_t t = 1; t < res.trace.size(); ++t) EXPECT_LE(res.trace[t], res.trace[t - 1]);
      EXPECT_NEAR(res.loss, attack_loss(ctx, cfg, res.delta), 1e-9 * std::max(1.0, res.loss));
      for (int r = 0; r < cfg.optimizer.restarts; ++r) {
        const VectorXd init = initial_delta(cfg.optimizer, r, s.x, {0}).row(0).transpose();
        EXPECT_LE(res.loss, attack_loss(ctx, cfg, init) + 1e-12);
      }
    }
  }
}

TEST(Attack, RequiresProjectorForRetrainAlignment) {
  const Trained s = make_setup(MapKind::rf, 5);
  const AttackContext ctx{s.map, s.x, -1.0, s.base.theta, s.rt.theta, s.phiX, nullptr};
  EXPECT_THROW(optimize_delta(ctx, config(AttackObjective::rt_align)), Error);
  AttackConfig bad = config(AttackObjective::err);
  bad.index = 4;
  EXPECT_THROW(optimize_delta(ctx, bad), Error);
}

TEST(Measure, ChainBoundHolds) {
  for (MapKind kind : {MapKind::rf, MapKind::raf}) {
    const Trained s = make_setup(kind, 6);
    Rng rng(7);
    for (int t = 0; t < 40; ++t) {
      const VectorXd delta = random_on_sphere(6, std::sqrt(6.0) * (t % 4 + 1) / 4.0, rng);
      const VectorXd phid = s.map.features(apply_perturbation(s.x, Perturbation::single(t % 4, delta)));
      for (UpdateKind u : {UpdateKind::finetuned, UpdateKind::retrained}) {
        const GLMModel& tuned = u == UpdateKind::finetuned ? s.ft : s.rt;
        const GeneralizationMeasure m = measure_pair(s.base, tuned, u, &s.proj, s.phiX, phid, 1.0, -1.0);
        EXPECT_GE(m.pair.err, m.chain_bound - 1e-9);
        EXPECT_GE(m.pair.err, 0.0);
        EXPECT_NEAR(m.reference, std::pow(2.0 - m.pair.gamma, 2), 1e-15);
        // tuned(X^i(Delta)) - y = s + (coefficient - 1)(y - f(X)) with s the base gap.
        const double predicted = 1.0 + (m.pair.f_xd - m.pair.f_x) + (m.coefficient - 1.0) * (1.0 - m.pair.f_x);
        EXPECT_NEAR(m.pair.tuned_xd, predicted, 1e-8);
      }
    }
  }
}
