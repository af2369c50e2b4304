#include <gtest/gtest.h>

#include "oracles.hpp"
#include "wslab/error.hpp"
#include "wslab/featmaps.hpp"
#include "wslab/rng.hpp"

using namespace wslab;

namespace {

FeatureMap map_of(MapKind kind, Index n, Index d, std::uint64_t seed, Activation act = Activation::relu()) {
  switch (kind) {
    case MapKind::rf: return FeatureMap(sample_rf(n, d, 40, act, seed));
    case MapKind::drf: return FeatureMap(sample_drf(n, d, 24, 3, act, seed, 2.0));
    case MapKind::qkv: return FeatureMap(kind, sample_raf(d, seed, d / 2 + 1));
    default: return FeatureMap(kind, sample_raf(d, seed));
  }
}

const MapKind kAllKinds[] = {MapKind::rf, MapKind::drf, MapKind::raf, MapKind::relu_raf, MapKind::qkv};

}  // namespace

TEST(Activation, BasicsAndKinks) {
  const Activation r = Activation::relu();
  EXPECT_EQ(r(-2.0), 0.0);
  EXPECT_EQ(r(3.0), 3.0);
  EXPECT_EQ(r.derivative(0.0), 0.0);
  EXPECT_TRUE(r.near_kink(1e-9, 1e-6));
  EXPECT_FALSE(Activation::tanh().near_kink(0.0, 1e-6));
  const Activation t = Activation::table({-1.0, 0.0, 2.0}, {1.0, 0.0, 4.0});
  EXPECT_DOUBLE_EQ(t(1.0), 2.0);
  EXPECT_DOUBLE_EQ(t(-3.0), 3.0);  // left extrapolation, slope -1
  EXPECT_DOUBLE_EQ(t(3.0), 6.0);
  EXPECT_DOUBLE_EQ(t.derivative(0.0), 2.0);
  EXPECT_DOUBLE_EQ(t.lipschitz(), 2.0);
  EXPECT_EQ(Activation::parse("linear").kind(), ActivationKind::identity);
  EXPECT_THROW(Activation::parse("gelu"), Error);
  EXPECT_THROW(Activation::table({0.0, 0.0}, {1.0, 2.0}), Error);
}

TEST(Activation, GaussHermiteMoments) {
  const GaussHermite rule(64);
  double m2 = 0, m4 = 0, total = 0;
  for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
    total += rule.weights[j];
    m2 += rule.weights[j] * std::pow(rule.nodes[j], 2);
    m4 += rule.weights[j] * std::pow(rule.nodes[j], 4);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(m2, 1.0, 1e-12);
  EXPECT_NEAR(m4, 3.0, 1e-11);
}

TEST(Activation, SecondMomentMatchesMonteCarlo) {
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  const Activation act = Activation::tanh();
  const double beta = 1.7;
  double mc = 0.0;
  const int samples = 400000;
  for (int s = 0; s < samples; ++s) mc += std::pow(act(std::sqrt(beta) * g(rng)), 2);
  mc /= samples;
  EXPECT_NEAR(second_moment(act, beta, GaussHermite(64)), mc, 4e-3);
}

TEST(Activation, HeBeta) {
  EXPECT_NEAR(he_beta(Activation::relu()), 2.0, 1e-8);
  EXPECT_NEAR(he_beta(Activation::identity()), 1.0, 1e-8);
  try {
    he_beta(Activation::tanh());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSolution);
  }
}

TEST(Sampling, RfWeightVariance) {
  const RFParams p = sample_rf(10, 10, 2000, Activation::relu(), 3);
  const double var = p.V.squaredNorm() / static_cast<double>(p.V.size());
  EXPECT_NEAR(var * static_cast<double>(p.D()), 1.0, 0.05);
  // Pre-activations of a context with row norms sqrt(d) have unit variance.
  const TokenMatrix x = synth_context(10, 10, 4);
  const VectorXd pre = p.V * x.flat();
  EXPECT_NEAR(pre.squaredNorm() / 2000.0, 1.0, 0.1);
}

TEST(Sampling, RafFrobeniusNorm) {
  const RAFParams p = sample_raf(64, 8);
  EXPECT_NEAR(p.W.squaredNorm(), 64.0, 0.2 * 64.0);
  EXPECT_FALSE(p.has_qkv());
  const RAFParams q = sample_raf(64, 8, 16);
  EXPECT_EQ(q.WQ.rows(), 16);
  EXPECT_EQ(q.WV.cols(), 64);
}

TEST(Drf, SingleIdentityLayerIsLinear) {
  const DRFParams p = sample_drf(3, 4, 9, 1, Activation::identity(), 2, 1.0);
  const FeatureMap m(p);
  const TokenMatrix x = synth_context(3, 4, 1);
  EXPECT_TRUE(m.features(x).isApprox(p.layers[0] * x.flat(), 1e-14));
}

TEST(Drf, NormPreservedAcrossDepth) {
  const TokenMatrix x = synth_context(8, 16, 2);
  for (Index L : {1, 2, 4, 8}) {
    const FeatureMap m(sample_drf(8, 16, 1024, L, Activation::relu(), 10 + static_cast<std::uint64_t>(L)));
    const double r = m.features(x).norm() / std::sqrt(1024.0);
    EXPECT_GE(r, 0.85) << L;
    EXPECT_LE(r, 1.15) << L;
  }
}

TEST(Attention, ScoresEdgeCases) {
  RAFParams zero;
  zero.W = MatrixXd::Zero(5, 5);
  const TokenMatrix x = synth_context(4, 5, 1);
  const Scores s = raf_scores(zero, x);
  EXPECT_TRUE(s.weights.isApprox(MatrixXd::Constant(4, 4, 0.25)));
  const TokenMatrix one = synth_context(1, 5, 2);
  EXPECT_DOUBLE_EQ(raf_scores(sample_raf(5, 3), one).weights(0, 0), 1.0);
  EXPECT_TRUE(attention_features(sample_raf(5, 3), one, MapKind::raf).isApprox(MatrixXd(one.values())));
  const RowMatrix mean = x.values().colwise().mean().replicate(4, 1);
  EXPECT_TRUE(attention_features(zero, x, MapKind::raf).isApprox(MatrixXd(mean), 1e-14));
}

TEST(Attention, LogitVarianceNearOne) {
  const Index d = 128, n = 64;
  const TokenMatrix x = synth_context(n, d, 7);
  const MatrixXd S = raf_scores(sample_raf(d, 8), x).logits;
  const double mean = S.mean();
  const double var = (S.array() - mean).square().sum() / static_cast<double>(S.size() - 1);
  EXPECT_NEAR(var, 1.0, 0.2);
}

TEST(Attention, ReluRowWithoutPositiveScoreIsUniform) {
  RAFParams p;
  p.W = -MatrixXd::Identity(3, 3);
  RowMatrix v(2, 3);
  v << 1, 1, 1, 1, 2, 0.5;
  const TokenMatrix x = normalize_rows(TokenMatrix(v));
  const MatrixXd out = attention_features(p, x, MapKind::relu_raf);
  const RowMatrix mean = x.values().colwise().mean().replicate(2, 1);
  EXPECT_TRUE(out.isApprox(MatrixXd(mean), 1e-14));
}

TEST(Attention, MatchesEntrywiseOracle) {
  const Index n = 6, d = 5;
  const TokenMatrix x = synth_context(n, d, 3);
  const RAFParams p = sample_raf(d, 4, 3);
  const double c = 1.0 / std::sqrt(static_cast<double>(d));
  EXPECT_TRUE(attention_features(p, x, MapKind::raf).isApprox(MatrixXd(oracle::attention(x.values(), p.W, c, false)),
                                                                1e-12));
  EXPECT_TRUE(attention_features(p, x, MapKind::relu_raf)
                  .isApprox(MatrixXd(oracle::attention(x.values(), p.W, c, true)), 1e-12));
  const MatrixXd M = p.WQ.transpose() * p.WK;
  EXPECT_TRUE(attention_features(p, x, MapKind::qkv)
                  .isApprox(MatrixXd(oracle::attention(x.values(), M, 1.0 / std::sqrt(3.0), false, &p.WV)), 1e-12));
}

TEST(Attention, OutputRowsStayInBall) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Index d = 16;
    const TokenMatrix x = synth_context(12, d, s);
    for (MapKind k : {MapKind::raf, MapKind::relu_raf}) {
      const MatrixXd out = attention_features(sample_raf(d, s + 100), x, k);
      for (Index i = 0; i < out.rows(); ++i) EXPECT_LE(out.row(i).norm(), std::sqrt(16.0) + 1e-9);
    }
  }
}

TEST(Probe, MatchesFeaturePath) {
  for (MapKind kind : kAllKinds) {
    const Index n = 5, d = 6;
    const TokenMatrix x = synth_context(n, d, 21);
    const FeatureMap m = map_of(kind, n, d, 22);
    Rng rng(23);
    MatrixXd deltas(2, d);
    fill_gaussian(deltas, 0.7, rng);
    auto probe = m.probe(x, {1, 3});
    const VectorXd via_probe = probe->evaluate(deltas);
    Perturbation p;
    p.entries = {{1, deltas.row(0).transpose()}, {3, deltas.row(1).transpose()}};
    EXPECT_TRUE(via_probe.isApprox(m.features(apply_perturbation(x, p)), 1e-12)) << to_string(kind);
    EXPECT_TRUE(probe->evaluate(MatrixXd::Zero(2, d)).isApprox(m.features(x), 1e-13)) << to_string(kind);
  }
}

TEST(Probe, PullbackMatchesFiniteDifferences) {
  for (MapKind kind : kAllKinds) {
    const Index n = 4, d = 5;
    const TokenMatrix x = synth_context(n, d, 31);
    const FeatureMap m = map_of(kind, n, d, 32, Activation::tanh());
    Rng rng(33);
    const VectorXd cot = gaussian_vector(m.feature_dim(n), rng);
    MatrixXd deltas(2, d);
    fill_gaussian(deltas, 0.5, rng);
    auto probe = m.probe(x, {0, 2});
    probe->evaluate(deltas);
    const MatrixXd g = probe->pullback(cot);
    auto f = [&](const VectorXd& v) {
      const MatrixXd dl = Eigen::Map<const RowMatrix>(v.data(), 2, d);
      auto pr = m.probe(x, {0, 2});
      return pr->evaluate(dl).dot(cot);
    };
    const RowMatrix rd = deltas;
    const VectorXd flat = Eigen::Map<const VectorXd>(rd.data(), rd.size());
    const VectorXd fd = oracle::fd_gradient(f, flat, 1e-4);
    const RowMatrix rg = g;
    const VectorXd gflat = Eigen::Map<const VectorXd>(rg.data(), rg.size());
    EXPECT_LE((gflat - fd).norm(), 1e-6 * std::max(1.0, fd.norm())) << to_string(kind);
  }
}

TEST(Gradient, ZeroAtZeroDelta) {
  for (MapKind kind : kAllKinds) {
    const TokenMatrix x = synth_context(4, 5, 41);
    const FeatureMap m = map_of(kind, 4, 5, 42, Activation::tanh());
    const DeltaGradient g = grad_wrt_delta(m, x, 2, VectorXd::Zero(5), ProbeObjective::diff_norm_sq);
    EXPECT_EQ(g.value, 0.0);
    EXPECT_LE(g.gradient.norm(), 1e-12);
  }
}

TEST(Gradient, RfIdentityClosedForm) {
  const Index n = 3, d = 4;
  const RFParams p = sample_rf(n, d, 7, Activation::identity(), 5);
  const FeatureMap m(p);
  const TokenMatrix x = synth_context(n, d, 6);
  Rng rng(7);
  const VectorXd delta = gaussian_vector(d, rng);
  const MatrixXd Vi = p.V.middleCols(d, d);
  const DeltaGradient g = grad_wrt_delta(m, x, 1, delta, ProbeObjective::diff_norm_sq);
  EXPECT_TRUE(g.gradient.isApprox(2.0 * Vi.transpose() * Vi * delta, 1e-12));
  EXPECT_NEAR(g.value, (Vi * delta).squaredNorm(), 1e-12);
}

TEST(Gradient, InnerProductObjective) {
  const Index n = 4, d = 3;
  const TokenMatrix x = synth_context(n, d, 50);
  for (MapKind kind : kAllKinds) {
    const FeatureMap m = map_of(kind, n, d, 51, Activation::tanh());
    Rng rng(52);
    const VectorXd v = gaussian_vector(m.feature_dim(n), rng);
    const VectorXd delta = gaussian_vector(d, rng) * 0.5;
    const DeltaGradient g = grad_wrt_delta(m, x, 3, delta, ProbeObjective::inner_product, v);
    auto f = [&](const VectorXd& dl) { return m.features(apply_perturbation(x, Perturbation::single(3, dl))).dot(v); };
    EXPECT_NEAR(g.value, f(delta), 1e-12 * std::max(1.0, std::abs(g.value)));
    const VectorXd fd = oracle::fd_gradient(f, delta, 1e-4);
    EXPECT_LE((g.gradient - fd).norm(), 1e-5 * std::max(1.0, fd.norm())) << to_string(kind);
  }
}

TEST(Gradient, ReluKinkFlag) {
  const TokenMatrix x = synth_context(2, 3, 1);
  RFParams p = sample_rf(2, 3, 4, Activation::relu(), 2);
  // Force a pre-activation of exactly zero on the first unit.
  p.V.row(0).setZero();
  const DeltaGradient g = grad_wrt_delta(FeatureMap(p), x, 0, VectorXd::Zero(3), ProbeObjective::diff_norm_sq);
  EXPECT_TRUE(g.near_kink);
}

TEST(Lipschitz, RfFeatureChangeBounded) {
  const Index n = 6, d = 8;
  const RFParams p = sample_rf(n, d, 50, Activation::relu(), 60);
  const FeatureMap m(p);
  const double bound = m.lipschitz() * operator_norm(p.V);
  Rng rng(61);
  for (int t = 0; t < 50; ++t) {
    const TokenMatrix x = synth_context(n, d, 100 + static_cast<std::uint64_t>(t));
    const VectorXd delta = random_on_sphere(d, std::sqrt(8.0) * (t % 5 + 1) / 5.0, rng);
    const Index i = t % n;
    const double change = (m.features(apply_perturbation(x, Perturbation::single(i, delta))) - m.features(x)).norm();
    EXPECT_LE(change, bound * delta.norm() * (1 + 1e-12));
  }
}

TEST(FeatureMap, ShapeChecks) {
  const FeatureMap m(sample_rf(4, 5, 10, Activation::relu(), 1));
  EXPECT_EQ(m.feature_dim(4), 10);
  EXPECT_THROW(m.features(synth_context(3, 5, 1)), Error);
  const FeatureMap a(MapKind::raf, sample_raf(5, 2));
  EXPECT_EQ(a.feature_dim(7), 35);
  EXPECT_FALSE(a.input_n().has_value());
  EXPECT_THROW(a.features(synth_context(3, 4, 1)), Error);
  EXPECT_EQ(parse_map_kind("relu-raf"), MapKind::relu_raf);
  EXPECT_THROW(parse_map_kind("gru"), Error);
}
