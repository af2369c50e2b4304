#include <gtest/gtest.h>

#include "oracles.hpp"
#include "wslab/error.hpp"
#include "wslab/glm.hpp"
#include "wslab/rng.hpp"
#include "wslab/sensitivity.hpp"

using namespace wslab;

namespace {

struct Problem {
  FeatureMap map;
  std::vector<TokenMatrix> samples;
  FeatureMatrix phi;
  VectorXd Y;
};

Problem make_problem(Index N, Index n, Index d, Index k, std::uint64_t seed) {
  Problem p;
  p.map = FeatureMap(sample_rf(n, d, k, Activation::relu(), seed));
  Rng rng(seed + 1);
  p.Y.resize(N);
  for (Index s = 0; s < N; ++s) {
    p.samples.push_back(synth_context(n, d, seed * 1000 + static_cast<std::uint64_t>(s)));
    p.Y[s] = (rng() & 1) ? 1.0 : -1.0;
  }
  p.phi = feature_matrix(p.map, p.samples);
  return p;
}

FeatureMatrix wrap(MatrixXd m) {
  FeatureMatrix f;
  f.phi = std::move(m);
  return f;
}

}  // namespace

TEST(Fit, SingleSampleClosedForm) {
  const Problem p = make_problem(1, 3, 4, 20, 1);
  const GLMModel m = fit(p.map, p.phi, p.Y);
  const VectorXd u = p.phi.phi.row(0).transpose();
  EXPECT_TRUE(m.theta.isApprox(u * p.Y[0] / u.squaredNorm(), 1e-12));
}

TEST(Fit, InterpolatesAndMatchesNormalEquations) {
  const Problem p = make_problem(12, 4, 5, 60, 2);
  const GLMModel m = fit(p.map, p.phi, p.Y);
  EXPECT_LE((p.phi.phi * m.theta - p.Y).norm(), 1e-8 * p.Y.norm());
  const MatrixXd K = p.phi.phi * p.phi.phi.transpose();
  const VectorXd oracle_theta = p.phi.phi.transpose() * K.ldlt().solve(p.Y);
  EXPECT_TRUE(m.theta.isApprox(oracle_theta, 1e-8));
  // Starting point outside the row span survives in the orthogonal complement.
  Rng rng(3);
  const VectorXd theta0 = gaussian_vector(60, rng);
  const GLMModel m0 = fit(p.map, p.phi, p.Y, theta0);
  EXPECT_LE((p.phi.phi * m0.theta - p.Y).norm(), 1e-8 * p.Y.norm());
  const ResidualProjector proj(p.phi.phi);
  EXPECT_TRUE(proj.apply(m0.theta).isApprox(proj.apply(theta0), 1e-8));
}

TEST(Fit, ShapeErrors) {
  const Problem p = make_problem(3, 2, 3, 10, 4);
  EXPECT_THROW(fit(p.map, p.phi, VectorXd::Ones(4)), Error);
  EXPECT_THROW(fit(p.map, wrap(MatrixXd::Ones(3, 9)), p.Y), Error);
}

TEST(Finetune, PredictsTargetAndIsIdempotent) {
  const Problem p = make_problem(6, 3, 4, 40, 5);
  const GLMModel base = fit(p.map, p.phi, p.Y);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const TokenMatrix x = synth_context(3, 4, 900 + s);
    const VectorXd phiX = p.map.features(x);
    const double y = s % 2 ? 1.0 : -1.0;
    const GLMModel ft = finetune(base, phiX, y);
    EXPECT_NEAR(ft.predict_features(phiX), y, 1e-10);
    const GLMModel again = finetune(ft, phiX, y);
    EXPECT_LE((again.theta - ft.theta).norm(), 1e-8);
  }
  EXPECT_THROW(finetune(base, VectorXd::Zero(40), 1.0), Error);
}

TEST(Retrain, FitsAugmentedSetAndIsIdentityOnTrainingPoint) {
  const Problem p = make_problem(8, 3, 4, 50, 6);
  const GLMModel base = fit(p.map, p.phi, p.Y);
  const TokenMatrix x = synth_context(3, 4, 77);
  const VectorXd phiX = p.map.features(x);
  const GLMModel rt = retrain(base, p.phi, p.Y, phiX, -1.0);
  EXPECT_NEAR(rt.predict_features(phiX), -1.0, 1e-8);
  EXPECT_LE((p.phi.phi * rt.theta - p.Y).norm(), 1e-8);
  const VectorXd seen = p.phi.phi.row(3).transpose();
  const GLMModel same = retrain(base, p.phi, p.Y, seen, p.Y[3]);
  EXPECT_LE((same.theta - base.theta).norm(), 1e-6);
}

TEST(Pair, ZeroPerturbation) {
  const Problem p = make_problem(5, 3, 4, 30, 7);
  const GLMModel base = fit(p.map, p.phi, p.Y);
  const TokenMatrix x = synth_context(3, 4, 8);
  const GLMModel ft = finetune(base, p.map.features(x), 1.0);
  const Perturbation none = Perturbation::single(0, VectorXd::Zero(4));
  const PairEvaluation same = evaluate_pair(base, ft, x, none, 1.0, 1.0);
  EXPECT_EQ(same.gamma, 0.0);
  EXPECT_NEAR(same.err, 0.0, 1e-18);
  const PairEvaluation flip = evaluate_pair(base, ft, x, none, 1.0, -1.0);
  EXPECT_NEAR(flip.err, 4.0, 1e-9);
}

TEST(Projector, IdempotentAndAnnihilatesRows) {
  const Problem p = make_problem(7, 3, 4, 30, 9);
  const ResidualProjector proj(p.phi.phi);
  EXPECT_EQ(proj.rank(), 7);
  Rng rng(10);
  const VectorXd v = gaussian_vector(30, rng);
  const VectorXd pv = proj.apply(v);
  EXPECT_TRUE(proj.apply(pv).isApprox(pv, 1e-12));
  EXPECT_LE((p.phi.phi * pv).norm(), 1e-10 * v.norm());
  const ResidualProjector empty(MatrixXd(0, 30));
  EXPECT_EQ(empty.apply(v), v);
}

TEST(Alignment, SpecialCases) {
  const Problem p = make_problem(4, 3, 4, 30, 11);
  const TokenMatrix x = synth_context(3, 4, 12);
  const VectorXd phiX = p.map.features(x);
  const ResidualProjector proj(p.phi.phi);
  EXPECT_NEAR(feature_alignment(proj, phiX, phiX), 1.0, 1e-12);
  const VectorXd phiXd = p.map.features(synth_context(3, 4, 13));
  EXPECT_NEAR(feature_alignment(wrap(MatrixXd(0, 30)), phiX, phiXd), finetune_coefficient(phiX, phiXd), 1e-12);
  try {
    feature_alignment(proj, p.phi.phi.row(1).transpose(), phiXd);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateProjection);
  }
}

TEST(Alignment, BoundedByWordSensitivity) {
  const Index n = 4, d = 5, k = 80;
  const Problem p = make_problem(10, n, d, k, 14);
  const ResidualProjector proj(p.phi.phi);
  Rng rng(15);
  for (int t = 0; t < 30; ++t) {
    const TokenMatrix x = synth_context(n, d, 2000 + static_cast<std::uint64_t>(t));
    const VectorXd phiX = p.map.features(x);
    const Perturbation pert = Perturbation::single(t % n, random_on_sphere(d, std::sqrt(double(d)), rng));
    const VectorXd phiXd = p.map.features(apply_perturbation(x, pert));
    const double ws = ws_ratio(p.map, x, pert);
    EXPECT_LE(std::abs(finetune_coefficient(phiX, phiXd) - 1.0), ws * (1 + 1e-12));
    FeatureMatrix aug;
    aug.phi.resize(11, k);
    aug.phi << p.phi.phi, phiX.transpose();
    const double lmin = kernel_diagnostics(aug).lambda_min;
    EXPECT_LE(std::abs(feature_alignment(proj, phiX, phiXd) - 1.0),
              ws * phiX.norm() / std::sqrt(lmin) * (1 + 1e-9));
  }
}

TEST(Kernel, DiagnosticsOracles) {
  const VectorXd row = VectorXd::LinSpaced(16, 0.1, 1.6);
  const KernelDiagnostics same = kernel_diagnostics(wrap(row.transpose().replicate(5, 1)));
  EXPECT_LE(same.lambda_min, 1e-8 * same.lambda_max);
  const Index k = 64;
  MatrixXd ortho = MatrixXd::Zero(4, k);
  for (Index j = 0; j < 4; ++j) ortho.row(j).segment(j * 16, 16).setConstant(std::sqrt(double(k) / 16.0));
  const KernelDiagnostics kd = kernel_diagnostics(wrap(ortho));
  EXPECT_NEAR(kd.lambda_min, double(k), 1e-10);
  EXPECT_NEAR(kd.condition, 1.0, 1e-12);
  EXPECT_LE(kd.residual, 1e-12);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  const Problem p = make_problem(3, 2, 3, 12, 16);
  const GLMModel m = fit(p.map, p.phi, p.Y);
  const auto path = oracle::temp_path("model.glm");
  write_glm(path, m);
  const GLMModel back = read_glm(path, p.map);
  EXPECT_EQ(back.theta, m.theta);
  EXPECT_EQ(back.theta0, m.theta0);
  const FeatureMap other(sample_rf(2, 3, 12, Activation::relu(), 99));
  try {
    read_glm(path, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(FeatureMatrix, ParallelMatchesSerial) {
  const Problem p = make_problem(9, 3, 4, 20, 17);
  const FeatureMatrix par = feature_matrix(p.map, p.samples, 3);
  EXPECT_EQ(par.phi, p.phi.phi);
}
