#include "wslab/glm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "wslab/error.hpp"
#include "wslab/params_io.hpp"

namespace wslab {

FeatureMatrix feature_matrix(const FeatureMap& map, const std::vector<TokenMatrix>& samples, int jobs) {
  FeatureMatrix out;
  if (samples.empty()) return out;
  const Index p = map.feature_dim(samples.front().n());
  out.phi.resize(static_cast<Index>(samples.size()), p);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t s = begin; s < samples.size(); s += step)
      out.phi.row(static_cast<Index>(s)) = map.features(samples[s]).transpose();
  };
  const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, static_cast<int>(samples.size())));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  std::uint64_t h = map.fingerprint();
  for (const auto& s : samples) h = fingerprint(MatrixXd(s.values()), h);
  out.source = h;
  return out;
}

VectorXd pinv_solve(const MatrixXd& phi, const VectorXd& rhs) {
  if (phi.rows() != rhs.size()) throw Error(ErrorCode::DimMismatch, "rhs length differs from row count");
  Eigen::BDCSVD<MatrixXd> svd(phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  VectorXd out = VectorXd::Zero(phi.cols());
  if (sv.size() == 0 || !(sv[0] > 0.0)) return out;
  const double rcond = 1e-12 * static_cast<double>(std::max(phi.rows(), phi.cols()));
  const double cut = rcond * sv[0];
  const VectorXd coeffs = svd.matrixU().transpose() * rhs;
  for (Index t = 0; t < sv.size(); ++t)
    if (sv[t] > cut) out.noalias() += (coeffs[t] / sv[t]) * svd.matrixV().col(t);
  return out;
}

GLMModel fit(const FeatureMap& map, const FeatureMatrix& phi, const VectorXd& Y,
             std::optional<VectorXd> theta0) {
  if (Y.size() != phi.N()) throw Error(ErrorCode::DimMismatch, "label count differs from N");
  if (map.input_n() ? phi.p() != map.feature_dim(*map.input_n()) : phi.p() % map.feature_dim(1) != 0)
    throw Error(ErrorCode::DimMismatch, "feature matrix width does not match the map");
  GLMModel m;
  m.map = map;
  m.theta0 = theta0 ? std::move(*theta0) : VectorXd::Zero(phi.p());
  if (m.theta0.size() != phi.p()) throw Error(ErrorCode::DimMismatch, "theta0 length differs from p");
  m.theta = m.theta0 + pinv_solve(phi.phi, Y - phi.phi * m.theta0);
  return m;
}

GLMModel finetune(const GLMModel& model, const VectorXd& phiX, double y) {
  if (phiX.size() != model.p()) throw Error(ErrorCode::DimMismatch, "feature length differs from p");
  const double sq = phiX.squaredNorm();
  if (!(sq > 0.0)) throw Error(ErrorCode::ZeroFeatureNorm, "cannot fine-tune on a zero feature vector");
  GLMModel out = model;
  out.theta += phiX * ((y - phiX.dot(model.theta)) / sq);
  return out;
}

GLMModel retrain(const GLMModel& model, const FeatureMatrix& phi, const VectorXd& Y,
                 const VectorXd& phiX, double y) {
  FeatureMatrix aug;
  aug.phi.resize(phi.N() + 1, phi.p());
  aug.phi.topRows(phi.N()) = phi.phi;
  aug.phi.row(phi.N()) = phiX.transpose();
  VectorXd Yr(Y.size() + 1);
  Yr << Y, y;
  return fit(model.map, aug, Yr, model.theta0);
}

PairEvaluation evaluate_pair(const GLMModel& base, const GLMModel& tuned, const VectorXd& phiX,
                             const VectorXd& phiXd, double y, double y_delta) {
  PairEvaluation e;
  e.y = y;
  e.y_delta = y_delta;
  e.f_x = base.predict_features(phiX);
  e.f_xd = base.predict_features(phiXd);
  e.tuned_xd = tuned.predict_features(phiXd);
  e.gamma = std::abs(e.f_xd - e.f_x);
  e.err = (e.tuned_xd - y_delta) * (e.tuned_xd - y_delta);
  return e;
}

PairEvaluation evaluate_pair(const GLMModel& base, const GLMModel& tuned, const TokenMatrix& x,
                             const Perturbation& p, double y, double y_delta) {
  const VectorXd phiX = base.map.features(x);
  const VectorXd phiXd = base.map.features(apply_perturbation(x, p));
  return evaluate_pair(base, tuned, phiX, phiXd, y, y_delta);
}

ResidualProjector::ResidualProjector(const MatrixXd& phi) : dim_(phi.cols()) {
  if (phi.rows() == 0) {
    basis_.resize(dim_, 0);
    return;
  }
  Eigen::BDCSVD<MatrixXd> svd(phi, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double rcond = 1e-12 * static_cast<double>(std::max(phi.rows(), phi.cols()));
  Index r = 0;
  if (sv.size() > 0 && sv[0] > 0.0)
    while (r < sv.size() && sv[r] > rcond * sv[0]) ++r;
  basis_ = svd.matrixV().leftCols(r);
}

VectorXd ResidualProjector::apply(const VectorXd& v) const {
  if (v.size() != dim_) throw Error(ErrorCode::DimMismatch, "vector length differs from feature dim");
  if (basis_.cols() == 0) return v;
  return v - basis_ * (basis_.transpose() * v);
}

double feature_alignment(const ResidualProjector& proj, const VectorXd& phiX, const VectorXd& phiXd) {
  const VectorXd r = proj.apply(phiX);
  const double rn = r.norm();
  if (!(rn > 1e-10 * phiX.norm()))
    throw Error(ErrorCode::DegenerateProjection, "phi(X) lies in the training span");
  return phiXd.dot(r) / (rn * rn);
}

double feature_alignment(const FeatureMatrix& phi, const VectorXd& phiX, const VectorXd& phiXd) {
  return feature_alignment(ResidualProjector(phi.phi), phiX, phiXd);
}

double finetune_coefficient(const VectorXd& phiX, const VectorXd& phiXd) {
  const double sq = phiX.squaredNorm();
  if (!(sq > 0.0)) throw Error(ErrorCode::ZeroFeatureNorm, "phi(X) is zero");
  return phiXd.dot(phiX) / sq;
}

KernelDiagnostics kernel_diagnostics(const FeatureMatrix& phi, const std::optional<VectorXd>& labels) {
  if (phi.N() < 1) throw Error(ErrorCode::InvalidArgument, "kernel diagnostics need N >= 1");
  const MatrixXd K = phi.phi * phi.phi.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(K, Eigen::EigenvaluesOnly);
  KernelDiagnostics out;
  out.lambda_min = eig.eigenvalues()(0);
  out.lambda_max = eig.eigenvalues()(phi.N() - 1);
  out.condition = out.lambda_min > 0.0 ? out.lambda_max / out.lambda_min
                                       : std::numeric_limits<double>::infinity();
  const VectorXd Y = labels ? *labels : VectorXd::Ones(phi.N());
  if (Y.size() != phi.N()) throw Error(ErrorCode::DimMismatch, "label count differs from N");
  const VectorXd theta = pinv_solve(phi.phi, Y);
  out.residual = (phi.phi * theta - Y).norm() / Y.norm();
  return out;
}

namespace {
constexpr std::uint32_t kGlmVersion = 1;
}

void write_glm(const std::filesystem::path& path, const GLMModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::WriteError, "cannot open " + path.string());
  out.write("GLM1", 4);
  binio::write_u32(out, kGlmVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(model.map.kind()));
  binio::write_u64(out, static_cast<std::uint64_t>(model.p()));
  binio::write_vector(out, model.theta);
  binio::write_vector(out, model.theta0);
  binio::write_u64(out, model.map.fingerprint());
  if (!out) throw Error(ErrorCode::WriteError, "write failed for " + path.string());
}

GLMModel read_glm(const std::filesystem::path& path, const FeatureMap& map) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ShortRead, "cannot open " + path.string());
  binio::expect_magic(in, "GLM1");
  const auto version = binio::read_u32(in);
  if (version != kGlmVersion) throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(version));
  const auto kind = binio::read_u32(in);
  if (kind != static_cast<std::uint32_t>(map.kind()))
    throw Error(ErrorCode::DimMismatch, "checkpoint was trained on a different map kind");
  const auto p = static_cast<Index>(binio::read_u64(in));
  GLMModel m;
  m.map = map;
  m.theta = binio::read_vector(in);
  m.theta0 = binio::read_vector(in);
  if (m.theta.size() != p || m.theta0.size() != p) throw Error(ErrorCode::DimMismatch, "parameter length mismatch");
  if (binio::read_u64(in) != map.fingerprint())
    throw Error(ErrorCode::DimMismatch, "checkpoint fingerprint does not match the feature map");
  return m;
}

}  // namespace wslab
