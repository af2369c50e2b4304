#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "wslab/featmaps.hpp"

namespace wslab {

struct FeatureMatrix {
  MatrixXd phi;  // N x p, one row per sample
  std::uint64_t source = 0;

  Index N() const { return phi.rows(); }
  Index p() const { return phi.cols(); }
};

// Rows are map.features(samples[s]); `jobs` > 1 spreads samples over threads.
FeatureMatrix feature_matrix(const FeatureMap& map, const std::vector<TokenMatrix>& samples,
                             int jobs = 1);

struct GLMModel {
  FeatureMap map;
  VectorXd theta;
  VectorXd theta0;

  Index p() const { return theta.size(); }
  double predict(const TokenMatrix& x) const { return map.features(x).dot(theta); }
  double predict_features(const VectorXd& phi) const { return phi.dot(theta); }
};

// Minimum-norm solution theta0 + pinv(Phi) (Y - Phi theta0). Singular values
// below rcond * sigma_max with rcond = 1e-12 * max(N, p) are discarded.
VectorXd pinv_solve(const MatrixXd& phi, const VectorXd& rhs);
GLMModel fit(const FeatureMap& map, const FeatureMatrix& phi, const VectorXd& Y,
             std::optional<VectorXd> theta0 = std::nullopt);

// One exact least-squares step on (X, y): theta + phiX (y - phiX^T theta) / ||phiX||^2.
GLMModel finetune(const GLMModel& model, const VectorXd& phiX, double y);

// Refit on the training set augmented with (phiX, y), from the same theta0.
GLMModel retrain(const GLMModel& model, const FeatureMatrix& phi, const VectorXd& Y,
                 const VectorXd& phiX, double y);

struct PairEvaluation {
  double f_x = 0.0;       // base model on X
  double f_xd = 0.0;      // base model on X^i(Delta)
  double tuned_xd = 0.0;  // updated model on X^i(Delta)
  double gamma = 0.0;
  double err = 0.0;
  double y = 0.0;
  double y_delta = 0.0;
};

PairEvaluation evaluate_pair(const GLMModel& base, const GLMModel& tuned, const TokenMatrix& x,
                             const Perturbation& p, double y, double y_delta);
PairEvaluation evaluate_pair(const GLMModel& base, const GLMModel& tuned, const VectorXd& phiX,
                             const VectorXd& phiXd, double y, double y_delta);

// Projector onto the orthogonal complement of the row span of Phi.
class ResidualProjector {
 public:
  ResidualProjector() = default;
  explicit ResidualProjector(const MatrixXd& phi);
  VectorXd apply(const VectorXd& v) const;
  Index rank() const { return basis_.cols(); }
  Index dim() const { return dim_; }

 private:
  MatrixXd basis_;  // p x r orthonormal basis of the row span
  Index dim_ = 0;
};

// phiXd^T P phiX / ||P phiX||^2 with P the residual projector.
double feature_alignment(const ResidualProjector& proj, const VectorXd& phiX, const VectorXd& phiXd);
double feature_alignment(const FeatureMatrix& phi, const VectorXd& phiX, const VectorXd& phiXd);

// phiXd^T phiX / ||phiX||^2, the coefficient of a fine-tuning step.
double finetune_coefficient(const VectorXd& phiX, const VectorXd& phiXd);

struct KernelDiagnostics {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double condition = 0.0;
  double residual = 0.0;  // ||Phi theta - Y|| / ||Y|| after refitting
};

// K = Phi Phi^T through a symmetric eigensolver. Without labels the refit
// target is the all-ones vector.
KernelDiagnostics kernel_diagnostics(const FeatureMatrix& phi,
                                     const std::optional<VectorXd>& labels = std::nullopt);

// "GLM1": magic, u32 version, u32 kind, u64 p, theta, theta0, u64 map
// fingerprint. Reading checks the fingerprint against the supplied map.
void write_glm(const std::filesystem::path& path, const GLMModel& model);
GLMModel read_glm(const std::filesystem::path& path, const FeatureMap& map);

}  // namespace wslab
