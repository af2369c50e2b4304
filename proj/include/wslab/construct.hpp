#pragma once

#include <cstdint>
#include <string>

#include "wslab/featmaps.hpp"

namespace wslab {

struct ConstructConfig {
  int sphere_samples = 512;
  // Alignment threshold as a fraction of d^2 / n.
  double tau = 0.01;
  // Stop the candidate search once this fraction of rows is aligned.
  double target_fraction = 1.0;
  double lift_cap = 1.0;
  double concentration_eps = 0.1;
  double rank_tol = 1e-10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DeltaStar {
  VectorXd delta;
  Index aligned = 0;
  Index rank = 0;
};

struct SplitPair {
  VectorXd first;
  VectorXd second;
};

struct ConstructReport {
  VectorXd delta_star;
  Index aligned = 0;
  Index rank = 0;
  bool full_row_rank = false;
  SplitPair split;
  SplitPair lifted;
  VectorXd chosen;
  int chosen_member = 0;  // 0 or 1; always 0 in single-candidate mode
  double concentration[2] = {0.0, 0.0};
  double feature_change[2] = {0.0, 0.0};
  double ratio = 0.0;

  double chosen_change() const { return feature_change[chosen_member]; }
};

// Randomized search over delta = sqrt(d/n) U_r eps with eps on the
// radius-sqrt(r) sphere, where X^T = U D V^T. A candidate (or its negation)
// scores the number of rows j with x_j^T delta >= sqrt(tau) d / sqrt(n).
DeltaStar find_delta_star(const TokenMatrix& x, const ConstructConfig& cfg);

// delta/2 +- v/2 with v a unit-norm-sqrt(d) vector orthogonal to every row.
SplitPair split_delta(const TokenMatrix& x, const VectorXd& delta, double rank_tol = 1e-10);

// C M^T delta with C = min(cap, sqrt(d) / ||M^T delta||).
VectorXd lift_delta(const MatrixXd& M, const VectorXd& delta, double cap = 1.0);

// Fraction of rows j whose perturbed attention row is within eps of e_i.
double attention_concentration(const RAFParams& p, MapKind variant, const TokenMatrix& x, Index i,
                               const VectorXd& delta, double eps);

ConstructReport construct_perturbation(const RAFParams& p, MapKind variant, const TokenMatrix& x,
                                       Index i, const ConstructConfig& cfg);

// scale * sqrt(d) times the top right singular vector of the score matrix,
// signed so that the entries of X M delta have nonnegative mean.
VectorXd top_singular_perturbation(const RAFParams& p, MapKind variant, const TokenMatrix& x,
                                   double scale = 1.0);

std::string to_json(const ConstructReport& report);

}  // namespace wslab
