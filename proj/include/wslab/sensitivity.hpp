#pragma once

#include <string>
#include <vector>

#include "wslab/featmaps.hpp"
#include "wslab/pga.hpp"

namespace wslab {

struct SensitivityEstimate {
  Index index = 0;
  // One row per perturbed token (a single row for the one-word functional).
  MatrixXd deltas;
  double numerator = 0.0;
  double denominator = 0.0;
  double ratio = 0.0;
  std::vector<double> trace;
  int iterations_used = 0;
  int restart = 0;

  VectorXd delta() const { return deltas.row(0).transpose(); }
};

// ||phi(X^P) - phi(X)|| / ||phi(X)|| evaluated through the plain feature path.
double ws_ratio(const FeatureMap& map, const TokenMatrix& x, const Perturbation& p);

// Starting point of restart `restart` for the given rows. Restart 1 starts
// along a randomly chosen context row; every other restart along a random
// direction. Norm is init_scale * sqrt(d) per row.
MatrixXd initial_delta(const PGAConfig& cfg, int restart, const TokenMatrix& x,
                       const std::vector<Index>& rows);

SensitivityEstimate estimate_ws(const FeatureMap& map, const TokenMatrix& x, const PGAConfig& cfg);
// Jointly perturbs rows 0..m-1.
SensitivityEstimate estimate_ws_multi(const FeatureMap& map, const TokenMatrix& x, Index m,
                                      const PGAConfig& cfg);

// {map, n, d, k, L, seed, index, ratio, numerator, denominator, iterations_used}
std::string to_json(const SensitivityEstimate& est, const FeatureMap& map, const TokenMatrix& x,
                    std::uint64_t seed);

}  // namespace wslab
