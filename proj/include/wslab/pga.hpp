#pragma once

#include <cstdint>
#include <vector>

#include "wslab/linalg.hpp"

namespace wslab {

enum class IndexMode { fixed, sweep_all };

struct PGAConfig {
  // Initial and maximal step, in units of sqrt(d) along the normalized gradient.
  double step_size = 0.5;
  int iterations = 200;
  int restarts = 10;
  double init_scale = 0.5;
  IndexMode index_mode = IndexMode::fixed;
  Index index = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Objective over a block of m row-perturbations (m x d). value() may be
// called many times; gradient() refers to the most recent value() point.
class BlockObjective {
 public:
  virtual ~BlockObjective() = default;
  virtual double value(const MatrixXd& deltas) = 0;
  virtual MatrixXd gradient() = 0;
};

struct AscentResult {
  MatrixXd deltas;
  double value = 0.0;
  std::vector<double> trace;
  int iterations_used = 0;
};

// Projected gradient ascent with backtracking: a step is accepted when the
// objective does not decrease, otherwise the step halves (at most 20 times).
// Each row of the iterate stays inside the ball of `radius`.
AscentResult projected_ascent(BlockObjective& objective, MatrixXd init, double radius,
                              double step_size, int iterations);

// Negates an objective so the ascent routine minimizes it.
class NegatedObjective final : public BlockObjective {
 public:
  explicit NegatedObjective(BlockObjective& inner) : inner_(inner) {}
  double value(const MatrixXd& deltas) override { return -inner_.value(deltas); }
  MatrixXd gradient() override { return -inner_.gradient(); }

 private:
  BlockObjective& inner_;
};

}  // namespace wslab
