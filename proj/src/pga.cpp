#include "wslab/pga.hpp"

#include <cmath>

#include "wslab/error.hpp"

namespace wslab {

void PGAConfig::validate() const {
  if (!(step_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
  if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be non-negative");
  if (restarts < 1) throw Error(ErrorCode::InvalidArgument, "restarts must be at least 1");
  if (!(init_scale > 0.0 && init_scale <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "init scale must lie in (0, 1]");
}

AscentResult projected_ascent(BlockObjective& objective, MatrixXd init, double radius,
                              double step_size, int iterations) {
  constexpr int kMaxHalvings = 20;
  project_rows_to_ball(init, radius);
  AscentResult res;
  res.deltas = std::move(init);
  res.value = objective.value(res.deltas);
  if (!std::isfinite(res.value)) throw Error(ErrorCode::NumericalFailure, "objective is not finite at start");
  res.trace.push_back(res.value);
  const double unit = radius * std::sqrt(static_cast<double>(res.deltas.rows()));
  double step = step_size;
  MatrixXd grad = objective.gradient();
  for (int it = 0; it < iterations; ++it) {
    const double gnorm = grad.norm();
    if (!(gnorm > 0.0) || !std::isfinite(gnorm)) break;
    const MatrixXd dir = grad / gnorm;
    bool accepted = false;
    for (int h = 0; h <= kMaxHalvings; ++h) {
      MatrixXd cand = res.deltas + (step * unit) * dir;
      project_rows_to_ball(cand, radius);
      const double v = objective.value(cand);
      if (std::isfinite(v) && v >= res.value) {
        res.deltas = std::move(cand);
        res.value = v;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    res.trace.push_back(res.value);
    res.iterations_used = it + 1;
    grad = objective.gradient();
    step = std::min(2.0 * step, step_size);
  }
  return res;
}

}  // namespace wslab
