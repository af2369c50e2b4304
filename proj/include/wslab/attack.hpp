#pragma once

#include <string_view>
#include <vector>

#include "wslab/glm.hpp"
#include "wslab/pga.hpp"

namespace wslab {

enum class AttackObjective { err, ft_align, rt_align };
enum class UpdateKind { finetuned, retrained };

std::string_view to_string(AttackObjective o);
std::string_view to_string(UpdateKind u);
// Accepts err, ft_align, rt_align and the *_pen spellings (err_pen, ft_pen, rt_pen).
AttackObjective parse_objective(std::string_view name, bool* penalized = nullptr);
UpdateKind parse_update(std::string_view name);
// ft_align pairs with fine-tuning, rt_align with retraining; err with either.
UpdateKind default_update(AttackObjective o);

struct AttackConfig {
  AttackObjective objective = AttackObjective::err;
  double penalty = 0.0;
  PGAConfig optimizer{0.5, 300, 8, 0.5, IndexMode::fixed, 0, 0};
  Index index = 0;

  void validate() const;
};

// Everything the objectives read. theta_base is the pre-update model,
// theta_tuned the fine-tuned or retrained one; projector is required for
// rt_align only.
struct AttackContext {
  FeatureMap map;
  TokenMatrix x;
  double y_delta = 0.0;
  VectorXd theta_base;
  VectorXd theta_tuned;
  VectorXd phiX;
  const ResidualProjector* projector = nullptr;
};

struct AttackResult {
  VectorXd delta;
  double loss = 0.0;
  std::vector<double> trace;  // non-increasing
  int restart = 0;
};

// Loss at a given delta, through the plain feature path.
double attack_loss(const AttackContext& ctx, const AttackConfig& cfg, const VectorXd& delta);

// Projected gradient descent over ||delta|| <= sqrt(d); best restart wins,
// lowest index on ties.
AttackResult optimize_delta(const AttackContext& ctx, const AttackConfig& cfg);

// Measured quantities of one attacked pair.
struct GeneralizationMeasure {
  PairEvaluation pair;
  // Fine-tuning coefficient or feature alignment, matching the update kind.
  double coefficient = 0.0;
  // |coefficient - 1| * |y - f(X, theta_base)|
  double c_meas = 0.0;
  // max(0, 2 - gamma - c_meas)^2; err can never be below it.
  double chain_bound = 0.0;
  double reference = 0.0;  // (2 - gamma)^2
};

GeneralizationMeasure measure_pair(const GLMModel& base, const GLMModel& tuned, UpdateKind update,
                                   const ResidualProjector* projector, const VectorXd& phiX,
                                   const VectorXd& phiXd, double y, double y_delta);

}  // namespace wslab
