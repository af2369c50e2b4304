#include "wslab/attack.hpp"

#include <cmath>

#include "wslab/error.hpp"
#include "wslab/sensitivity.hpp"

namespace wslab {

std::string_view to_string(AttackObjective o) {
  switch (o) {
    case AttackObjective::err: return "err";
    case AttackObjective::ft_align: return "ft_align";
    case AttackObjective::rt_align: return "rt_align";
  }
  return "unknown";
}

std::string_view to_string(UpdateKind u) {
  return u == UpdateKind::finetuned ? "finetuned" : "retrained";
}

AttackObjective parse_objective(std::string_view name, bool* penalized) {
  bool pen = false;
  AttackObjective o;
  if (name == "err") {
    o = AttackObjective::err;
  } else if (name == "ft_align") {
    o = AttackObjective::ft_align;
  } else if (name == "rt_align") {
    o = AttackObjective::rt_align;
  } else if (name == "err_pen") {
    o = AttackObjective::err;
    pen = true;
  } else if (name == "ft_pen") {
    o = AttackObjective::ft_align;
    pen = true;
  } else if (name == "rt_pen") {
    o = AttackObjective::rt_align;
    pen = true;
  } else {
    throw Error(ErrorCode::ConfigError, "unknown attack objective '" + std::string(name) + "'");
  }
  if (penalized) *penalized = pen;
  return o;
}

UpdateKind parse_update(std::string_view name) {
  if (name == "finetuned" || name == "finetune") return UpdateKind::finetuned;
  if (name == "retrained" || name == "retrain") return UpdateKind::retrained;
  throw Error(ErrorCode::ConfigError, "unknown update kind '" + std::string(name) + "'");
}

UpdateKind default_update(AttackObjective o) {
  return o == AttackObjective::rt_align ? UpdateKind::retrained : UpdateKind::finetuned;
}

void AttackConfig::validate() const {
  if (!(penalty >= 0.0)) throw Error(ErrorCode::InvalidArgument, "penalty must be non-negative");
  optimizer.validate();
}

namespace {

// Linear read-outs of phi(X^i(delta)) that every loss is built from.
struct Readout {
  VectorXd align;  // phiX / ||phiX||^2 or P phiX / ||P phiX||^2
};

Readout make_readout(const AttackContext& ctx, const AttackConfig& cfg) {
  Readout r;
  if (cfg.objective == AttackObjective::ft_align) {
    const double sq = ctx.phiX.squaredNorm();
    if (!(sq > 0.0)) throw Error(ErrorCode::ZeroFeatureNorm, "phi(X) is zero");
    r.align = ctx.phiX / sq;
  } else if (cfg.objective == AttackObjective::rt_align) {
    if (!ctx.projector) throw Error(ErrorCode::InvalidArgument, "rt_align needs the training feature matrix");
    const VectorXd res = ctx.projector->apply(ctx.phiX);
    const double rn = res.norm();
    if (!(rn > 1e-10 * ctx.phiX.norm()))
      throw Error(ErrorCode::DegenerateProjection, "phi(X) lies in the training span");
    r.align = res / (rn * rn);
  }
  return r;
}

struct LossParts {
  double loss;
  VectorXd cotangent;
};

LossParts loss_parts(const AttackContext& ctx, const AttackConfig& cfg, const Readout& ro,
                     double f_base_x, const VectorXd& phi) {
  LossParts out;
  if (cfg.objective == AttackObjective::err) {
    const double res = phi.dot(ctx.theta_tuned) - ctx.y_delta;
    out.loss = res * res;
    out.cotangent = (2.0 * res) * ctx.theta_tuned;
  } else {
    const double c = phi.dot(ro.align) + 1.0;
    out.loss = c * c;
    out.cotangent = (2.0 * c) * ro.align;
  }
  if (cfg.penalty > 0.0) {
    const double g = phi.dot(ctx.theta_base) - f_base_x;
    out.loss += cfg.penalty * g * g;
    out.cotangent += (2.0 * cfg.penalty * g) * ctx.theta_base;
  }
  return out;
}

class AttackObjectiveFn final : public BlockObjective {
 public:
  AttackObjectiveFn(const AttackContext& ctx, const AttackConfig& cfg)
      : ctx_(ctx), cfg_(cfg), readout_(make_readout(ctx, cfg)), probe_(ctx.map.probe(ctx.x, {cfg.index})) {
    f_base_x_ = ctx.phiX.dot(ctx.theta_base);
  }

  double value(const MatrixXd& deltas) override {
    last_ = loss_parts(ctx_, cfg_, readout_, f_base_x_, probe_->evaluate(deltas));
    return last_.loss;
  }

  MatrixXd gradient() override { return probe_->pullback(last_.cotangent); }

 private:
  const AttackContext& ctx_;
  const AttackConfig& cfg_;
  Readout readout_;
  std::unique_ptr<RowProbe> probe_;
  double f_base_x_ = 0.0;
  LossParts last_;
};

}  // namespace

double attack_loss(const AttackContext& ctx, const AttackConfig& cfg, const VectorXd& delta) {
  const Readout ro = make_readout(ctx, cfg);
  const VectorXd phi = ctx.map.features(apply_perturbation(ctx.x, Perturbation::single(cfg.index, delta)));
  return loss_parts(ctx, cfg, ro, ctx.phiX.dot(ctx.theta_base), phi).loss;
}

AttackResult optimize_delta(const AttackContext& ctx, const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.index < 0 || cfg.index >= ctx.x.n())
    throw Error(ErrorCode::IndexOutOfRange, "attack index outside context", cfg.index);
  AttackObjectiveFn loss(ctx, cfg);
  NegatedObjective neg(loss);
  const double radius = std::sqrt(static_cast<double>(ctx.x.d()));
  AttackResult best;
  bool have = false;
  for (int r = 0; r < cfg.optimizer.restarts; ++r) {
    AscentResult res = projected_ascent(neg, initial_delta(cfg.optimizer, r, ctx.x, {cfg.index}), radius,
                                        cfg.optimizer.step_size, cfg.optimizer.iterations);
    const double value = -res.value;
    if (!have || value < best.loss) {
      have = true;
      best.delta = res.deltas.row(0).transpose();
      best.loss = value;
      best.trace.clear();
      for (double t : res.trace) best.trace.push_back(-t);
      best.restart = r;
    }
  }
  return best;
}

GeneralizationMeasure measure_pair(const GLMModel& base, const GLMModel& tuned, UpdateKind update,
                                   const ResidualProjector* projector, const VectorXd& phiX,
                                   const VectorXd& phiXd, double y, double y_delta) {
  GeneralizationMeasure m;
  m.pair = evaluate_pair(base, tuned, phiX, phiXd, y, y_delta);
  if (update == UpdateKind::finetuned) {
    m.coefficient = finetune_coefficient(phiX, phiXd);
  } else {
    if (!projector) throw Error(ErrorCode::InvalidArgument, "retrained measurement needs a projector");
    m.coefficient = feature_alignment(*projector, phiX, phiXd);
  }
  m.c_meas = std::abs(m.coefficient - 1.0) * std::abs(y - m.pair.f_x);
  const double slack = std::max(0.0, 2.0 - m.pair.gamma - m.c_meas);
  m.chain_bound = slack * slack;
  m.reference = (2.0 - m.pair.gamma) * (2.0 - m.pair.gamma);
  return m;
}

}  // namespace wslab
