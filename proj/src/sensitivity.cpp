#include "wslab/sensitivity.hpp"

#include <cmath>

#include <json.hpp>

#include "wslab/error.hpp"
#include "wslab/rng.hpp"

namespace wslab {

namespace {

double feature_norm(const VectorXd& phi) {
  const double norm = phi.norm();
  if (!(norm > 0.0)) throw Error(ErrorCode::ZeroFeatureNorm, "feature vector of X is zero");
  return norm;
}

class DiffNormObjective final : public BlockObjective {
 public:
  DiffNormObjective(const FeatureMap& map, const TokenMatrix& x, std::vector<Index> rows)
      : probe_(map.probe(x, std::move(rows))) {
    base_ = probe_->evaluate(MatrixXd::Zero(static_cast<Index>(probe_->rows().size()), x.d()));
  }

  double value(const MatrixXd& deltas) override {
    diff_ = probe_->evaluate(deltas) - base_;
    return diff_.squaredNorm();
  }

  MatrixXd gradient() override { return probe_->pullback(2.0 * diff_); }
  const VectorXd& base() const { return base_; }

 private:
  std::unique_ptr<RowProbe> probe_;
  VectorXd base_;
  VectorXd diff_;
};

SensitivityEstimate run_rows(const FeatureMap& map, const TokenMatrix& x, std::vector<Index> rows,
                             const PGAConfig& cfg, double denominator) {
  const double radius = std::sqrt(static_cast<double>(x.d()));
  DiffNormObjective objective(map, x, rows);
  SensitivityEstimate best;
  best.index = rows.front();
  best.denominator = denominator;
  bool have = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    AscentResult res =
        projected_ascent(objective, initial_delta(cfg, r, x, rows), radius, cfg.step_size, cfg.iterations);
    if (!have || res.value > best.numerator * best.numerator) {
      have = true;
      best.deltas = std::move(res.deltas);
      best.numerator = std::sqrt(res.value);
      best.trace = std::move(res.trace);
      best.iterations_used = res.iterations_used;
      best.restart = r;
    }
  }
  best.ratio = best.numerator / best.denominator;
  return best;
}

}  // namespace

double ws_ratio(const FeatureMap& map, const TokenMatrix& x, const Perturbation& p) {
  const VectorXd base = map.features(x);
  const double denom = feature_norm(base);
  return (map.features(apply_perturbation(x, p)) - base).norm() / denom;
}

MatrixXd initial_delta(const PGAConfig& cfg, int restart, const TokenMatrix& x,
                       const std::vector<Index>& rows) {
  const Index d = x.d();
  const double radius = cfg.init_scale * std::sqrt(static_cast<double>(d));
  Rng rng = make_rng(cfg.seed, {tag("restart"), static_cast<std::uint64_t>(restart)});
  MatrixXd init(static_cast<Index>(rows.size()), d);
  for (Index j = 0; j < init.rows(); ++j) {
    if (restart == 1) {
      std::uniform_int_distribution<Index> pick(0, x.n() - 1);
      const auto row = x.row(pick(rng));
      const double norm = row.norm();
      if (norm > 0.0) {
        init.row(j) = row * (radius / norm);
        continue;
      }
    }
    init.row(j) = random_on_sphere(d, radius, rng).transpose();
  }
  return init;
}

SensitivityEstimate estimate_ws(const FeatureMap& map, const TokenMatrix& x, const PGAConfig& cfg) {
  cfg.validate();
  const double denom = feature_norm(map.features(x));
  if (cfg.index_mode == IndexMode::fixed) {
    if (cfg.index < 0 || cfg.index >= x.n())
      throw Error(ErrorCode::IndexOutOfRange, "sensitivity index outside context", cfg.index);
    return run_rows(map, x, {cfg.index}, cfg, denom);
  }
  SensitivityEstimate best;
  for (Index i = 0; i < x.n(); ++i) {
    PGAConfig sub = cfg;
    sub.seed = derive_seed(cfg.seed, {tag("index"), static_cast<std::uint64_t>(i)});
    SensitivityEstimate est = run_rows(map, x, {i}, sub, denom);
    if (i == 0 || est.ratio > best.ratio) best = std::move(est);
  }
  return best;
}

SensitivityEstimate estimate_ws_multi(const FeatureMap& map, const TokenMatrix& x, Index m,
                                      const PGAConfig& cfg) {
  cfg.validate();
  if (m < 1 || m > x.n()) throw Error(ErrorCode::IndexOutOfRange, "word count outside [1, n]", m);
  const double denom = feature_norm(map.features(x));
  std::vector<Index> rows(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) rows[j] = j;
  return run_rows(map, x, std::move(rows), cfg, denom);
}

std::string to_json(const SensitivityEstimate& est, const FeatureMap& map, const TokenMatrix& x,
                    std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["map"] = std::string(to_string(map.kind()));
  j["n"] = x.n();
  j["d"] = x.d();
  j["k"] = map.k();
  j["L"] = map.depth();
  j["seed"] = seed;
  j["index"] = est.index;
  j["ratio"] = est.ratio;
  j["numerator"] = est.numerator;
  j["denominator"] = est.denominator;
  j["iterations_used"] = est.iterations_used;
  return j.dump();
}

}  // namespace wslab
