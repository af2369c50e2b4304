#include "wslab/construct.hpp"

#include <cmath>

#include <json.hpp>

#include "wslab/error.hpp"
#include "wslab/rng.hpp"

namespace wslab {

void ConstructConfig::validate() const {
  if (sphere_samples < 1) throw Error(ErrorCode::InvalidArgument, "need at least one sphere sample");
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be positive");
  if (!(target_fraction > 0.0 && target_fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "target fraction must lie in (0, 1]");
  if (!(lift_cap > 0.0)) throw Error(ErrorCode::InvalidArgument, "lift cap must be positive");
  if (!(concentration_eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "concentration eps must be positive");
}

namespace {

Index numerical_rank(const VectorXd& sv, double rel_tol) {
  if (sv.size() == 0 || !(sv[0] > 0.0)) return 0;
  const double cut = rel_tol * sv[0];
  Index r = 0;
  while (r < sv.size() && sv[r] > cut) ++r;
  return r;
}

}  // namespace

DeltaStar find_delta_star(const TokenMatrix& x, const ConstructConfig& cfg) {
  cfg.validate();
  const MatrixXd Xt = x.values().transpose();
  Eigen::BDCSVD<MatrixXd> svd(Xt, Eigen::ComputeThinU);
  const Index r = numerical_rank(svd.singularValues(), cfg.rank_tol);
  if (r == 0) throw Error(ErrorCode::RankZero, "context matrix has rank zero");
  const double n = static_cast<double>(x.n());
  const double d = static_cast<double>(x.d());
  const double scale = std::sqrt(d / n);
  const double threshold = std::sqrt(cfg.tau) * d / std::sqrt(n);
  const auto Ur = svd.matrixU().leftCols(r);
  const MatrixXd XU = x.values() * Ur;
  const Index goal = static_cast<Index>(std::ceil(cfg.target_fraction * n));
  Rng rng = make_rng(cfg.seed, {tag("delta-star")});

  DeltaStar best;
  best.rank = r;
  best.aligned = -1;
  for (int s = 0; s < cfg.sphere_samples; ++s) {
    const VectorXd eps = random_on_sphere(r, std::sqrt(static_cast<double>(r)), rng);
    const VectorXd proj = scale * (XU * eps);
    const Index pos = (proj.array() >= threshold).count();
    const Index neg = (proj.array() <= -threshold).count();
    const double sign = neg > pos ? -1.0 : 1.0;
    const Index count = std::max(pos, neg);
    if (count > best.aligned) {
      best.aligned = count;
      best.delta = sign * scale * (Ur * eps);
      if (count >= goal) break;
    }
  }
  return best;
}

SplitPair split_delta(const TokenMatrix& x, const VectorXd& delta, double rank_tol) {
  const Index d = x.d();
  if (delta.size() != d) throw Error(ErrorCode::DimMismatch, "delta length differs from d");
  Eigen::BDCSVD<MatrixXd> svd(MatrixXd(x.values()), Eigen::ComputeFullV);
  const Index r = numerical_rank(svd.singularValues(), rank_tol);
  if (r >= d) throw Error(ErrorCode::FullRowRank, "rows span the whole embedding space");
  const VectorXd v = svd.matrixV().col(d - 1).normalized() * std::sqrt(static_cast<double>(d));
  return {0.5 * delta + 0.5 * v, 0.5 * delta - 0.5 * v};
}

VectorXd lift_delta(const MatrixXd& M, const VectorXd& delta, double cap) {
  const VectorXd u = M.transpose() * delta;
  const double norm = u.norm();
  if (norm < 1e-12) throw Error(ErrorCode::ZeroLift, "M^T delta vanishes");
  const double C = std::min(cap, std::sqrt(static_cast<double>(M.rows())) / norm);
  return C * u;
}

double attention_concentration(const RAFParams& p, MapKind variant, const TokenMatrix& x, Index i,
                               const VectorXd& delta, double eps) {
  const TokenMatrix xp = apply_perturbation(x, Perturbation::single(i, delta, BudgetMode::clip));
  const Scores s = raf_scores(p, xp, variant);
  Index hits = 0;
  for (Index j = 0; j < x.n(); ++j) {
    Eigen::RowVectorXd row = s.weights.row(j);
    row[i] -= 1.0;
    if (row.norm() <= eps) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(x.n());
}

ConstructReport construct_perturbation(const RAFParams& p, MapKind variant, const TokenMatrix& x,
                                       Index i, const ConstructConfig& cfg) {
  if (i < 0 || i >= x.n()) throw Error(ErrorCode::IndexOutOfRange, "target row outside context", i);
  const FeatureMap map(variant, p);
  const ScoreForm form = score_form(p, variant);
  ConstructReport rep;
  const DeltaStar star = find_delta_star(x, cfg);
  rep.delta_star = star.delta;
  rep.aligned = star.aligned;
  rep.rank = star.rank;

  const VectorXd base = map.features(x);
  const double denom = base.norm();
  if (!(denom > 0.0)) throw Error(ErrorCode::ZeroFeatureNorm, "feature vector of X is zero");
  auto change = [&](const VectorXd& delta) {
    const TokenMatrix xp = apply_perturbation(x, Perturbation::single(i, delta, BudgetMode::clip));
    return (map.features(xp) - base).norm();
  };

  if (star.rank >= x.d()) {
    rep.full_row_rank = true;
    rep.split = {star.delta, star.delta};
    const VectorXd lifted = lift_delta(form.M, star.delta, cfg.lift_cap);
    rep.lifted = {lifted, lifted};
  } else {
    rep.split = split_delta(x, star.delta, cfg.rank_tol);
    rep.lifted = {lift_delta(form.M, rep.split.first, cfg.lift_cap),
                  lift_delta(form.M, rep.split.second, cfg.lift_cap)};
  }
  const int members = rep.full_row_rank ? 1 : 2;
  for (int m = 0; m < members; ++m) {
    const VectorXd& delta = m == 0 ? rep.lifted.first : rep.lifted.second;
    rep.feature_change[m] = change(delta);
    rep.concentration[m] = attention_concentration(p, variant, x, i, delta, cfg.concentration_eps);
  }
  if (rep.full_row_rank) {
    rep.feature_change[1] = rep.feature_change[0];
    rep.concentration[1] = rep.concentration[0];
  }
  rep.chosen_member = rep.feature_change[1] > rep.feature_change[0] ? 1 : 0;
  rep.chosen = rep.chosen_member == 0 ? rep.lifted.first : rep.lifted.second;
  rep.ratio = rep.chosen_change() / denom;
  return rep;
}

VectorXd top_singular_perturbation(const RAFParams& p, MapKind variant, const TokenMatrix& x,
                                   double scale) {
  const ScoreForm form = score_form(p, variant);
  Eigen::JacobiSVD<MatrixXd> svd(form.M, Eigen::ComputeFullV);
  VectorXd v = svd.matrixV().col(0);
  if ((x.values() * form.M * v).mean() < 0.0) v = -v;
  return scale * std::sqrt(static_cast<double>(form.M.rows())) * v;
}

std::string to_json(const ConstructReport& rep) {
  nlohmann::ordered_json j;
  j["delta_star"] = encode_vector(rep.delta_star);
  j["aligned"] = rep.aligned;
  j["rank"] = rep.rank;
  j["full_row_rank"] = rep.full_row_rank;
  j["delta_1"] = encode_vector(rep.split.first);
  j["delta_2"] = encode_vector(rep.split.second);
  j["lifted_1"] = encode_vector(rep.lifted.first);
  j["lifted_2"] = encode_vector(rep.lifted.second);
  j["chosen"] = encode_vector(rep.chosen);
  j["chosen_member"] = rep.chosen_member + 1;
  j["concentration"] = {rep.concentration[0], rep.concentration[1]};
  j["feature_change"] = {rep.feature_change[0], rep.feature_change[1]};
  j["ratio"] = rep.ratio;
  return j.dump();
}

}  // namespace wslab
