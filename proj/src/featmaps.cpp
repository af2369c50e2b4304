#include "wslab/featmaps.hpp"

#include <cmath>

#include "wslab/error.hpp"
#include "wslab/rng.hpp"

namespace wslab {

std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::rf: return "rf";
    case MapKind::drf: return "drf";
    case MapKind::raf: return "raf";
    case MapKind::relu_raf: return "relu_raf";
    case MapKind::qkv: return "qkv";
  }
  return "unknown";
}

MapKind parse_map_kind(std::string_view name) {
  if (name == "rf") return MapKind::rf;
  if (name == "drf") return MapKind::drf;
  if (name == "raf") return MapKind::raf;
  if (name == "relu_raf" || name == "relu-raf") return MapKind::relu_raf;
  if (name == "qkv") return MapKind::qkv;
  throw Error(ErrorCode::ConfigError, "unknown map kind '" + std::string(name) + "'");
}

bool is_attention(MapKind kind) {
  return kind == MapKind::raf || kind == MapKind::relu_raf || kind == MapKind::qkv;
}

RFParams sample_rf(Index n, Index d, Index k, Activation act, std::uint64_t seed) {
  if (n < 1 || d < 1 || k < 1) throw Error(ErrorCode::DimMismatch, "RF dims must be positive");
  RFParams p;
  p.n = n;
  p.d = d;
  p.act = std::move(act);
  p.seed = seed;
  p.V.resize(k, n * d);
  Rng rng(seed);
  fill_gaussian(p.V, 1.0 / std::sqrt(static_cast<double>(n * d)), rng);
  return p;
}

DRFParams sample_drf(Index n, Index d, Index k, Index L, Activation act, std::uint64_t seed,
                     std::optional<double> beta) {
  if (n < 1 || d < 1 || k < 1 || L < 1) throw Error(ErrorCode::DimMismatch, "DRF dims must be positive");
  DRFParams p;
  p.n = n;
  p.d = d;
  p.beta = beta ? *beta : he_beta(act);
  p.act = std::move(act);
  p.seed = seed;
  Rng rng(seed);
  for (Index l = 0; l < L; ++l) {
    const Index fan_in = l == 0 ? n * d : k;
    MatrixXd V(k, fan_in);
    fill_gaussian(V, std::sqrt(p.beta / static_cast<double>(fan_in)), rng);
    p.layers.push_back(std::move(V));
  }
  return p;
}

RAFParams sample_raf(Index d, std::uint64_t seed, Index d_inner) {
  if (d < 1 || d_inner < 0) throw Error(ErrorCode::DimMismatch, "RAF dims must be positive");
  RAFParams p;
  p.seed = seed;
  Rng rng(seed);
  p.W.resize(d, d);
  fill_gaussian(p.W, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  if (d_inner > 0) {
    const double qk_sd = std::pow(static_cast<double>(d) * static_cast<double>(d_inner), -0.25);
    p.WQ.resize(d_inner, d);
    p.WK.resize(d_inner, d);
    p.WV.resize(d_inner, d);
    fill_gaussian(p.WQ, qk_sd, rng);
    fill_gaussian(p.WK, qk_sd, rng);
    fill_gaussian(p.WV, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  }
  return p;
}

namespace {

// Row-normalized ReLU of the logits; an all-zero row becomes uniform.
void relu_normalize_rows(const MatrixXd& logits, MatrixXd& weights) {
  weights = logits.cwiseMax(0.0);
  const double uniform = 1.0 / static_cast<double>(logits.cols());
  for (Index r = 0; r < weights.rows(); ++r) {
    const double sum = weights.row(r).sum();
    if (sum > 0.0)
      weights.row(r) /= sum;
    else
      weights.row(r).setConstant(uniform);
  }
}

void weights_from_logits(const MatrixXd& logits, MatrixXd& weights, MapKind variant) {
  if (variant == MapKind::relu_raf) {
    relu_normalize_rows(logits, weights);
  } else {
    weights = logits;
    softmax_rows(weights);
  }
}

VectorXd flatten_rows(const MatrixXd& m) {
  VectorXd out(m.size());
  Index t = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out[t++] = m(r, c);
  return out;
}

MatrixXd unflatten_rows(const VectorXd& v, Index rows, Index cols) {
  MatrixXd m(rows, cols);
  Index t = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = v[t++];
  return m;
}

void check_rows(const std::vector<Index>& rows, Index n) {
  for (std::size_t a = 0; a < rows.size(); ++a) {
    if (rows[a] < 0 || rows[a] >= n) throw Error(ErrorCode::IndexOutOfRange, "probe row outside context", rows[a]);
    for (std::size_t b = 0; b < a; ++b)
      if (rows[a] == rows[b]) throw Error(ErrorCode::InvalidArgument, "duplicate probe row", rows[a]);
  }
}

class RFProbe final : public RowProbe {
 public:
  RFProbe(std::shared_ptr<const RFParams> p, const TokenMatrix& x, std::vector<Index> rows)
      : p_(std::move(p)) {
    rows_ = std::move(rows);
    base_ = p_->V * x.flat();
  }

  const VectorXd& evaluate(const MatrixXd& deltas) override {
    pre_ = base_;
    const Index d = p_->d;
    for (std::size_t j = 0; j < rows_.size(); ++j)
      pre_.noalias() += p_->V.middleCols(rows_[j] * d, d) * deltas.row(j).transpose();
    out_ = p_->act.apply(pre_);
    return out_;
  }

  MatrixXd pullback(const VectorXd& cotangent) const override {
    const VectorXd g = p_->act.derivative(pre_).cwiseProduct(cotangent);
    const Index d = p_->d;
    MatrixXd grad(rows_.size(), d);
    for (std::size_t j = 0; j < rows_.size(); ++j)
      grad.row(j).noalias() = (p_->V.middleCols(rows_[j] * d, d).transpose() * g).transpose();
    return grad;
  }

  bool near_kink(double tol) const override {
    for (Index t = 0; t < pre_.size(); ++t)
      if (p_->act.near_kink(pre_[t], tol)) return true;
    return false;
  }

 private:
  std::shared_ptr<const RFParams> p_;
  VectorXd base_;
  VectorXd pre_;
  VectorXd out_;
};

class DRFProbe final : public RowProbe {
 public:
  DRFProbe(std::shared_ptr<const DRFParams> p, const TokenMatrix& x, std::vector<Index> rows)
      : p_(std::move(p)) {
    rows_ = std::move(rows);
    base_ = p_->layers.front() * x.flat();
    pre_.resize(p_->layers.size());
  }

  const VectorXd& evaluate(const MatrixXd& deltas) override {
    const Index d = p_->d;
    pre_[0] = base_;
    for (std::size_t j = 0; j < rows_.size(); ++j)
      pre_[0].noalias() += p_->layers.front().middleCols(rows_[j] * d, d) * deltas.row(j).transpose();
    out_ = p_->act.apply(pre_[0]);
    for (std::size_t l = 1; l < p_->layers.size(); ++l) {
      pre_[l].noalias() = p_->layers[l] * out_;
      out_ = p_->act.apply(pre_[l]);
    }
    return out_;
  }

  MatrixXd pullback(const VectorXd& cotangent) const override {
    VectorXd g = cotangent;
    for (std::size_t l = p_->layers.size(); l-- > 0;) {
      g = p_->act.derivative(pre_[l]).cwiseProduct(g);
      if (l > 0) g = p_->layers[l].transpose() * g;
    }
    const Index d = p_->d;
    MatrixXd grad(rows_.size(), d);
    for (std::size_t j = 0; j < rows_.size(); ++j)
      grad.row(j).noalias() = (p_->layers.front().middleCols(rows_[j] * d, d).transpose() * g).transpose();
    return grad;
  }

  bool near_kink(double tol) const override {
    for (const auto& u : pre_)
      for (Index t = 0; t < u.size(); ++t)
        if (p_->act.near_kink(u[t], tol)) return true;
    return false;
  }

 private:
  std::shared_ptr<const DRFParams> p_;
  VectorXd base_;
  std::vector<VectorXd> pre_;
  VectorXd out_;
};

// Rows R of the context move; logits change only in rows R and columns R.
class AttentionProbe final : public RowProbe {
 public:
  AttentionProbe(std::shared_ptr<const RAFParams> p, MapKind variant, const TokenMatrix& x,
                 std::vector<Index> rows)
      : p_(std::move(p)), variant_(variant) {
    rows_ = std::move(rows);
    auto setup = score_form(*p_, variant_);
    M_ = std::move(setup.M);
    scale_ = setup.scale;
    X0_ = x.values();
    A0_ = X0_ * M_;
    S0_ = scale_ * A0_ * X0_.transpose();
    Z0_ = variant_ == MapKind::qkv ? MatrixXd(X0_ * p_->WV.transpose()) : X0_;
  }

  const VectorXd& evaluate(const MatrixXd& deltas) override {
    X_ = X0_;
    A_ = A0_;
    S_ = S0_;
    Z_ = Z0_;
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      const Index r = rows_[j];
      X_.row(r) += deltas.row(j);
      A_.row(r).noalias() = X_.row(r) * M_;
      if (variant_ == MapKind::qkv)
        Z_.row(r).noalias() = X_.row(r) * p_->WV.transpose();
      else
        Z_.row(r) = X_.row(r);
    }
    for (Index r : rows_) {
      S_.row(r).noalias() = scale_ * A_.row(r) * X_.transpose();
      S_.col(r).noalias() = scale_ * A_ * X_.row(r).transpose();
    }
    weights_from_logits(S_, P_, variant_);
    Y_.noalias() = P_ * Z_;
    out_ = flatten_rows(Y_);
    return out_;
  }

  MatrixXd pullback(const VectorXd& cotangent) const override {
    const Index n = X_.rows();
    const MatrixXd G = unflatten_rows(cotangent, n, Y_.cols());
    const MatrixXd dP = G * Z_.transpose();
    MatrixXd dS(n, n);
    if (variant_ == MapKind::relu_raf) {
      for (Index j = 0; j < n; ++j) {
        const double mass = S_.row(j).cwiseMax(0.0).sum();
        if (mass <= 0.0) {
          dS.row(j).setZero();
          continue;
        }
        const double centre = P_.row(j).dot(dP.row(j));
        for (Index k = 0; k < n; ++k)
          dS(j, k) = S_(j, k) > 0.0 ? (dP(j, k) - centre) / mass : 0.0;
      }
    } else {
      for (Index j = 0; j < n; ++j) {
        const double centre = G.row(j).dot(Y_.row(j));
        dS.row(j) = P_.row(j).cwiseProduct((dP.row(j).array() - centre).matrix());
      }
    }
    MatrixXd grad(rows_.size(), X_.cols());
    for (std::size_t j = 0; j < rows_.size(); ++j) {
      const Index r = rows_[j];
      Eigen::RowVectorXd g = scale_ * (dS.row(r) * X_) * M_.transpose();
      g.noalias() += scale_ * dS.col(r).transpose() * A_;
      const Eigen::RowVectorXd dz = P_.col(r).transpose() * G;
      if (variant_ == MapKind::qkv)
        g.noalias() += dz * p_->WV;
      else
        g += dz;
      grad.row(j) = g;
    }
    return grad;
  }

  bool near_kink(double tol) const override {
    if (variant_ != MapKind::relu_raf) return false;
    return (S_.array().abs() <= tol).any();
  }

 private:
  std::shared_ptr<const RAFParams> p_;
  MapKind variant_;
  MatrixXd M_;
  double scale_ = 1.0;
  MatrixXd X0_, A0_, S0_, Z0_;
  MatrixXd X_, A_, S_, Z_, P_, Y_;
  VectorXd out_;
};

}  // namespace

FeatureMap::FeatureMap(RFParams p)
    : kind_(MapKind::rf), rf_(std::make_shared<const RFParams>(std::move(p))) {
  if (rf_->V.cols() != rf_->n * rf_->d) throw Error(ErrorCode::DimMismatch, "RF V must have n*d columns");
}

FeatureMap::FeatureMap(DRFParams p)
    : kind_(MapKind::drf), drf_(std::make_shared<const DRFParams>(std::move(p))) {
  if (drf_->layers.empty()) throw Error(ErrorCode::DimMismatch, "DRF needs at least one layer");
  if (drf_->layers.front().cols() != drf_->n * drf_->d)
    throw Error(ErrorCode::DimMismatch, "DRF first layer must have n*d columns");
  for (std::size_t l = 1; l < drf_->layers.size(); ++l)
    if (drf_->layers[l].rows() != drf_->k() || drf_->layers[l].cols() != drf_->k())
      throw Error(ErrorCode::DimMismatch, "DRF hidden layers must be k x k");
}

FeatureMap::FeatureMap(MapKind kind, RAFParams p)
    : kind_(kind), raf_(std::make_shared<const RAFParams>(std::move(p))) {
  if (!is_attention(kind)) throw Error(ErrorCode::InvalidArgument, "attention params need an attention kind");
  if (raf_->W.rows() != raf_->W.cols()) throw Error(ErrorCode::DimMismatch, "W must be square");
  if (kind == MapKind::qkv) {
    if (!raf_->has_qkv()) throw Error(ErrorCode::DimMismatch, "qkv map requires W_Q, W_K, W_V");
    if (raf_->WQ.cols() != raf_->d() || raf_->WK.rows() != raf_->d_inner() ||
        raf_->WK.cols() != raf_->d() || raf_->WV.rows() != raf_->d_inner() || raf_->WV.cols() != raf_->d())
      throw Error(ErrorCode::DimMismatch, "QKV weights must all be d' x d");
  }
}

Index FeatureMap::feature_dim(Index n) const {
  switch (kind_) {
    case MapKind::rf: return rf_->k();
    case MapKind::drf: return drf_->k();
    case MapKind::qkv: return n * raf_->d_inner();
    default: return n * raf_->d();
  }
}

Index FeatureMap::input_d() const {
  if (rf_) return rf_->d;
  if (drf_) return drf_->d;
  return raf_->d();
}

std::optional<Index> FeatureMap::input_n() const {
  if (rf_) return rf_->n;
  if (drf_) return drf_->n;
  return std::nullopt;
}

Index FeatureMap::k() const {
  if (rf_) return rf_->k();
  if (drf_) return drf_->k();
  return 0;
}

Index FeatureMap::depth() const { return drf_ ? drf_->L() : 1; }

double FeatureMap::lipschitz() const {
  if (rf_) return rf_->act.lipschitz();
  if (drf_) return drf_->act.lipschitz();
  return 1.0;
}

void FeatureMap::check(const TokenMatrix& x) const {
  if (x.d() != input_d())
    throw Error(ErrorCode::DimMismatch, "context has d=" + std::to_string(x.d()) + ", map expects " +
                                            std::to_string(input_d()));
  if (auto n = input_n(); n && *n != x.n())
    throw Error(ErrorCode::DimMismatch, "context has n=" + std::to_string(x.n()) + ", map expects " +
                                            std::to_string(*n));
}

VectorXd FeatureMap::features(const TokenMatrix& x) const {
  check(x);
  switch (kind_) {
    case MapKind::rf: return rf_->act.apply(rf_->V * x.flat());
    case MapKind::drf: {
      VectorXd h = drf_->act.apply(drf_->layers.front() * x.flat());
      for (std::size_t l = 1; l < drf_->layers.size(); ++l) h = drf_->act.apply(drf_->layers[l] * h);
      return h;
    }
    default: return flatten_rows(attention_features(*raf_, x, kind_));
  }
}

std::unique_ptr<RowProbe> FeatureMap::probe(const TokenMatrix& x, std::vector<Index> rows) const {
  check(x);
  check_rows(rows, x.n());
  switch (kind_) {
    case MapKind::rf: return std::make_unique<RFProbe>(rf_, x, std::move(rows));
    case MapKind::drf: return std::make_unique<DRFProbe>(drf_, x, std::move(rows));
    default: return std::make_unique<AttentionProbe>(raf_, kind_, x, std::move(rows));
  }
}

std::uint64_t FeatureMap::fingerprint() const {
  std::uint64_t h = tag(to_string(kind_));
  if (rf_) return wslab::fingerprint(rf_->V, h ^ tag(rf_->act.name()));
  if (drf_) {
    h ^= tag(drf_->act.name());
    for (const auto& V : drf_->layers) h = wslab::fingerprint(V, h);
    return h;
  }
  h = wslab::fingerprint(raf_->W, h);
  if (kind_ == MapKind::qkv) {
    h = wslab::fingerprint(raf_->WQ, h);
    h = wslab::fingerprint(raf_->WK, h);
    h = wslab::fingerprint(raf_->WV, h);
  }
  return h;
}

ScoreForm score_form(const RAFParams& p, MapKind variant) {
  if (variant == MapKind::qkv) {
    if (!p.has_qkv()) throw Error(ErrorCode::DimMismatch, "qkv map requires W_Q, W_K, W_V");
    return {p.WQ.transpose() * p.WK, 1.0 / std::sqrt(static_cast<double>(p.d_inner()))};
  }
  return {p.W, 1.0 / std::sqrt(static_cast<double>(p.d()))};
}

Scores raf_scores(const RAFParams& p, const TokenMatrix& x, MapKind variant) {
  if (x.d() != p.d()) throw Error(ErrorCode::DimMismatch, "context d differs from W");
  const auto setup = score_form(p, variant);
  const MatrixXd& X = x.values();
  Scores s;
  s.logits = setup.scale * (X * setup.M) * X.transpose();
  weights_from_logits(s.logits, s.weights, variant);
  return s;
}

MatrixXd attention_features(const RAFParams& p, const TokenMatrix& x, MapKind variant) {
  const Scores s = raf_scores(p, x, variant);
  if (variant == MapKind::qkv) return s.weights * (x.values() * p.WV.transpose());
  return s.weights * x.values();
}

DeltaGradient grad_wrt_delta(const FeatureMap& map, const TokenMatrix& x, Index i,
                             const VectorXd& delta, ProbeObjective objective, const VectorXd& v) {
  if (delta.size() != x.d()) throw Error(ErrorCode::DimMismatch, "delta length differs from d");
  auto probe = map.probe(x, {i});
  DeltaGradient out;
  if (objective == ProbeObjective::diff_norm_sq) {
    const VectorXd base = probe->evaluate(MatrixXd::Zero(1, x.d()));
    const VectorXd diff = probe->evaluate(delta.transpose()) - base;
    out.value = diff.squaredNorm();
    out.gradient = probe->pullback(2.0 * diff).row(0).transpose();
  } else {
    const VectorXd& phi = probe->evaluate(delta.transpose());
    if (v.size() != phi.size()) throw Error(ErrorCode::DimMismatch, "v length differs from feature dim");
    out.value = phi.dot(v);
    out.gradient = probe->pullback(v).row(0).transpose();
  }
  out.near_kink = probe->near_kink(1e-6);
  return out;
}

}  // namespace wslab
