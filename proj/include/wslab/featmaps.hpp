#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wslab/activation.hpp"
#include "wslab/token_matrix.hpp"

namespace wslab {

enum class MapKind { rf, drf, raf, relu_raf, qkv };

std::string_view to_string(MapKind kind);
MapKind parse_map_kind(std::string_view name);
bool is_attention(MapKind kind);

// phi(V Flat(X)) with V of shape k x (n d).
struct RFParams {
  Index n = 0;
  Index d = 0;
  MatrixXd V;
  Activation act = Activation::relu();
  std::uint64_t seed = 0;
  Index k() const { return V.rows(); }
  Index D() const { return V.cols(); }
};

// phi(V_L ... phi(V_1 Flat(X))); layers[0] is k x D, the rest k x k.
struct DRFParams {
  Index n = 0;
  Index d = 0;
  std::vector<MatrixXd> layers;
  double beta = 2.0;
  Activation act = Activation::relu();
  std::uint64_t seed = 0;
  Index k() const { return layers.empty() ? 0 : layers.front().rows(); }
  Index L() const { return static_cast<Index>(layers.size()); }
};

// Score weights W (d x d). The optional triple W_Q, W_K, W_V has shape d' x d.
struct RAFParams {
  MatrixXd W;
  MatrixXd WQ;
  MatrixXd WK;
  MatrixXd WV;
  std::uint64_t seed = 0;
  Index d() const { return W.rows(); }
  Index d_inner() const { return WQ.rows(); }
  bool has_qkv() const { return WQ.size() > 0; }
};

RFParams sample_rf(Index n, Index d, Index k, Activation act, std::uint64_t seed);
// beta defaults to he_beta(act).
DRFParams sample_drf(Index n, Index d, Index k, Index L, Activation act, std::uint64_t seed,
                     std::optional<double> beta = std::nullopt);
// d_inner > 0 also samples the QKV triple.
RAFParams sample_raf(Index d, std::uint64_t seed, Index d_inner = 0);

// Evaluates the map on X with a block of rows replaced by x_r + delta_r, and
// pulls cotangents back to those deltas. Stateful: pullback uses the most
// recent evaluate() call.
class RowProbe {
 public:
  virtual ~RowProbe() = default;
  virtual const VectorXd& evaluate(const MatrixXd& deltas) = 0;
  // Gradient of <cotangent, phi> with respect to the deltas (rows match rows()).
  virtual MatrixXd pullback(const VectorXd& cotangent) const = 0;
  // True when the last evaluation sat within `tol` of a nondifferentiable point.
  virtual bool near_kink(double tol) const = 0;
  const std::vector<Index>& rows() const { return rows_; }

 protected:
  std::vector<Index> rows_;
};

class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(RFParams p);
  explicit FeatureMap(DRFParams p);
  // kind is raf, relu_raf or qkv.
  FeatureMap(MapKind kind, RAFParams p);

  MapKind kind() const { return kind_; }
  // Length of the (flattened) feature vector for a context of n rows.
  Index feature_dim(Index n) const;
  // Embedding dimension the map expects.
  Index input_d() const;
  // Context length the map is tied to, or nullopt for attention maps.
  std::optional<Index> input_n() const;
  Index k() const;
  Index depth() const;
  double lipschitz() const;

  const RFParams& rf() const { return *rf_; }
  const DRFParams& drf() const { return *drf_; }
  const RAFParams& raf() const { return *raf_; }

  // Feature vector; attention outputs are flattened row-major.
  VectorXd features(const TokenMatrix& x) const;
  std::unique_ptr<RowProbe> probe(const TokenMatrix& x, std::vector<Index> rows) const;

  std::uint64_t fingerprint() const;

 private:
  void check(const TokenMatrix& x) const;

  MapKind kind_ = MapKind::rf;
  std::shared_ptr<const RFParams> rf_;
  std::shared_ptr<const DRFParams> drf_;
  std::shared_ptr<const RAFParams> raf_;
};

// The bilinear score matrix and logit scale: (W, 1/sqrt(d)) for raf and
// relu_raf, (W_Q^T W_K, 1/sqrt(d')) for qkv.
struct ScoreForm {
  MatrixXd M;
  double scale = 1.0;
};
ScoreForm score_form(const RAFParams& p, MapKind variant);

// Attention score logits S = X M X^T / sqrt(d) and row-stochastic weights s.
struct Scores {
  MatrixXd logits;
  MatrixXd weights;
};
Scores raf_scores(const RAFParams& p, const TokenMatrix& x, MapKind variant = MapKind::raf);
// n x d (raf, relu_raf) or n x d' (qkv).
MatrixXd attention_features(const RAFParams& p, const TokenMatrix& x, MapKind variant);

enum class ProbeObjective { diff_norm_sq, inner_product };

struct DeltaGradient {
  double value = 0.0;
  VectorXd gradient;
  bool near_kink = false;
};

// Gradient of ||phi(X^i(delta)) - phi(X)||^2 or phi(X^i(delta))^T v with
// respect to delta.
DeltaGradient grad_wrt_delta(const FeatureMap& map, const TokenMatrix& x, Index i,
                             const VectorXd& delta, ProbeObjective objective,
                             const VectorXd& v = VectorXd());

}  // namespace wslab
