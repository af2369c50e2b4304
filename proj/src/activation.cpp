#include "wslab/activation.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/tools/roots.hpp>

#include "wslab/error.hpp"

namespace wslab {

Activation Activation::table(std::vector<double> knots, std::vector<double> values) {
  if (knots.size() < 2 || knots.size() != values.size())
    throw Error(ErrorCode::InvalidArgument, "table activation needs >= 2 matching knots");
  for (std::size_t t = 1; t < knots.size(); ++t)
    if (!(knots[t] > knots[t - 1]))
      throw Error(ErrorCode::InvalidArgument, "table knots must be strictly increasing");
  Activation a(ActivationKind::table);
  a.knots_ = std::move(knots);
  a.values_ = std::move(values);
  return a;
}

Activation Activation::parse(std::string_view name) {
  if (name == "relu") return relu();
  if (name == "identity" || name == "linear") return identity();
  if (name == "tanh") return tanh();
  throw Error(ErrorCode::ConfigError, "unknown activation '" + std::string(name) + "'");
}

std::string Activation::name() const {
  switch (kind_) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::identity: return "identity";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::table: return "table";
  }
  return "unknown";
}

namespace {
// Index of the segment used for x: 0 .. knots.size()-2.
std::size_t segment(const std::vector<double>& knots, double x) {
  auto it = std::upper_bound(knots.begin(), knots.end(), x);
  std::size_t s = it == knots.begin() ? 0 : static_cast<std::size_t>(it - knots.begin()) - 1;
  return std::min(s, knots.size() - 2);
}
}  // namespace

double Activation::operator()(double x) const {
  switch (kind_) {
    case ActivationKind::relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::identity: return x;
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::table: {
      const std::size_t s = segment(knots_, x);
      const double slope = (values_[s + 1] - values_[s]) / (knots_[s + 1] - knots_[s]);
      return values_[s] + slope * (x - knots_[s]);
    }
  }
  return x;
}

double Activation::derivative(double x) const {
  switch (kind_) {
    case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::identity: return 1.0;
    case ActivationKind::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::table: {
      const std::size_t s = segment(knots_, x);
      return (values_[s + 1] - values_[s]) / (knots_[s + 1] - knots_[s]);
    }
  }
  return 1.0;
}

double Activation::lipschitz() const {
  if (kind_ != ActivationKind::table) return 1.0;
  double m = 0.0;
  for (std::size_t s = 0; s + 1 < knots_.size(); ++s)
    m = std::max(m, std::abs((values_[s + 1] - values_[s]) / (knots_[s + 1] - knots_[s])));
  return m;
}

bool Activation::near_kink(double x, double tol) const {
  switch (kind_) {
    case ActivationKind::relu: return std::abs(x) <= tol;
    case ActivationKind::table:
      for (std::size_t s = 1; s + 1 < knots_.size(); ++s)
        if (std::abs(x - knots_[s]) <= tol) return true;
      return false;
    default: return false;
  }
}

VectorXd Activation::apply(const VectorXd& x) const {
  if (kind_ == ActivationKind::relu) return x.cwiseMax(0.0);
  if (kind_ == ActivationKind::identity) return x;
  return x.unaryExpr([this](double v) { return (*this)(v); });
}

VectorXd Activation::derivative(const VectorXd& x) const {
  if (kind_ == ActivationKind::relu)
    return x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
  return x.unaryExpr([this](double v) { return derivative(v); });
}

GaussHermite::GaussHermite(int order) {
  // Golub-Welsch: the Jacobi matrix of the probabilists' Hermite recurrence
  // has zero diagonal and off-diagonal sqrt(j).
  MatrixXd jacobi = MatrixXd::Zero(order, order);
  for (int j = 1; j < order; ++j) {
    jacobi(j, j - 1) = std::sqrt(static_cast<double>(j));
    jacobi(j - 1, j) = jacobi(j, j - 1);
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(jacobi);
  nodes.resize(order);
  weights.resize(order);
  for (int j = 0; j < order; ++j) {
    nodes[j] = eig.eigenvalues()(j);
    const double v0 = eig.eigenvectors()(0, j);
    weights[j] = v0 * v0;
  }
}

double second_moment(const Activation& act, double beta, const GaussHermite& rule) {
  const double scale = std::sqrt(beta);
  double acc = 0.0;
  for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
    const double v = act(scale * rule.nodes[j]);
    acc += rule.weights[j] * v * v;
  }
  return acc;
}

double he_beta(const Activation& act) {
  const GaussHermite rule(64);
  auto f = [&](double beta) { return second_moment(act, beta, rule) - 1.0; };
  double lo = 1e-8;
  double flo = f(lo);
  double hi = lo;
  double fhi = flo;
  bool bracketed = false;
  while (hi < 1e8) {
    hi = lo * 2.0;
    fhi = f(hi);
    // Saturating activations reach 1 only to quadrature precision; demand a clear crossing.
    if ((flo < 0.0 && fhi > 1e-10) || (flo > 1e-10 && fhi < 0.0)) {
      bracketed = true;
      break;
    }
    lo = hi;
    flo = fhi;
  }
  if (!bracketed)
    throw Error(ErrorCode::NoSolution, "second moment never crosses 1 for " + act.name());
  boost::uintmax_t iters = 200;
  auto tol = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(std::abs(a), 1.0); };
  const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, iters);
  const double beta = 0.5 * (a + b);
  if (std::abs(f(beta)) > 1e-8)
    throw Error(ErrorCode::NumericalFailure, "He variance did not converge for " + act.name());
  return beta;
}

}  // namespace wslab
