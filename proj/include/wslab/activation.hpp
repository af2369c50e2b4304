#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "wslab/linalg.hpp"

namespace wslab {

enum class ActivationKind { relu, identity, tanh, table };

// Componentwise nonlinearity. The table kind is piecewise linear through the
// given knots and extrapolates the end segments linearly.
class Activation {
 public:
  Activation() = default;
  static Activation relu() { return Activation(ActivationKind::relu); }
  static Activation identity() { return Activation(ActivationKind::identity); }
  static Activation tanh() { return Activation(ActivationKind::tanh); }
  static Activation table(std::vector<double> knots, std::vector<double> values);
  static Activation parse(std::string_view name);

  ActivationKind kind() const { return kind_; }
  std::string name() const;

  double operator()(double x) const;
  // Derivative; at kinks the value is 0 for relu and the right slope for tables.
  double derivative(double x) const;
  double lipschitz() const;
  // True when x is within `tol` of a point where the derivative jumps.
  bool near_kink(double x, double tol) const;

  VectorXd apply(const VectorXd& x) const;
  VectorXd derivative(const VectorXd& x) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }

 private:
  explicit Activation(ActivationKind kind) : kind_(kind) {}
  ActivationKind kind_ = ActivationKind::relu;
  std::vector<double> knots_;
  std::vector<double> values_;
};

// E[f(g)] for g ~ N(0, 1) by Gauss-Hermite quadrature (probabilists' weight).
struct GaussHermite {
  explicit GaussHermite(int order = 64);
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Second moment E[act(sqrt(beta) g)^2] under the quadrature rule.
double second_moment(const Activation& act, double beta, const GaussHermite& rule);

// Variance beta with E[act(rho)^2] = 1 for rho ~ N(0, beta). Throws
// NoSolution when the second moment never reaches 1.
double he_beta(const Activation& act);

}  // namespace wslab
