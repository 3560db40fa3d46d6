#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace fsgl {

// One irregularly sampled curve: observation times and values, with times
// strictly increasing and contained in the basis interval of whatever
// BSplineBasis the curve is smoothed against.
struct RawCurve {
  Eigen::VectorXd times;
  Eigen::VectorXd values;
};

// Clamped (open) B-spline basis of a given order on [a, b] with strictly
// increasing interior knots.  The number of basis functions is
// M = order + #interior_knots.  Boundary knots are repeated `order` times
// so the basis spans polynomials up to degree order-1 and sums to one
// everywhere on [a, b].
class BSplineBasis {
 public:
  BSplineBasis(double a, double b, int order, std::vector<double> interior_knots);

  // Convenience: `n_interior` equally spaced interior knots.
  static BSplineBasis uniform(double a, double b, int order, int n_interior);

  int order() const { return order_; }
  int size() const { return size_; }  // M
  double lower() const { return a_; }
  double upper() const { return b_; }
  const std::vector<double>& interior_knots() const { return interior_; }
  const std::vector<double>& knots() const { return knots_; }  // extended vector

  // All M basis functions at t.  Throws input_error if t is outside [a, b].
  Eigen::VectorXd evaluate(double t) const;

  // Rows = evaluation points, columns = basis functions.
  Eigen::MatrixXd evaluate_many(const Eigen::VectorXd& ts) const;

  // Gram matrix Phi with Phi(m, m') = \int phi_m(t) phi_m'(t) dt, computed by
  // per-span Gauss-Legendre quadrature with enough nodes to be exact for the
  // piecewise-polynomial integrand.  Symmetric positive semidefinite.
  Eigen::MatrixXd gram_matrix() const;

 private:
  // de Boor evaluation: writes the `order` (at most) nonzero basis values at
  // t and returns the index of the first one.
  int nonzero_basis(double t, Eigen::VectorXd& vals) const;

  double a_, b_;
  int order_;
  int size_;
  std::vector<double> interior_;
  std::vector<double> knots_;

  friend Eigen::MatrixXd gram_matrix_impl(const BSplineBasis&);
};

// Penalized least-squares fit of basis coefficients w to one curve:
//   min_w  ||y - B w||^2 + ridge * ||D2 w||^2
// where B is the collocation matrix and D2 the second-order difference
// operator on coefficients.  `ridge` is a numerical stabilizer (default
// 1e-8), not a tuned smoothing parameter.  Throws numerical_error when the
// normal equations are singular (e.g. ridge = 0 with fewer observations
// than basis functions); `label` is used to identify the offending
// predictor/sample in the message.
Eigen::VectorXd smooth_observations(const BSplineBasis& basis, const RawCurve& curve,
                                    double ridge = 1e-8, const std::string& label = {});

// Gauss-Legendre nodes and weights on [-1, 1], computed from the Jacobi
// matrix eigendecomposition.  Exposed for tests.
void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

}  // namespace fsgl
