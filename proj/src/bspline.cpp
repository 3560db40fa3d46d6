#include "fsgl/bspline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "fsgl/errors.hpp"

namespace fsgl {

BSplineBasis::BSplineBasis(double a, double b, int order, std::vector<double> interior_knots)
    : a_(a), b_(b), order_(order), interior_(std::move(interior_knots)) {
  if (!(a < b)) throw input_error("basis interval must satisfy a < b");
  if (order < 1) throw input_error("basis order must be >= 1");
  for (std::size_t i = 0; i < interior_.size(); ++i) {
    if (!(interior_[i] > a_ && interior_[i] < b_))
      throw input_error("interior knots must lie strictly inside (a, b)");
    if (i > 0 && !(interior_[i] > interior_[i - 1]))
      throw input_error("interior knots must be strictly increasing");
  }
  size_ = order_ + static_cast<int>(interior_.size());

  knots_.reserve(interior_.size() + 2 * order_);
  knots_.insert(knots_.end(), order_, a_);
  knots_.insert(knots_.end(), interior_.begin(), interior_.end());
  knots_.insert(knots_.end(), order_, b_);
}

BSplineBasis BSplineBasis::uniform(double a, double b, int order, int n_interior) {
  if (n_interior < 0) throw input_error("number of interior knots must be >= 0");
  std::vector<double> ks(n_interior);
  for (int i = 0; i < n_interior; ++i) ks[i] = a + (b - a) * (i + 1) / (n_interior + 1);
  return BSplineBasis(a, b, order, std::move(ks));
}

int BSplineBasis::nonzero_basis(double t, Eigen::VectorXd& vals) const {
  // Knot span: largest s with knots_[s] <= t, clamped so the span is
  // nonempty; t == b falls into the last span.
  int span;
  if (t >= b_) {
    span = size_ - 1;
  } else {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
    span = static_cast<int>(it - knots_.begin()) - 1;
    span = std::clamp(span, order_ - 1, size_ - 1);
  }

  // Cox-de Boor recursion in its local (de Boor) form: vals[r] ends up as
  // N_{span-order+1+r, order}(t) for r = 0..order-1.
  vals.resize(order_);
  Eigen::VectorXd left(order_), right(order_);
  vals[0] = 1.0;
  for (int j = 1; j < order_; ++j) {
    left[j] = t - knots_[span + 1 - j];
    right[j] = knots_[span + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = vals[r] / (right[r + 1] + left[j - r]);
      vals[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    vals[j] = saved;
  }
  return span - order_ + 1;
}

Eigen::VectorXd BSplineBasis::evaluate(double t) const {
  if (!(t >= a_ && t <= b_))
    throw input_error("evaluation point outside basis interval");
  Eigen::VectorXd local;
  const int first = nonzero_basis(t, local);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size_);
  out.segment(first, order_) = local;
  return out;
}

Eigen::MatrixXd BSplineBasis::evaluate_many(const Eigen::VectorXd& ts) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ts.size(), size_);
  Eigen::VectorXd local;
  for (Eigen::Index k = 0; k < ts.size(); ++k) {
    const double t = ts[k];
    if (!(t >= a_ && t <= b_))
      throw input_error("evaluation point outside basis interval");
    const int first = nonzero_basis(t, local);
    out.row(k).segment(first, order_) = local;
  }
  return out;
}

void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  // Golub-Welsch: eigendecomposition of the symmetric Jacobi matrix.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double beta = k / std::sqrt(4.0 * k * k - 1.0);
    jac(k, k - 1) = jac(k - 1, k) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  nodes = es.eigenvalues();
  weights.resize(n);
  for (int k = 0; k < n; ++k) {
    const double v0 = es.eigenvectors()(0, k);
    weights[k] = 2.0 * v0 * v0;
  }
}

Eigen::MatrixXd BSplineBasis::gram_matrix() const {
  // Products of two basis functions are polynomials of degree 2(order-1) on
  // each knot span, so `order` Gauss-Legendre nodes per span integrate them
  // exactly.
  Eigen::VectorXd gl_nodes, gl_weights;
  gauss_legendre(order_, gl_nodes, gl_weights);

  std::vector<double> breaks;
  breaks.push_back(a_);
  breaks.insert(breaks.end(), interior_.begin(), interior_.end());
  breaks.push_back(b_);

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(size_, size_);
  Eigen::VectorXd local;
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    const double mid = 0.5 * (breaks[s] + breaks[s + 1]);
    const double half = 0.5 * (breaks[s + 1] - breaks[s]);
    for (int q = 0; q < order_; ++q) {
      const double t = mid + half * gl_nodes[q];
      const double w = half * gl_weights[q];
      const int first = nonzero_basis(t, local);
      for (int i = 0; i < order_; ++i)
        for (int j = 0; j < order_; ++j)
          gram(first + i, first + j) += w * local[i] * local[j];
    }
  }
  // Symmetrize away quadrature round-off.
  return 0.5 * (gram + gram.transpose());
}

Eigen::VectorXd smooth_observations(const BSplineBasis& basis, const RawCurve& curve,
                                    double ridge, const std::string& label) {
  const auto where = label.empty() ? std::string() : " [" + label + "]";
  if (curve.times.size() != curve.values.size())
    throw input_error("curve times/values length mismatch" + where);
  if (curve.times.size() < 1) throw input_error("curve has no observations" + where);
  for (Eigen::Index k = 0; k < curve.times.size(); ++k) {
    if (!(curve.times[k] >= basis.lower() && curve.times[k] <= basis.upper()))
      throw input_error("observation time outside basis interval" + where);
    if (k > 0 && !(curve.times[k] > curve.times[k - 1]))
      throw input_error("observation times must be strictly increasing" + where);
  }
  if (ridge < 0) throw input_error("ridge must be >= 0" + where);

  const int m = basis.size();
  const Eigen::MatrixXd colloc = basis.evaluate_many(curve.times);

  // Solve min ||y - B w||^2 + ridge ||D2 w||^2 through the stacked
  // least-squares system [B; sqrt(ridge) D2] w = [y; 0]; same solution as
  // the normal equations, with a rank check on the stacked matrix.
  const int pen_rows = (ridge > 0 && m > 2) ? m - 2 : 0;
  Eigen::MatrixXd stacked(colloc.rows() + pen_rows, m);
  stacked.topRows(colloc.rows()) = colloc;
  if (pen_rows > 0) {
    const double sr = std::sqrt(ridge);
    stacked.bottomRows(pen_rows).setZero();
    for (int r = 0; r < pen_rows; ++r) {
      stacked(colloc.rows() + r, r) = sr;
      stacked(colloc.rows() + r, r + 1) = -2.0 * sr;
      stacked(colloc.rows() + r, r + 2) = sr;
    }
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(stacked.rows());
  rhs.head(curve.values.size()) = curve.values;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
  if (qr.rank() < m)
    throw numerical_error("ill-posed smoothing: normal equations are rank deficient" + where);
  return qr.solve(rhs);
}

}  // namespace fsgl
