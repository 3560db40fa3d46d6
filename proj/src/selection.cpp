#include "fsgl/selection.hpp"

#include <algorithm>
#include <cmath>

#include "fsgl/errors.hpp"

namespace fsgl {

double effective_df(const SolverReport& report, const DesignMatrix& design) {
  double df = 0.0;
  for (int j = 0; j < design.p(); ++j)
    if (report.active_groups[j]) df += design.dims[j] * report.shrinkage.row(j).sum();
  return df;
}

double bic(double loglik, double df, int n) {
  if (n < 1) throw input_error("bic: sample size must be positive");
  if (df < 0.0) throw input_error("bic: negative degrees of freedom");
  return -2.0 * loglik + df * std::log(double(n));
}

TuningGrid default_grid(const DesignMatrix& design, const Eigen::MatrixXd& y, int n_lambda,
                        double min_ratio, std::vector<double> alphas) {
  if (n_lambda < 1) throw input_error("grid: need at least one lambda");
  if (!(min_ratio > 0.0 && min_ratio < 1.0)) throw input_error("grid: min_ratio must be in (0,1)");
  TuningGrid grid;
  grid.alphas = std::move(alphas);
  const double top = lambda_max(design, y, 0.0);
  grid.lambdas.resize(n_lambda);
  if (n_lambda == 1) {
    grid.lambdas[0] = top;
  } else {
    for (int k = 0; k < n_lambda; ++k)
      grid.lambdas[k] = top * std::pow(min_ratio, double(k) / (n_lambda - 1));
  }
  return grid;
}

const ScoredFit& GridSearchResult::best_fit() const {
  if (best < 0) throw convergence_error("no grid point converged");
  return fits[size_t(best)];
}

GridSearchResult grid_search(const DesignMatrix& design, const Eigen::MatrixXd& y,
                             const TuningGrid& grid, const FitControls& controls) {
  if (grid.lambdas.empty() || grid.alphas.empty()) throw input_error("grid: empty tuning grid");
  for (double a : grid.alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw input_error("grid: alpha must lie in [0, 1]");
  for (double l : grid.lambdas)
    if (!(l >= 0.0)) throw input_error("grid: lambda must be >= 0");

  std::vector<double> ladder = grid.lambdas;
  std::sort(ladder.begin(), ladder.end(), std::greater<>());

  FitControls fit_controls = controls;
  fit_controls.keep_internals = false;

  GridSearchResult out;
  out.fits.reserve(ladder.size() * grid.alphas.size());
  const int n = design.n;

  for (double alpha : grid.alphas) {
    CoefficientSet carry;
    const CoefficientSet* warm = nullptr;
    for (double lambda : ladder) {
      ScoredFit sf;
      sf.lambda = lambda;
      sf.alpha = alpha;
      sf.report = fit(design, y, {lambda, alpha}, fit_controls, warm);
      sf.converged = sf.report.converged;
      sf.df = effective_df(sf.report, design);
      sf.bic = bic(sf.report.loglik, sf.df, n);
      if (sf.converged) {
        carry = sf.report.coefficients;
        warm = &carry;
      } else {
        ++out.n_failed;
      }
      out.fits.push_back(std::move(sf));
    }
  }

  for (int k = 0; k < int(out.fits.size()); ++k) {
    const ScoredFit& cand = out.fits[size_t(k)];
    if (!cand.converged) continue;
    if (out.best < 0) {
      out.best = k;
      continue;
    }
    const ScoredFit& inc = out.fits[size_t(out.best)];
    const double tie = 1e-9 * std::max(1.0, std::abs(inc.bic));
    if (cand.bic < inc.bic - tie) {
      out.best = k;
    } else if (std::abs(cand.bic - inc.bic) <= tie) {
      if (cand.lambda > inc.lambda ||
          (cand.lambda == inc.lambda && cand.alpha > inc.alpha))
        out.best = k;
    }
  }
  return out;
}

}  // namespace fsgl
