#pragma once

#include <Eigen/Core>

#include <vector>

#include "fsgl/model.hpp"
#include "fsgl/solver.hpp"

namespace fsgl {

// Degrees of freedom of a fitted model: for each active group, the trace of
// its working-response smoother, which collapses to M_j * sum_l c_jl with
// the shrinkage factors recorded by the solver.  Inactive groups contribute
// nothing; intercepts are not counted.
double effective_df(const SolverReport& report, const DesignMatrix& design);

double bic(double loglik, double df, int n);

struct TuningGrid {
  std::vector<double> lambdas;  // visited in descending order per alpha
  std::vector<double> alphas;
};

// Default grid: 50 log-spaced lambdas spanning three decades down from the
// alpha = 0 boundary (which dominates lambda_max over every alpha), crossed
// with a fixed alpha ladder.
TuningGrid default_grid(const DesignMatrix& design, const Eigen::MatrixXd& y, int n_lambda = 50,
                        double min_ratio = 1e-3,
                        std::vector<double> alphas = {0.0, 0.25, 0.5, 0.75, 0.95});

struct ScoredFit {
  double lambda = 0.0;
  double alpha = 0.0;
  double df = 0.0;
  double bic = 0.0;
  bool converged = false;
  SolverReport report;
};

struct GridSearchResult {
  std::vector<ScoredFit> fits;  // alpha-major, lambda descending within alpha
  int best = -1;                // index into fits; -1 when nothing converged
  int n_failed = 0;

  const ScoredFit& best_fit() const;
};

// Fit every (lambda, alpha) pair, warm-starting down each lambda ladder, and
// pick the converged fit with the smallest BIC.  Ties go to the larger
// lambda, then the larger alpha.  Non-converged fits are recorded and
// skipped by the argmin, never thrown.
GridSearchResult grid_search(const DesignMatrix& design, const Eigen::MatrixXd& y,
                             const TuningGrid& grid, const FitControls& controls = {});

}  // namespace fsgl
