#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "fsgl/model.hpp"

namespace fsgl {

// Sparse group lasso configuration.  The penalty applied to the working
// problem is
//   n (1-alpha) sum_j lambda_j ||b_j||_2  +  n alpha sum_j lambda_j sum_l ||b_jl||_2
// with the per-group scale lambda_j = sqrt(M_j) * lambda.  alpha = 0 is the
// group lasso (variable selection only); alpha = 1 penalizes sub-blocks
// (class boundaries) only.
struct PenaltyConfig {
  double lambda = 0.0;
  double alpha = 0.0;
};

inline double group_scale(int dim, double lambda) { return std::sqrt(double(dim)) * lambda; }

// Penalty evaluated on a coefficient set (used for reporting; the solver
// applies the same functional to its orthogonalized coordinates).
double penalty_value(const CoefficientSet& coefs, const PenaltyConfig& config, int n);

// Thin QR factorization of the weighted per-group design W^(1/2) (I (x) Z_j),
// with the sign convention R(k, k) > 0.  Q has orthonormal columns:
// n(L-1) x M_j(L-1); R is upper triangular M_j(L-1) square.
struct OrthoBlock {
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;
};

OrthoBlock orthogonalize_block(const std::vector<Eigen::MatrixXd>& w_half,
                               const Eigen::MatrixXd& Z_j,
                               const std::string& group_name = {});

// Group-level screening rule: with S_jl = (||rtilde_jl|| - n alpha lambda_j)_+,
// the whole group stays at zero iff ||S_j||_2 <= n (1-alpha) lambda_j.
// `rtilde_j` is the orthogonalized partial residual, sub-block-major with
// L-1 sub-blocks of length dim.
bool group_screen(const Eigen::VectorXd& rtilde_j, const PenaltyConfig& config, int n, int dim);

// Closed-form minimizer of
//   (1/2)||rtilde_j - beta||^2 + n(1-alpha) lambda_j ||beta||
//                              + n alpha lambda_j sum_l ||beta_l||
// obtained by sub-block soft-thresholding followed by group shrinkage.
Eigen::VectorXd block_solve(const Eigen::VectorXd& rtilde_j, const PenaltyConfig& config, int n,
                            int dim);

struct FitControls {
  double tol = 1e-6;       // relative L2 change, inner sweeps and outer iterations
  int max_outer = 100;     // IRLS iterations
  int max_inner = 1000;    // coordinate-descent sweeps per IRLS iteration
  int max_halvings = 20;   // step halvings against the penalized objective
  bool keep_internals = false;
};

// Heavyweight leftovers of the final IRLS iteration, kept only on request:
// the linearization state, the per-group QR factors from the expansion
// point, and the final orthogonalized partial residuals rtilde_{-j}.
struct FitInternals {
  IRLSState state;
  std::vector<OrthoBlock> ortho;
  std::vector<Eigen::VectorXd> rtilde;
};

struct SolverReport {
  CoefficientSet coefficients;
  // Solution in the orthogonalized coordinates of the final working
  // problem, b*_j = R_j b_j; the thresholding (and therefore the reported
  // selection pattern) lives here.
  std::vector<Eigen::VectorXd> starred;
  std::vector<bool> active_groups;
  std::vector<std::vector<bool>> active_subblocks;
  // Shrinkage factors c_jl of the final block solves; the trace of the
  // working-response smoother restricted to group j is M_j * sum_l c_jl.
  Eigen::MatrixXd shrinkage;  // p x (L-1)
  int outer_iterations = 0;
  long inner_sweeps = 0;
  bool converged = false;
  double loglik = 0.0;
  double penalized_objective = 0.0;
  // Objective value before/after each accepted IRLS step, both measured
  // with that iteration's orthogonalized penalty; step-halving enforces
  // after <= before.
  std::vector<double> objective_before, objective_after;
  std::optional<FitInternals> internals;
};

// Penalized fit at one (lambda, alpha).  `warm` seeds coefficients (and
// intercepts); cold starts first run the intercept-only Newton iteration so
// screening happens at the state that defines lambda_max.  Non-convergence
// is reported, not thrown.
SolverReport fit(const DesignMatrix& design, const Eigen::MatrixXd& y, const PenaltyConfig& config,
                 const FitControls& controls = {}, const CoefficientSet* warm = nullptr);

// Smallest lambda at which every group passes the screening rule at the
// intercept-only fit, found by bisection to 1e-6 relative precision.
// Groups whose design block is identically zero cannot absorb signal and
// are skipped.
double lambda_max(const DesignMatrix& design, const Eigen::MatrixXd& y, double alpha);

// Stationarity certificate of a converged fit, evaluated with the exact
// likelihood score mapped into the final orthogonalized coordinates
// (g*_j = -R_j^{-T} s_j).  Violations are comparable to the n-scaled
// thresholds; converged fits should satisfy all three below 1e-4 * n.
struct KKTReport {
  double worst_active = 0.0;     // ||g* + subgradients|| over active sub-blocks
  double worst_subblock = 0.0;   // (||g*_jl|| - n alpha lambda_j)_+ over zero sub-blocks
  double worst_group = 0.0;      // (||S_j(g*)|| - n(1-alpha) lambda_j)_+ over zero groups
  double worst() const { return std::max({worst_active, worst_subblock, worst_group}); }
};

KKTReport kkt_check(const DesignMatrix& design, const Eigen::MatrixXd& y,
                    const SolverReport& report, const PenaltyConfig& config);

}  // namespace fsgl
