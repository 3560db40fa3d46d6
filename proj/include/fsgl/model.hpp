#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "fsgl/bspline.hpp"

namespace fsgl {

// ---------------------------------------------------------------------------
// Layout conventions used throughout the solver
//
// Classes are numbered 1..L with the reference class renumbered to L before
// any fitting.  Vectors over (class, observation) pairs -- working responses,
// residuals, anything of length n(L-1) -- are stacked class-major:
// entry (l, i) lives at index l*n + i with 0-based l in [0, L-1).  This
// matches the per-group design blocks I_{L-1} (x) Z_j acting on coefficient
// blocks stacked sub-block-major (all of class 1's coefficients, then class
// 2's, ...).  Per-observation (L-1)x(L-1) weight blocks gather/scatter
// through that same indexing.
// ---------------------------------------------------------------------------

// One predictor group: either a functional predictor (basis coefficients of
// smoothed curves, one row per sample) or a multivariate scalar predictor
// (raw values).  `values` is n x dim; for functional groups dim must equal
// the basis size.
struct GroupData {
  std::string name;
  bool functional = true;
  std::optional<BSplineBasis> basis;
  Eigen::MatrixXd values;

  int dim() const { return static_cast<int>(values.cols()); }
};

// Samples with class labels plus the predictor groups.  Labels come in
// original numbering; `reference_class` names the class that plays the role
// of the softmax baseline.
struct FunctionalDataset {
  int n_classes = 0;                     // L
  int reference_class = 0;               // 1..L
  std::vector<int> labels;               // size n, values 1..L
  std::vector<GroupData> groups;
  std::vector<std::string> class_names;  // size L; defaults to "1".."L"

  int n() const { return static_cast<int>(labels.size()); }
  int p() const { return static_cast<int>(groups.size()); }

  // Checks shape consistency, label range, presence of every class, and
  // basis/dim agreement.  Throws input_error.
  void validate() const;
};

// Per-group design blocks Z_j (n x M_j): basis coefficients folded with the
// basis Gram matrix for functional groups, raw values for scalar groups.
struct DesignMatrix {
  int n = 0;
  int n_classes = 0;                  // L
  std::vector<Eigen::MatrixXd> Z;
  std::vector<int> dims;              // M_j
  std::vector<std::string> group_names;

  int p() const { return static_cast<int>(Z.size()); }
  int total_dim() const;              // sum of M_j (per class)
};

// Intercepts plus per-group coefficient blocks; column l of blocks[j] is
// b_jl, the coefficients of group j on the boundary between rotated class
// l+1 and the reference.
struct CoefficientSet {
  Eigen::VectorXd intercepts;              // L-1
  std::vector<Eigen::MatrixXd> blocks;     // M_j x (L-1)

  static CoefficientSet zero(const DesignMatrix& design);

  // Flattened copy of group j, sub-block-major (column-stacked).
  Eigen::VectorXd group_vec(int j) const;
  double group_norm(int j) const { return blocks[j].norm(); }
};

// Class rotation: new label of original class c when `reference` is moved to
// the last position and the remaining classes close ranks in order.
int rotated_label(int c, int n_classes, int reference);

// One-hot indicator matrix y (n x (L-1)) in rotated numbering; rows of the
// reference class are all zero.
Eigen::MatrixXd encode_labels(const std::vector<int>& labels, int n_classes, int reference);

DesignMatrix build_design(const FunctionalDataset& dataset);

// Rotated-class posterior probabilities, n x L with the reference in the
// last column.  Uses a max-shifted softmax; rows sum to one.
Eigen::MatrixXd posterior_probs(const DesignMatrix& design, const CoefficientSet& coefs);

// Multinomial log-likelihood of the indicator matrix under `probs`.
double log_likelihood(const Eigen::MatrixXd& y, const Eigen::MatrixXd& probs);

// Exact score blocks d loglik / d b_jl = Z_j' (y_l - pi_l), one M_j x (L-1)
// matrix per group, plus the intercept score in `intercept_score`.
std::vector<Eigen::MatrixXd> score_blocks(const DesignMatrix& design, const Eigen::MatrixXd& y,
                                          const Eigen::MatrixXd& probs,
                                          Eigen::VectorXd* intercept_score = nullptr);

// State of one iteratively-reweighted least-squares linearization.
struct IRLSState {
  Eigen::MatrixXd probs;           // n x L, exact softmax output
  Eigen::MatrixXd probs_floored;   // clamped + renormalized, used for W
  std::vector<Eigen::MatrixXd> W;       // per-observation (L-1)x(L-1) blocks
  std::vector<Eigen::MatrixXd> W_half;  // symmetric PSD square roots
  Eigen::VectorXd eta;             // working response, n(L-1) class-major
  Eigen::VectorXd resid;           // y - probs (exact), class-major
};

// Builds the weighted-least-squares approximation of the log-likelihood at
// `coefs`: per-observation multinomial covariance blocks from floored
// probabilities, their PSD square roots, and the working response
// eta = linear predictor + W^- (y - pi).  The gradient of the resulting
// quadratic at the expansion point equals the exact score because the
// residual uses unfloored probabilities.
IRLSState irls_linearize(const DesignMatrix& design, const CoefficientSet& coefs,
                         const Eigen::MatrixXd& y);

// Apply the per-observation blocks of `blocks` to a class-major vector.
Eigen::VectorXd apply_blockwise(const std::vector<Eigen::MatrixXd>& blocks,
                                const Eigen::VectorXd& v, int n, int n_classes);

// Class-major linear predictor including intercepts (length n(L-1)).
Eigen::VectorXd linear_predictor_vec(const DesignMatrix& design, const CoefficientSet& coefs);

}  // namespace fsgl
