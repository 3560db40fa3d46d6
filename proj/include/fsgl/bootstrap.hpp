#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsgl/model.hpp"
#include "fsgl/selection.hpp"

namespace fsgl {

// The same observations with a different reference class; label renumbering
// happens downstream in encode_labels.
FunctionalDataset rotate_reference(const FunctionalDataset& data, int reference);

struct BootstrapOptions {
  int n_replicates = 100;
  std::uint64_t seed = 0;
  // Reference classes to refit under.  A fit with reference r exposes the
  // pairwise boundaries {c, r}; the default (empty) rotates through every
  // class so all pairs are covered directly.
  std::vector<int> rotations;
  int jobs = 1;
  int max_attempts = 100;  // redraws allowed until a resample contains every class
};

// Selection frequencies over bootstrap resamples.  Counts are per converged
// best-BIC fit; (replicate, rotation) fits where no grid point converged are
// tallied in n_failed_fits and excluded from every denominator.
struct SelectionReport {
  int n_classes = 0;
  int n_replicates = 0;
  std::vector<int> rotations;
  std::vector<std::string> group_names;

  // All unordered class pairs {a, b}, a < b, in lexicographic order; a pair
  // accumulates attempts only from rotations whose reference lies in it.
  std::vector<std::pair<int, int>> pairs;
  Eigen::MatrixXi boundary_counts;    // pairs x groups
  Eigen::MatrixXi boundary_attempts;  // pairs x groups

  Eigen::VectorXi variable_counts;  // per group, over every converged fit
  int variable_attempts = 0;
  int n_failed_fits = 0;

  int pair_index(int a, int b) const;
  // counts / attempts, NaN where a pair was never attempted.
  Eigen::MatrixXd boundary_frequency() const;
  Eigen::VectorXd variable_frequency() const;
};

// Draw resamples serially (one independent RNG stream per replicate, so the
// index sets do not depend on how later work is scheduled), then fit every
// (replicate, rotation) pair -- grid search with BIC selection on each --
// across a thread pool.  Results are identical for any jobs count.
SelectionReport bootstrap_run(const FunctionalDataset& data, const TuningGrid& grid,
                              const BootstrapOptions& options,
                              const FitControls& controls = {});

}  // namespace fsgl
