#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fsgl/bootstrap.hpp"
#include "fsgl/model.hpp"
#include "fsgl/selection.hpp"
#include "fsgl/solver.hpp"

// ---------------------------------------------------------------------------
// Command-line driver layer: JSON run configuration, long-format CSV
// ingestion (with smoothing and exclusion filters), and the artifact writers
// behind the `smooth`, `path`, `fit`, and `bootstrap` subcommands.  Kept as a
// library so tests can exercise the pipeline without spawning processes.
// ---------------------------------------------------------------------------

namespace fsgl {

// Basis/assembly settings for one predictor, from the "predictors" table of
// the config file.
struct BasisSpec {
  bool functional = true;
  int order = 4;
  int n_interior = 8;             // uniform interior knots; ignored when
  std::vector<double> knots;      // explicit interior knots are given
  double ridge = 1e-8;            // smoothing stabilizer
  // Basis interval; defaults to the observed time range of the predictor.
  std::optional<std::pair<double, double>> domain;
};

struct RunConfig {
  std::string data_csv;
  std::string labels_csv;
  std::string output_dir = "fsgl_out";

  // Config-file order; every predictor appearing in the data must be listed.
  std::vector<std::pair<std::string, BasisSpec>> predictors;

  // Exclusion filters.  A sample is dropped (and logged) when a functional
  // predictor listed in `required` has any missing time point, when any
  // functional predictor misses more than `max_missing` points of that
  // predictor's observed time grid, or when it has no usable observations
  // for some predictor at all.
  std::optional<int> max_missing;
  std::vector<std::string> required;

  // Tuning grid: explicit `lambdas` win over the automatic ladder.
  int n_lambda = 50;
  double min_ratio = 1e-3;
  std::vector<double> alphas = {0.0, 0.25, 0.5, 0.75, 0.95};
  std::vector<double> lambdas;

  FitControls controls;

  // Bootstrap settings; `rotations` holds class names (resolved after
  // ingestion), empty meaning every class in turn.
  int n_replicates = 100;
  std::uint64_t seed = 0;
  std::vector<std::string> rotations;

  std::optional<std::string> reference_class;
};

// Parses the JSON config at `path`.  Data and label paths are resolved
// relative to the config file's directory; `output_dir` is left as given
// (relative to the working directory).  Unknown keys are an input_error, as
// are malformed values.  Throws input_error.
RunConfig load_config(const std::string& path);

struct ExclusionRecord {
  std::string sample_id;
  std::string reason;
};

struct IngestResult {
  FunctionalDataset data;
  std::vector<std::string> sample_ids;    // row order of `data`
  std::vector<ExclusionRecord> excluded;  // ingestion log
};

// Reads the data CSV (header `sample_id,predictor,time,value`) and labels
// CSV (header `sample_id,class`), applies the exclusion filters, smooths
// functional predictors, and assembles scalar groups in sorted time order.
// Classes are the sorted unique label strings, numbered 1..L in that order;
// samples are ordered by sample_id, so ingestion is insensitive to input row
// order.  Throws input_error on malformed input, unknown predictors, label
// mismatches, or an empty result.
IngestResult ingest(const RunConfig& config);

// Best-model export read back from disk: enough to rebuild posteriors.
struct StoredModel {
  double lambda = 0.0;
  double alpha = 0.0;
  std::vector<std::string> classes;
  std::string reference_class;
  std::vector<std::string> group_names;
  CoefficientSet coefficients;  // sub-blocks in rotated class order
};

StoredModel read_best_model(const std::string& path);

// Subcommand drivers.  Each ingests per `config`, writes its artifacts under
// `config.output_dir` (created if absent), and throws the module's error on
// failure: input_error (exit 2), numerical_error (3), convergence_error (4).
//
//   smooth     writes smoothed.csv (per-sample basis coefficients / scalar
//              values) and ingest_log.csv
//   path       writes path.csv (one row per grid point) and ingest_log.csv
//   fit        path outputs plus best_model.json and
//              coefficient_functions.csv (each functional coefficient curve
//              on a 200-point grid)
//   bootstrap  writes bootstrap_boundaries.csv, bootstrap_variables.csv,
//              bootstrap_report.json, and ingest_log.csv
void run_smooth(const RunConfig& config);
void run_path(const RunConfig& config);
void run_fit(const RunConfig& config);
void run_bootstrap(const RunConfig& config, int jobs);

}  // namespace fsgl
