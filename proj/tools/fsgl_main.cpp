#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include "fsgl/cli.hpp"
#include "fsgl/errors.hpp"

namespace {

constexpr const char* kConfigDefaults = R"(Config file keys and defaults:
  data, labels              input CSV paths, relative to the config file (required)
  output_dir                artifact directory, relative to the working directory ("fsgl_out")
  predictors.<name>.kind    "functional" or "scalar" ("functional")
  predictors.<name>.order   B-spline order ("4")
  predictors.<name>.interior_knots
                            uniform interior knot count ("8"); or "knots": explicit list
  predictors.<name>.ridge   smoothing stabilizer ("1e-8")
  predictors.<name>.domain  basis interval [lo, hi] (observed time range)
  filters.max_missing       max missing time points per functional predictor (unlimited)
  filters.required          predictors that must be complete ([])
  grid.n_lambda             ladder length ("50")
  grid.min_ratio            smallest/largest lambda ("0.001"); or "lambdas": explicit list
  grid.alphas               mixing weights ("[0, 0.25, 0.5, 0.75, 0.95]")
  solver.tol                relative-change stop ("1e-6")
  solver.max_outer          relinearization limit ("100")
  solver.max_inner          descent sweeps per linearization ("1000")
  bootstrap.replicates      resample count ("100")
  bootstrap.seed            RNG seed ("0")
  bootstrap.rotations       reference classes to rotate through (all classes)
  reference_class           baseline class name (last in sorted order)

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 non-convergence.)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse group lasso for multiclass logistic regression on functional predictors"};
  app.require_subcommand(1);
  app.footer(kConfigDefaults);

  std::string config_path;
  std::string out_override;
  int jobs = 1;
  int replicates_override = -1;
  long long seed_override = -1;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run configuration")->required();
    cmd->add_option("-o,--out", out_override, "Override the configured output directory");
  };

  CLI::App* smooth = app.add_subcommand(
      "smooth", "Ingest and smooth only; write per-sample basis coefficients");
  CLI::App* path = app.add_subcommand(
      "path", "Fit the full tuning grid; write the selection path table");
  CLI::App* fit = app.add_subcommand(
      "fit", "Grid fit plus best-model export and coefficient curves");
  CLI::App* bootstrap = app.add_subcommand(
      "bootstrap", "Bootstrap selection frequencies per variable and class boundary");
  for (CLI::App* cmd : {smooth, path, fit, bootstrap}) add_common(cmd);
  bootstrap->add_option("-j,--jobs", jobs, "Worker threads for bootstrap fits")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bootstrap->add_option("-B,--replicates", replicates_override, "Override bootstrap.replicates");
  bootstrap->add_option("-s,--seed", seed_override, "Override bootstrap.seed");

  // Usage problems are input errors; keep --help and --version at zero.
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    fsgl::RunConfig config = fsgl::load_config(config_path);
    if (!out_override.empty()) config.output_dir = out_override;
    if (replicates_override >= 0) config.n_replicates = replicates_override;
    if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);

    if (smooth->parsed())
      fsgl::run_smooth(config);
    else if (path->parsed())
      fsgl::run_path(config);
    else if (fit->parsed())
      fsgl::run_fit(config);
    else
      fsgl::run_bootstrap(config, jobs);
    return 0;
  } catch (const fsgl::input_error& e) {
    std::fprintf(stderr, "error (input): %s\n", e.what());
    return 2;
  } catch (const fsgl::numerical_error& e) {
    std::fprintf(stderr, "error (numerical): %s\n", e.what());
    return 3;
  } catch (const fsgl::convergence_error& e) {
    std::fprintf(stderr, "error (convergence): %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error (internal): %s\n", e.what());
    return 3;
  }
}
