#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fsgl/bootstrap.hpp"
#include "fsgl/bspline.hpp"
#include "fsgl/errors.hpp"
#include "fsgl/model.hpp"
#include "fsgl/selection.hpp"
#include "fsgl/solver.hpp"

namespace py = pybind11;
using namespace fsgl;

namespace {

FitControls make_controls(double tol, int max_outer, int max_inner) {
  FitControls c;
  c.tol = tol;
  c.max_outer = max_outer;
  c.max_inner = max_inner;
  return c;
}

TuningGrid make_grid(const DesignMatrix& design, const Eigen::MatrixXd& y,
                     const std::vector<double>& lambdas, const std::vector<double>& alphas,
                     int n_lambda, double min_ratio) {
  if (!lambdas.empty()) {
    TuningGrid grid;
    grid.lambdas = lambdas;
    grid.alphas = alphas;
    return grid;
  }
  return default_grid(design, y, n_lambda, min_ratio, alphas);
}

}  // namespace

PYBIND11_MODULE(fsgl, m) {
  m.doc() = "Sparse group lasso for multiclass logistic regression on functional predictors";

  py::register_exception<input_error>(m, "InputError", PyExc_ValueError);
  py::register_exception<numerical_error>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<convergence_error>(m, "ConvergenceError", PyExc_RuntimeError);

  py::class_<BSplineBasis>(m, "BSplineBasis",
                           "Clamped B-spline basis on [a, b]; size = order + #interior knots")
      .def(py::init<double, double, int, std::vector<double>>(), py::arg("a"), py::arg("b"),
           py::arg("order"), py::arg("interior_knots"))
      .def_static("uniform", &BSplineBasis::uniform, py::arg("a"), py::arg("b"), py::arg("order"),
                  py::arg("n_interior"), "Equally spaced interior knots")
      .def_property_readonly("order", &BSplineBasis::order)
      .def_property_readonly("size", &BSplineBasis::size)
      .def_property_readonly("lower", &BSplineBasis::lower)
      .def_property_readonly("upper", &BSplineBasis::upper)
      .def_property_readonly("interior_knots", &BSplineBasis::interior_knots)
      .def("evaluate", &BSplineBasis::evaluate, py::arg("t"))
      .def("evaluate_many", &BSplineBasis::evaluate_many, py::arg("ts"))
      .def("gram_matrix", &BSplineBasis::gram_matrix);

  m.def(
      "smooth_observations",
      [](const BSplineBasis& basis, const Eigen::VectorXd& times, const Eigen::VectorXd& values,
         double ridge) {
        RawCurve curve;
        curve.times = times;
        curve.values = values;
        return smooth_observations(basis, curve, ridge);
      },
      py::arg("basis"), py::arg("times"), py::arg("values"), py::arg("ridge") = 1e-8,
      "Penalized least-squares basis coefficients for one irregularly sampled curve");

  py::class_<FunctionalDataset>(m, "Dataset", "Labeled samples plus predictor groups")
      .def(py::init([](std::vector<int> labels, int n_classes, int reference) {
             FunctionalDataset ds;
             ds.labels = std::move(labels);
             ds.n_classes = n_classes;
             ds.reference_class = reference;
             return ds;
           }),
           py::arg("labels"), py::arg("n_classes"), py::arg("reference"),
           "Labels are 1..n_classes; `reference` names the softmax baseline class")
      .def_readonly("n_classes", &FunctionalDataset::n_classes)
      .def_readonly("reference_class", &FunctionalDataset::reference_class)
      .def_readonly("labels", &FunctionalDataset::labels)
      .def_property_readonly("n", &FunctionalDataset::n)
      .def_property_readonly("p", &FunctionalDataset::p)
      .def_property_readonly("group_names",
                             [](const FunctionalDataset& ds) {
                               std::vector<std::string> names;
                               for (const auto& g : ds.groups) names.push_back(g.name);
                               return names;
                             })
      .def(
          "add_scalar_group",
          [](FunctionalDataset& ds, const std::string& name, const Eigen::MatrixXd& values) {
            GroupData g;
            g.name = name;
            g.functional = false;
            g.values = values;
            ds.groups.push_back(std::move(g));
          },
          py::arg("name"), py::arg("values"), "Raw multivariate predictor, one row per sample")
      .def(
          "add_functional_group",
          [](FunctionalDataset& ds, const std::string& name, const BSplineBasis& basis,
             const Eigen::MatrixXd& coefficients) {
            GroupData g;
            g.name = name;
            g.basis = basis;
            g.values = coefficients;
            ds.groups.push_back(std::move(g));
          },
          py::arg("name"), py::arg("basis"), py::arg("coefficients"),
          "Smoothed curves as basis coefficients, one row per sample")
      .def("validate", &FunctionalDataset::validate);

  py::class_<CoefficientSet>(m, "CoefficientSet")
      .def_readonly("intercepts", &CoefficientSet::intercepts)
      .def_readonly("blocks", &CoefficientSet::blocks);

  py::class_<SolverReport>(m, "FitReport")
      .def_readonly("coefficients", &SolverReport::coefficients)
      .def_readonly("active_groups", &SolverReport::active_groups)
      .def_readonly("active_subblocks", &SolverReport::active_subblocks)
      .def_readonly("shrinkage", &SolverReport::shrinkage)
      .def_readonly("converged", &SolverReport::converged)
      .def_readonly("loglik", &SolverReport::loglik)
      .def_readonly("outer_iterations", &SolverReport::outer_iterations);

  m.def(
      "lambda_max",
      [](const FunctionalDataset& ds, double alpha) {
        const DesignMatrix design = build_design(ds);
        const Eigen::MatrixXd y = encode_labels(ds.labels, ds.n_classes, ds.reference_class);
        return lambda_max(design, y, alpha);
      },
      py::arg("dataset"), py::arg("alpha") = 0.0, py::call_guard<py::gil_scoped_release>(),
      "Smallest penalty level at which every group is zero");

  m.def(
      "fit",
      [](const FunctionalDataset& ds, double lam, double alpha, double tol, int max_outer,
         int max_inner) {
        const DesignMatrix design = build_design(ds);
        const Eigen::MatrixXd y = encode_labels(ds.labels, ds.n_classes, ds.reference_class);
        PenaltyConfig config;
        config.lambda = lam;
        config.alpha = alpha;
        return fit(design, y, config, make_controls(tol, max_outer, max_inner));
      },
      py::arg("dataset"), py::arg("lam"), py::arg("alpha") = 0.0, py::arg("tol") = 1e-6,
      py::arg("max_outer") = 100, py::arg("max_inner") = 1000,
      py::call_guard<py::gil_scoped_release>(), "One penalized fit at (lam, alpha)");

  py::class_<ScoredFit>(m, "ScoredFit")
      .def_readonly("lam", &ScoredFit::lambda)
      .def_readonly("alpha", &ScoredFit::alpha)
      .def_readonly("df", &ScoredFit::df)
      .def_readonly("bic", &ScoredFit::bic)
      .def_readonly("converged", &ScoredFit::converged)
      .def_readonly("report", &ScoredFit::report);

  py::class_<GridSearchResult>(m, "GridSearchResult")
      .def_readonly("fits", &GridSearchResult::fits)
      .def_readonly("best", &GridSearchResult::best)
      .def_readonly("n_failed", &GridSearchResult::n_failed)
      .def("best_fit", &GridSearchResult::best_fit, py::return_value_policy::reference_internal);

  m.def(
      "grid_search",
      [](const FunctionalDataset& ds, const std::vector<double>& lambdas,
         const std::vector<double>& alphas, int n_lambda, double min_ratio, double tol,
         int max_outer, int max_inner) {
        const DesignMatrix design = build_design(ds);
        const Eigen::MatrixXd y = encode_labels(ds.labels, ds.n_classes, ds.reference_class);
        const TuningGrid grid = make_grid(design, y, lambdas, alphas, n_lambda, min_ratio);
        return grid_search(design, y, grid, make_controls(tol, max_outer, max_inner));
      },
      py::arg("dataset"), py::arg("lambdas") = std::vector<double>{},
      py::arg("alphas") = std::vector<double>{0.0, 0.25, 0.5, 0.75, 0.95},
      py::arg("n_lambda") = 50, py::arg("min_ratio") = 1e-3, py::arg("tol") = 1e-6,
      py::arg("max_outer") = 100, py::arg("max_inner") = 1000,
      py::call_guard<py::gil_scoped_release>(),
      "BIC-scored fits over the (lambda, alpha) grid with warm starts");

  py::class_<SelectionReport>(m, "SelectionReport")
      .def_readonly("n_classes", &SelectionReport::n_classes)
      .def_readonly("n_replicates", &SelectionReport::n_replicates)
      .def_readonly("rotations", &SelectionReport::rotations)
      .def_readonly("group_names", &SelectionReport::group_names)
      .def_readonly("pairs", &SelectionReport::pairs)
      .def_readonly("boundary_counts", &SelectionReport::boundary_counts)
      .def_readonly("boundary_attempts", &SelectionReport::boundary_attempts)
      .def_readonly("variable_counts", &SelectionReport::variable_counts)
      .def_readonly("variable_attempts", &SelectionReport::variable_attempts)
      .def_readonly("n_failed_fits", &SelectionReport::n_failed_fits)
      .def("pair_index", &SelectionReport::pair_index, py::arg("a"), py::arg("b"))
      .def("boundary_frequency", &SelectionReport::boundary_frequency)
      .def("variable_frequency", &SelectionReport::variable_frequency);

  m.def(
      "bootstrap",
      [](const FunctionalDataset& ds, int replicates, std::uint64_t seed,
         const std::vector<int>& rotations, int jobs, const std::vector<double>& lambdas,
         const std::vector<double>& alphas, int n_lambda, double min_ratio, double tol,
         int max_outer, int max_inner) {
        const DesignMatrix design = build_design(ds);
        const Eigen::MatrixXd y = encode_labels(ds.labels, ds.n_classes, ds.reference_class);
        const TuningGrid grid = make_grid(design, y, lambdas, alphas, n_lambda, min_ratio);
        BootstrapOptions options;
        options.n_replicates = replicates;
        options.seed = seed;
        options.rotations = rotations;
        options.jobs = jobs;
        return bootstrap_run(ds, grid, options, make_controls(tol, max_outer, max_inner));
      },
      py::arg("dataset"), py::arg("replicates") = 100, py::arg("seed") = 0,
      py::arg("rotations") = std::vector<int>{}, py::arg("jobs") = 1,
      py::arg("lambdas") = std::vector<double>{},
      py::arg("alphas") = std::vector<double>{0.0, 0.25, 0.5, 0.75, 0.95},
      py::arg("n_lambda") = 50, py::arg("min_ratio") = 1e-3, py::arg("tol") = 1e-6,
      py::arg("max_outer") = 100, py::arg("max_inner") = 1000,
      py::call_guard<py::gil_scoped_release>(),
      "Selection frequencies per variable and class boundary over bootstrap resamples");
}
