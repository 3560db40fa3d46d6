#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "fsgl/errors.hpp"
#include "fsgl/model.hpp"
#include "fsgl/solver.hpp"
#include "support/oracles.hpp"

using namespace fsgl;
namespace oracle = fsgl::testing;

namespace {

struct Problem {
  FunctionalDataset data;
  DesignMatrix design;
  Eigen::MatrixXd y;
};

// Scalar-group classification problem with one strongly separated group
// ("sig"), one weak group, and one pure-noise group.  Class means sit on a
// circle so every class is linearly distinguishable through "sig" alone.
Problem make_problem(int n, int n_classes, unsigned seed, double signal = 1.5,
                     bool with_zero_group = false) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  FunctionalDataset ds;
  ds.n_classes = n_classes;
  ds.reference_class = n_classes;
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = 1 + (i % n_classes);

  const auto class_mean = [&](int label, int coord) {
    const double angle = 2.0 * M_PI * label / n_classes;
    return coord == 0 ? std::cos(angle) : std::sin(angle);
  };

  GroupData sig;
  sig.name = "sig";
  sig.functional = false;
  sig.values.resize(n, 2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c)
      sig.values(i, c) = signal * class_mean(ds.labels[i], c) + 0.8 * gauss(rng);
  ds.groups.push_back(std::move(sig));

  GroupData weak;
  weak.name = "weak";
  weak.functional = false;
  weak.values.resize(n, 2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c)
      weak.values(i, c) = 0.2 * class_mean(ds.labels[i], 1 - c) + gauss(rng);
  ds.groups.push_back(std::move(weak));

  GroupData noise;
  noise.name = "noise3";
  noise.functional = false;
  noise.values.resize(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) noise.values(i, c) = gauss(rng);
  ds.groups.push_back(std::move(noise));

  if (with_zero_group) {
    GroupData dead;
    dead.name = "dead";
    dead.functional = false;
    dead.values = Eigen::MatrixXd::Zero(n, 2);
    ds.groups.push_back(std::move(dead));
  }

  Problem prob;
  prob.design = build_design(ds);
  prob.y = encode_labels(ds.labels, n_classes, ds.reference_class);
  prob.data = std::move(ds);
  return prob;
}

std::vector<Eigen::MatrixXd> identity_weights(int n, int lm1) {
  return std::vector<Eigen::MatrixXd>(n, Eigen::MatrixXd::Identity(lm1, lm1));
}

std::vector<Eigen::MatrixXd> random_weight_roots(int n, int lm1, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::MatrixXd> roots(n);
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd c(lm1, lm1);
    for (int a = 0; a < lm1; ++a)
      for (int b = 0; b < lm1; ++b) c(a, b) = gauss(rng);
    const Eigen::MatrixXd w = c.transpose() * c + 0.1 * Eigen::MatrixXd::Identity(lm1, lm1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
    roots[i] = es.eigenvectors() *
               es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  }
  return roots;
}

// Literal assembly of the weighted per-group design, kept independent of the
// production loop it cross-checks.
Eigen::MatrixXd assemble_weighted(const std::vector<Eigen::MatrixXd>& roots,
                                  const Eigen::MatrixXd& Z) {
  const int n = int(Z.rows());
  const int m = int(Z.cols());
  const int lm1 = int(roots[0].rows());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n * lm1, m * lm1);
  for (int i = 0; i < n; ++i)
    for (int lp = 0; lp < lm1; ++lp)
      for (int l = 0; l < lm1; ++l)
        for (int k = 0; k < m; ++k) A(lp * n + i, l * m + k) = roots[i](lp, l) * Z(i, k);
  return A;
}

}  // namespace

TEST_CASE("penalty value") {
  FunctionalDataset ds;
  ds.n_classes = 3;
  ds.reference_class = 3;
  ds.labels = {1, 2, 3, 1, 2, 3};
  GroupData g;
  g.name = "a";
  g.functional = false;
  g.values = Eigen::MatrixXd::Zero(6, 2);
  g.values.col(0).setLinSpaced(6, 0.0, 1.0);
  ds.groups.push_back(g);
  const DesignMatrix design = build_design(ds);

  CoefficientSet coefs = CoefficientSet::zero(design);
  coefs.blocks[0].col(0) = Eigen::Vector2d(3.0, 0.0);
  coefs.blocks[0].col(1) = Eigen::Vector2d(0.0, 4.0);

  SUBCASE("hand-computed mixture") {
    // ||b_j|| = 5, sum of sub-block norms = 7, scale = n sqrt(2) lambda.
    const double v = penalty_value(coefs, {0.1, 0.5}, 10);
    CHECK(v == doctest::Approx(std::sqrt(2.0) * (0.5 * 5.0 + 0.5 * 7.0)).epsilon(1e-12));
    CHECK(penalty_value(coefs, {0.1, 0.0}, 10) == doctest::Approx(std::sqrt(2.0) * 5.0));
    CHECK(penalty_value(coefs, {0.1, 1.0}, 10) == doctest::Approx(std::sqrt(2.0) * 7.0));
  }

  SUBCASE("linear in lambda, zero at zero") {
    CHECK(penalty_value(coefs, {0.2, 0.5}, 10) ==
          doctest::Approx(2.0 * penalty_value(coefs, {0.1, 0.5}, 10)));
    CHECK(penalty_value(CoefficientSet::zero(design), {0.5, 0.5}, 10) == 0.0);
    CHECK(penalty_value(coefs, {0.0, 0.5}, 10) == 0.0);
  }

  SUBCASE("group scale is sqrt(dim) times lambda") {
    CHECK(group_scale(9, 2.0) == doctest::Approx(6.0));
    CHECK(group_scale(1, 0.3) == doctest::Approx(0.3));
  }

  SUBCASE("invalid configuration rejected") {
    CHECK_THROWS_AS(penalty_value(coefs, {-0.1, 0.5}, 10), input_error);
    CHECK_THROWS_AS(penalty_value(coefs, {0.1, 1.5}, 10), input_error);
  }
}

TEST_CASE("block orthogonalization") {
  SUBCASE("orthonormal design under identity weights is its own Q") {
    const int n = 6, lm1 = 2;
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, 2);
    Z(0, 0) = 1.0;
    Z(3, 1) = 1.0;
    const auto ob = orthogonalize_block(identity_weights(n, lm1), Z, "unit");
    const Eigen::MatrixXd A = assemble_weighted(identity_weights(n, lm1), Z);
    CHECK((ob.R - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ob.Q - A).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("random factorization reconstructs the weighted design") {
    const int n = 20, lm1 = 2, m = 3;
    std::mt19937 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd Z(n, m);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < m; ++k) Z(i, k) = gauss(rng);
    const auto roots = random_weight_roots(n, lm1, 11);
    const auto ob = orthogonalize_block(roots, Z, "rand");
    const Eigen::MatrixXd A = assemble_weighted(roots, Z);

    CHECK((ob.Q.transpose() * ob.Q - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() <
          1e-10);
    CHECK((ob.Q * ob.R - A).cwiseAbs().maxCoeff() < 1e-10);
    for (int c = 0; c < 6; ++c) CHECK(ob.R(c, c) > 0.0);
    for (int r = 1; r < 6; ++r)
      for (int c = 0; c < r; ++c) CHECK(ob.R(r, c) == 0.0);
  }

  SUBCASE("duplicated column reports the group by name") {
    Eigen::MatrixXd Z(8, 2);
    Z.col(0).setLinSpaced(8, -1.0, 1.0);
    Z.col(1) = Z.col(0);
    CHECK_THROWS_WITH_AS(orthogonalize_block(identity_weights(8, 1), Z, "dup"),
                         doctest::Contains("dup"), numerical_error);
  }

  SUBCASE("more coefficients than weighted rows") {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Random(2, 4);
    CHECK_THROWS_AS(orthogonalize_block(identity_weights(2, 1), Z, "wide"), numerical_error);
  }
}

TEST_CASE("group screening rule") {
  SUBCASE("worked example") {
    // n = 10, lambda = 0.1, alpha = 0.5, scalar sub-blocks: tau_s = tau_g = 0.5.
    Eigen::VectorXd r(2);
    r << 0.4, 2.0;
    CHECK_FALSE(group_screen(r, {0.1, 0.5}, 10, 1));  // survivors (0, 1.5), norm 1.5 > 0.5
    r << 0.4, 0.45;
    CHECK(group_screen(r, {0.1, 0.5}, 10, 1));  // nothing survives the sub-block threshold
    r << 0.5, 1.0;
    CHECK(group_screen(r, {0.1, 0.5}, 10, 1));  // survivor norm exactly at the boundary
  }

  SUBCASE("alpha 0 reduces to a plain group-norm test") {
    Eigen::VectorXd r(4);
    r << 1.0, 2.0, 2.0, 4.0;  // norm 5
    CHECK(group_screen(r, {5.0 / (10.0 * std::sqrt(2.0)) + 1e-9, 0.0}, 10, 2));
    CHECK_FALSE(group_screen(r, {5.0 / (10.0 * std::sqrt(2.0)) - 1e-9, 0.0}, 10, 2));
  }

  SUBCASE("alpha 1 screens iff every sub-block is below threshold") {
    Eigen::VectorXd r(4);
    r << 0.3, 0.4, 0.6, 0.8;  // sub-block norms 0.5 and 1.0
    CHECK(group_screen(r, {1.0 / (10.0 * std::sqrt(2.0)) + 1e-9, 1.0}, 10, 2));
    CHECK_FALSE(group_screen(r, {1.0 / (10.0 * std::sqrt(2.0)) - 1e-9, 1.0}, 10, 2));
  }
}

TEST_CASE("block solve") {
  SUBCASE("alpha 0 is the group soft threshold") {
    Eigen::VectorXd r(4);
    r << 3.0, 0.0, 0.0, 4.0;  // norm 5
    const PenaltyConfig cfg{0.1, 0.0};  // tau_g = 10 * sqrt(2) * 0.1 = sqrt(2)
    const Eigen::VectorXd beta = block_solve(r, cfg, 10, 2);
    const Eigen::VectorXd expect = (1.0 - std::sqrt(2.0) / 5.0) * r;
    CHECK((beta - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("alpha 1 thresholds each sub-block independently") {
    Eigen::VectorXd r(4);
    r << 0.3, 0.4, 3.0, 4.0;  // sub-block norms 0.5 and 5
    const double lambda = 1.0 / (10.0 * std::sqrt(2.0));  // tau_s = 1
    const Eigen::VectorXd beta = block_solve(r, {lambda, 1.0}, 10, 2);
    CHECK(beta.head(2).norm() == 0.0);  // 0.5 < tau_s
    const Eigen::VectorXd expect = (1.0 - 1.0 / 5.0) * r.tail(2);
    CHECK((beta.tail(2) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("matches the splitting oracle with a certified duality gap") {
    std::mt19937 rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
      const int dim = 1 + int(rng() % 3);
      const int nsub = 2 + int(rng() % 3);
      Eigen::VectorXd r(dim * nsub);
      for (int k = 0; k < r.size(); ++k) r[k] = 2.0 * gauss(rng);
      const int n = 10;
      const double alpha = (trial % 5) * 0.25;
      const double lambda = 0.05 + 0.4 * unif(rng);
      const PenaltyConfig cfg{lambda, alpha};

      const double scale = n * group_scale(dim, lambda);
      const auto res = oracle::prox_oracle(r, (1.0 - alpha) * scale, alpha * scale, dim);
      REQUIRE(res.gap <= 1e-12);

      const Eigen::VectorXd beta = block_solve(r, cfg, n, dim);
      const double f_impl =
          oracle::prox_objective(beta, r, (1.0 - alpha) * scale, alpha * scale, dim);
      const double f_oracle =
          oracle::prox_objective(res.beta, r, (1.0 - alpha) * scale, alpha * scale, dim);
      CHECK(f_impl <= f_oracle + 1e-9);
      CHECK((beta - res.beta).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  SUBCASE("screen decision agrees with the solution being zero") {
    std::mt19937 rng(3);
    std::normal_distribution<double> gauss(0.0, 0.6);
    for (int trial = 0; trial < 200; ++trial) {
      Eigen::VectorXd r(6);
      for (int k = 0; k < 6; ++k) r[k] = gauss(rng);
      const PenaltyConfig cfg{0.02 + 0.02 * (trial % 10), 0.1 * (trial % 11)};
      const bool zero = block_solve(r, cfg, 10, 2).norm() == 0.0;
      CHECK(group_screen(r, cfg, 10, 2) == zero);
    }
  }
}

TEST_CASE("lambda_max") {
  SUBCASE("binary single-coefficient example computed by hand") {
    FunctionalDataset ds;
    ds.n_classes = 2;
    ds.reference_class = 2;
    ds.labels = {1, 2, 1, 2};
    GroupData g;
    g.name = "x";
    g.functional = false;
    g.values.resize(4, 1);
    g.values << 1.0, -1.0, 2.0, -2.0;
    ds.groups.push_back(g);
    const DesignMatrix design = build_design(ds);
    const Eigen::MatrixXd y = encode_labels(ds.labels, 2, 2);

    // Balanced labels give zero intercept, W_i = 1/4, working residual
    // rho = (1,-1,1,-1); the weighted column is z/2, so
    // lambda_max = |a' rho| / (n ||a||) = 3 / (4 sqrt(2.5)).
    const double expect = 3.0 / (4.0 * std::sqrt(2.5));
    CHECK(lambda_max(design, y, 0.0) == doctest::Approx(expect).epsilon(1e-5));
    // With a single sub-block the two thresholds act in series, so the
    // boundary is the same for every alpha.
    CHECK(lambda_max(design, y, 0.5) == doctest::Approx(expect).epsilon(1e-5));
    CHECK(lambda_max(design, y, 1.0) == doctest::Approx(expect).epsilon(1e-5));
  }

  SUBCASE("never exceeds the alpha 0 value") {
    const Problem prob = make_problem(90, 3, 5);
    const double base = lambda_max(prob.design, prob.y, 0.0);
    for (double alpha : {0.25, 0.5, 0.75, 0.95, 1.0})
      CHECK(lambda_max(prob.design, prob.y, alpha) <= base * (1.0 + 1e-5));
  }

  SUBCASE("identically zero design contributes nothing") {
    FunctionalDataset ds;
    ds.n_classes = 2;
    ds.reference_class = 2;
    ds.labels = {1, 2, 1, 2};
    GroupData g;
    g.name = "dead";
    g.functional = false;
    g.values = Eigen::MatrixXd::Zero(4, 2);
    ds.groups.push_back(g);
    CHECK(lambda_max(build_design(ds), encode_labels(ds.labels, 2, 2), 0.5) == 0.0);

    const Problem with = make_problem(90, 3, 5, 1.5, true);
    const Problem without = make_problem(90, 3, 5, 1.5, false);
    CHECK(lambda_max(with.design, with.y, 0.5) ==
          doctest::Approx(lambda_max(without.design, without.y, 0.5)).epsilon(1e-9));
  }

  SUBCASE("alpha outside [0,1] rejected") {
    const Problem prob = make_problem(30, 3, 1);
    CHECK_THROWS_AS(lambda_max(prob.design, prob.y, -0.1), input_error);
    CHECK_THROWS_AS(lambda_max(prob.design, prob.y, 1.1), input_error);
  }
}

TEST_CASE("fit at and above lambda_max") {
  // Unbalanced labels so the intercept target is nontrivial.
  Problem prob = make_problem(120, 3, 9);
  for (int i = 0; i < 120; ++i) prob.data.labels[i] = i < 50 ? 1 : (i < 90 ? 2 : 3);
  // Rebuild the parts that depend on labels; group values stay as generated.
  prob.y = encode_labels(prob.data.labels, 3, 3);

  for (double alpha : {0.0, 0.5, 1.0}) {
    CAPTURE(alpha);
    const double lmax = lambda_max(prob.design, prob.y, alpha);
    const auto rep = fit(prob.design, prob.y, {1.01 * lmax, alpha});
    CHECK(rep.converged);
    for (int j = 0; j < prob.design.p(); ++j) {
      CHECK_FALSE(rep.active_groups[j]);
      CHECK(rep.coefficients.blocks[j].norm() == 0.0);
    }
    CHECK(rep.coefficients.intercepts[0] == doctest::Approx(std::log(50.0 / 30.0)).epsilon(1e-6));
    CHECK(rep.coefficients.intercepts[1] == doctest::Approx(std::log(40.0 / 30.0)).epsilon(1e-6));

    // Just below the boundary at least one group must leave zero.
    const auto below = fit(prob.design, prob.y, {0.995 * lmax, alpha});
    CHECK(below.converged);
    bool any = false;
    for (int j = 0; j < prob.design.p(); ++j) any = any || below.active_groups[j];
    CHECK(any);
  }
}

TEST_CASE("unpenalized fit matches the dense Newton oracle") {
  const Problem prob = make_problem(150, 3, 21);
  FitControls controls;
  controls.tol = 1e-8;
  controls.max_outer = 200;
  controls.keep_internals = true;
  const auto rep = fit(prob.design, prob.y, {0.0, 0.5}, controls);
  REQUIRE(rep.converged);

  const CoefficientSet mle = oracle::newton_mle(prob.design, prob.y);
  CHECK((rep.coefficients.intercepts - mle.intercepts).cwiseAbs().maxCoeff() < 1e-4);
  for (int j = 0; j < prob.design.p(); ++j)
    CHECK((rep.coefficients.blocks[j] - mle.blocks[j]).cwiseAbs().maxCoeff() < 1e-4);

  const double ll_mle = log_likelihood(prob.y, posterior_probs(prob.design, mle));
  CHECK(rep.loglik == doctest::Approx(ll_mle).epsilon(1e-8));

  // Without thresholds every group is active, nothing is shrunk, and the
  // stationarity residual is the plain score.
  for (int j = 0; j < prob.design.p(); ++j) {
    CHECK(rep.active_groups[j]);
    for (int l = 0; l < 2; ++l) CHECK(rep.shrinkage(j, l) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(kkt_check(prob.design, prob.y, rep, {0.0, 0.5}).worst() < 1e-4 * 150);
}

TEST_CASE("penalized fits are stationary and monotone") {
  const Problem prob = make_problem(150, 3, 33);
  const double lmax0 = lambda_max(prob.design, prob.y, 0.0);

  for (double alpha : {0.0, 0.5, 0.95}) {
    for (double frac : {0.5, 0.2, 0.05}) {
      CAPTURE(alpha);
      CAPTURE(frac);
      const PenaltyConfig cfg{frac * lmax0, alpha};
      FitControls controls;
      controls.keep_internals = true;
      const auto rep = fit(prob.design, prob.y, cfg, controls);
      CHECK(rep.converged);
      CHECK(kkt_check(prob.design, prob.y, rep, cfg).worst() < 1e-4 * 150);

      REQUIRE(rep.objective_before.size() == size_t(rep.outer_iterations));
      for (size_t t = 0; t < rep.objective_before.size(); ++t)
        CHECK(rep.objective_after[t] <= rep.objective_before[t] + 1e-10);

      // The separated group carries the signal and should never be dropped
      // at these penalty levels.
      CHECK(rep.active_groups[0]);

      // With no sub-block term, an active group is active on every boundary.
      if (alpha == 0.0)
        for (int j = 0; j < prob.design.p(); ++j)
          if (rep.active_groups[j])
            for (int l = 0; l < 2; ++l) CHECK(rep.active_subblocks[j][l]);
    }
  }

  SUBCASE("strong penalty drops the noise group") {
    const auto rep = fit(prob.design, prob.y, {0.5 * lmax0, 0.0});
    CHECK(rep.converged);
    CHECK(rep.active_groups[0]);
    CHECK_FALSE(rep.active_groups[2]);
  }
}

TEST_CASE("boundary-specific signal yields sub-block sparsity") {
  // Group "bnd" separates class 1 from the others but carries nothing about
  // class 2 versus class 3, so with a dominant sub-block penalty its second
  // coefficient column should die while the first survives.
  std::mt19937 rng(77);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 240;
  FunctionalDataset ds;
  ds.n_classes = 3;
  ds.reference_class = 3;
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = 1 + (i % 3);

  GroupData bnd;
  bnd.name = "bnd";
  bnd.functional = false;
  bnd.values.resize(n, 2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c)
      bnd.values(i, c) = (ds.labels[i] == 1 ? 1.6 : 0.0) + 0.5 * gauss(rng);
  ds.groups.push_back(std::move(bnd));

  GroupData other;
  other.name = "spread";
  other.functional = false;
  other.values.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    other.values(i, 0) = 0.9 * (ds.labels[i] == 2 ? 1.0 : -1.0) + gauss(rng);
    other.values(i, 1) = 0.9 * (ds.labels[i] == 3 ? 1.0 : -1.0) + gauss(rng);
  }
  ds.groups.push_back(std::move(other));

  const DesignMatrix design = build_design(ds);
  const Eigen::MatrixXd y = encode_labels(ds.labels, 3, 3);
  const double lmax = lambda_max(design, y, 0.95);

  bool found = false;
  for (double frac : {0.6, 0.4, 0.25, 0.15, 0.08}) {
    const auto rep = fit(design, y, {frac * lmax, 0.95});
    if (!rep.converged) continue;
    if (rep.active_groups[0] && rep.active_subblocks[0][0] && !rep.active_subblocks[0][1]) {
      found = true;
      break;
    }
  }
  CHECK(found);
}

TEST_CASE("sample order does not change the fit") {
  const Problem prob = make_problem(100, 3, 55);
  const double lmax = lambda_max(prob.design, prob.y, 0.5);
  const PenaltyConfig cfg{0.18 * lmax, 0.5};
  const auto rep = fit(prob.design, prob.y, cfg);

  std::vector<int> perm(100);
  for (int i = 0; i < 100; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), std::mt19937(99));

  FunctionalDataset shuffled = prob.data;
  for (int i = 0; i < 100; ++i) shuffled.labels[i] = prob.data.labels[perm[i]];
  for (size_t g = 0; g < shuffled.groups.size(); ++g)
    for (int i = 0; i < 100; ++i)
      shuffled.groups[g].values.row(i) = prob.data.groups[g].values.row(perm[i]);

  const auto rep2 = fit(build_design(shuffled), encode_labels(shuffled.labels, 3, 3), cfg);
  CHECK(rep2.converged);
  CHECK((rep.coefficients.intercepts - rep2.coefficients.intercepts).cwiseAbs().maxCoeff() < 1e-6);
  for (int j = 0; j < prob.design.p(); ++j)
    CHECK((rep.coefficients.blocks[j] - rep2.coefficients.blocks[j]).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("reference class choice does not move the unpenalized posteriors") {
  const Problem prob = make_problem(120, 3, 61);
  FitControls controls;
  controls.tol = 1e-8;
  controls.max_outer = 200;
  const auto rep = fit(prob.design, prob.y, {0.0, 0.0}, controls);
  REQUIRE(rep.converged);
  const Eigen::MatrixXd probs = posterior_probs(prob.design, rep.coefficients);

  FunctionalDataset alt = prob.data;
  alt.reference_class = 1;
  const DesignMatrix design2 = build_design(alt);
  const Eigen::MatrixXd y2 = encode_labels(alt.labels, 3, 1);
  const auto rep2 = fit(design2, y2, {0.0, 0.0}, controls);
  REQUIRE(rep2.converged);
  const Eigen::MatrixXd probs2 = posterior_probs(design2, rep2.coefficients);

  // Column of the original class c in the re-referenced fit.
  for (int c = 1; c <= 3; ++c) {
    const int col2 = rotated_label(c, 3, 1) - 1;
    CHECK((probs.col(c - 1) - probs2.col(col2)).cwiseAbs().maxCoeff() < 5e-4);
  }
}

TEST_CASE("warm starts converge to the same stationary points") {
  const Problem prob = make_problem(130, 3, 71);
  const double lmax = lambda_max(prob.design, prob.y, 0.5);
  FitControls controls;
  controls.keep_internals = true;

  const CoefficientSet* warm = nullptr;
  CoefficientSet carry;
  for (double frac : {0.8, 0.4, 0.2, 0.1}) {
    const PenaltyConfig cfg{frac * lmax, 0.5};
    const auto rep = fit(prob.design, prob.y, cfg, controls, warm);
    CHECK(rep.converged);
    CHECK(kkt_check(prob.design, prob.y, rep, cfg).worst() < 1e-4 * 130);
    carry = rep.coefficients;
    warm = &carry;
  }
}

TEST_CASE("solver reporting edge cases") {
  const Problem prob = make_problem(90, 3, 81);

  SUBCASE("iteration cap reports non-convergence without throwing") {
    FitControls controls;
    controls.max_outer = 1;
    const auto rep = fit(prob.design, prob.y, {0.0, 0.5}, controls);
    CHECK_FALSE(rep.converged);
    CHECK(rep.outer_iterations == 1);
  }

  SUBCASE("stationarity check demands kept internals") {
    const auto rep = fit(prob.design, prob.y, {0.1, 0.5});
    CHECK_THROWS_AS(kkt_check(prob.design, prob.y, rep, {0.1, 0.5}), input_error);
  }

  SUBCASE("zero design group is carried along as permanently inactive") {
    const Problem probz = make_problem(90, 3, 81, 1.5, true);
    const double lmax = lambda_max(probz.design, probz.y, 0.5);
    FitControls controls;
    controls.keep_internals = true;
    const PenaltyConfig cfg{0.3 * lmax, 0.5};
    const auto rep = fit(probz.design, probz.y, cfg, controls);
    CHECK(rep.converged);
    const int dead = probz.design.p() - 1;
    CHECK_FALSE(rep.active_groups[dead]);
    CHECK(rep.coefficients.blocks[dead].norm() == 0.0);
    CHECK(kkt_check(probz.design, probz.y, rep, cfg).worst() < 1e-4 * 90);
  }
}

TEST_CASE("functional group end to end through the solver") {
  std::mt19937 rng(101);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 100, m = 5;
  FunctionalDataset ds;
  ds.n_classes = 3;
  ds.reference_class = 3;
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = 1 + (i % 3);

  GroupData fn;
  fn.name = "curve";
  fn.functional = true;
  fn.basis = BSplineBasis::uniform(0.0, 1.0, 4, m - 4);
  fn.values.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < m; ++k)
      fn.values(i, k) = gauss(rng) + (k == 0 ? 1.2 * ds.labels[i] : 0.0);
  ds.groups.push_back(std::move(fn));

  GroupData sc;
  sc.name = "extra";
  sc.functional = false;
  sc.values.resize(n, 2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) sc.values(i, c) = gauss(rng);
  ds.groups.push_back(std::move(sc));

  const DesignMatrix design = build_design(ds);
  const Eigen::MatrixXd y = encode_labels(ds.labels, 3, 3);
  const double lmax = lambda_max(design, y, 0.5);
  FitControls controls;
  controls.keep_internals = true;
  const PenaltyConfig cfg{0.25 * lmax, 0.5};
  const auto rep = fit(design, y, cfg, controls);
  CHECK(rep.converged);
  CHECK(rep.active_groups[0]);
  CHECK(kkt_check(design, y, rep, cfg).worst() < 1e-4 * n);
}
