#include "fsgl/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <limits>

#include "fsgl/errors.hpp"

namespace fsgl {

namespace {

// Penalty thresholds of the orthogonalized working problem for one group:
// tau_s scales the sub-block (boundary) term, tau_g the group term.
struct Thresholds {
  double tau_s, tau_g;
};

Thresholds thresholds_for(const PenaltyConfig& config, int n, int dim) {
  const double scale = double(n) * group_scale(dim, config.lambda);
  return {config.alpha * scale, (1.0 - config.alpha) * scale};
}

void validate_penalty(const PenaltyConfig& config) {
  if (!(config.lambda >= 0.0)) throw input_error("penalty: lambda must be >= 0");
  if (!(config.alpha >= 0.0 && config.alpha <= 1.0))
    throw input_error("penalty: alpha must lie in [0, 1]");
}

double starred_penalty(const std::vector<Eigen::VectorXd>& bstar, const PenaltyConfig& config,
                       int n, const std::vector<int>& dims) {
  double total = 0.0;
  for (std::size_t j = 0; j < bstar.size(); ++j) {
    if (bstar[j].size() == 0) continue;
    const auto th = thresholds_for(config, n, dims[j]);
    const int nsub = int(bstar[j].size()) / dims[j];
    double sub = 0.0;
    for (int l = 0; l < nsub; ++l) sub += bstar[j].segment(l * dims[j], dims[j]).norm();
    total += th.tau_g * bstar[j].norm() + th.tau_s * sub;
  }
  return total;
}

Eigen::MatrixXd unflatten(const Eigen::VectorXd& v, int rows, int cols) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

// Intercept-only maximum likelihood via Newton iteration with step halving.
// Assumes the coefficient blocks currently held in `coefs` stay fixed
// (they are zero for the cold starts this serves).
void intercept_newton(const DesignMatrix& design, const Eigen::MatrixXd& y,
                      CoefficientSet& coefs) {
  const int n = design.n;
  const int lm1 = design.n_classes - 1;
  double ll = log_likelihood(y, posterior_probs(design, coefs));
  for (int it = 0; it < 100; ++it) {
    IRLSState st = irls_linearize(design, coefs, y);
    Eigen::VectorXd score(lm1);
    for (int l = 0; l < lm1; ++l) score[l] = st.resid.segment(l * n, n).sum();
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(lm1, lm1);
    for (int i = 0; i < n; ++i) hess += st.W[i];
    Eigen::VectorXd delta = hess.ldlt().solve(score);

    const Eigen::VectorXd base = coefs.intercepts;
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= 20; ++h, step *= 0.5) {
      coefs.intercepts = base + step * delta;
      const double trial = log_likelihood(y, posterior_probs(design, coefs));
      if (std::isfinite(trial) && trial >= ll - 1e-12) {
        ll = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      coefs.intercepts = base;
      return;
    }
    if (step * delta.norm() <= 1e-10 * (1.0 + coefs.intercepts.norm())) return;
  }
}

}  // namespace

double penalty_value(const CoefficientSet& coefs, const PenaltyConfig& config, int n) {
  validate_penalty(config);
  double total = 0.0;
  for (const auto& block : coefs.blocks) {
    const double scale = double(n) * group_scale(int(block.rows()), config.lambda);
    double sub = 0.0;
    for (int l = 0; l < block.cols(); ++l) sub += block.col(l).norm();
    total += scale * ((1.0 - config.alpha) * block.norm() + config.alpha * sub);
  }
  return total;
}

OrthoBlock orthogonalize_block(const std::vector<Eigen::MatrixXd>& w_half,
                               const Eigen::MatrixXd& Z_j, const std::string& group_name) {
  const int n = int(Z_j.rows());
  if (int(w_half.size()) != n) throw input_error("orthogonalize: weight/design size mismatch");
  if (n == 0) throw input_error("orthogonalize: empty design block");
  const int lm1 = int(w_half[0].rows());
  const int m = int(Z_j.cols());
  const int k = m * lm1;
  const std::string label = group_name.empty() ? "<unnamed>" : group_name;
  if (n * lm1 < k)
    throw numerical_error("group '" + label +
                          "': fewer observations than coefficients; reduce the basis size");

  Eigen::MatrixXd A(n * lm1, k);
  for (int l = 0; l < lm1; ++l)
    for (int lp = 0; lp < lm1; ++lp)
      for (int i = 0; i < n; ++i) A.row(lp * n + i).segment(l * m, m) = w_half[i](lp, l) * Z_j.row(i);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  OrthoBlock out;
  out.R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  out.Q = qr.householderQ() * Eigen::MatrixXd::Identity(n * lm1, k);
  for (int c = 0; c < k; ++c) {
    if (out.R(c, c) < 0.0) {
      out.R.row(c) *= -1.0;
      out.Q.col(c) *= -1.0;
    }
  }
  const double dmax = out.R.diagonal().cwiseAbs().maxCoeff();
  if (dmax == 0.0 || out.R.diagonal().cwiseAbs().minCoeff() <= 1e-10 * dmax)
    throw numerical_error("group '" + label +
                          "' is numerically rank-deficient after weighting; increase the "
                          "smoothing ridge or use fewer basis functions");
  return out;
}

bool group_screen(const Eigen::VectorXd& rtilde_j, const PenaltyConfig& config, int n, int dim) {
  validate_penalty(config);
  if (dim <= 0 || rtilde_j.size() % dim != 0) throw input_error("screen: bad sub-block dimension");
  const auto th = thresholds_for(config, n, dim);
  const int nsub = int(rtilde_j.size()) / dim;
  double s2 = 0.0;
  for (int l = 0; l < nsub; ++l) {
    const double survived = std::max(rtilde_j.segment(l * dim, dim).norm() - th.tau_s, 0.0);
    s2 += survived * survived;
  }
  return std::sqrt(s2) <= th.tau_g;
}

Eigen::VectorXd block_solve(const Eigen::VectorXd& rtilde_j, const PenaltyConfig& config, int n,
                            int dim) {
  validate_penalty(config);
  if (dim <= 0 || rtilde_j.size() % dim != 0)
    throw input_error("block solve: bad sub-block dimension");
  const auto th = thresholds_for(config, n, dim);
  const int nsub = int(rtilde_j.size()) / dim;

  // Sub-block soft threshold, then shrink the surviving group as a whole.
  Eigen::VectorXd h = Eigen::VectorXd::Zero(rtilde_j.size());
  for (int l = 0; l < nsub; ++l) {
    const auto seg = rtilde_j.segment(l * dim, dim);
    const double norm = seg.norm();
    if (norm > th.tau_s) h.segment(l * dim, dim) = (1.0 - th.tau_s / norm) * seg;
  }
  const double hnorm = h.norm();
  if (hnorm <= th.tau_g) return Eigen::VectorXd::Zero(rtilde_j.size());
  return (1.0 - th.tau_g / hnorm) * h;
}

SolverReport fit(const DesignMatrix& design, const Eigen::MatrixXd& y, const PenaltyConfig& config,
                 const FitControls& controls, const CoefficientSet* warm) {
  validate_penalty(config);
  const int n = design.n;
  const int lm1 = design.n_classes - 1;
  const int p = design.p();
  if (int(y.rows()) != n || int(y.cols()) != lm1) throw input_error("fit: indicator shape mismatch");
  if (controls.max_outer < 1 || controls.max_inner < 1 || !(controls.tol > 0.0))
    throw input_error("fit: invalid iteration controls");

  // Groups whose design block is identically zero can never absorb signal;
  // they are held at zero rather than fed to the (rank-deficient) QR.
  std::vector<bool> zero_design(p);
  for (int j = 0; j < p; ++j) zero_design[j] = (design.Z[j].norm() == 0.0);

  CoefficientSet coefs = warm ? *warm : CoefficientSet::zero(design);
  if (!warm) intercept_newton(design, y, coefs);

  SolverReport rep;
  IRLSState st;
  std::vector<OrthoBlock> ortho(p);
  std::vector<Eigen::VectorXd> bstar(p);
  Eigen::MatrixXd T0;
  Eigen::VectorXd z;
  // Relative-change denominators are floored at one so the criterion stays
  // meaningful when the solution itself is (numerically) zero, e.g. the
  // all-screened fit on balanced classes.
  const double floor_norm = 1.0;

  for (int outer = 1; outer <= controls.max_outer; ++outer) {
    rep.outer_iterations = outer;
    st = irls_linearize(design, coefs, y);
    const double ll_old = log_likelihood(y, st.probs);

    for (int j = 0; j < p; ++j) {
      if (zero_design[j]) {
        ortho[j] = OrthoBlock{};
        bstar[j] = Eigen::VectorXd();
        continue;
      }
      ortho[j] = orthogonalize_block(st.W_half, design.Z[j], design.group_names[j]);
      bstar[j] = ortho[j].R * coefs.group_vec(j);
    }
    const double f_old = -ll_old + starred_penalty(bstar, config, n, design.dims);

    // Weighted design of the intercept columns: T0[(l', i), l] = W_half_i(l', l).
    T0.resize(n * lm1, lm1);
    for (int l = 0; l < lm1; ++l)
      for (int lp = 0; lp < lm1; ++lp)
        for (int i = 0; i < n; ++i) T0(lp * n + i, l) = st.W_half[i](lp, l);
    z = apply_blockwise(st.W_half, st.eta, n, design.n_classes);

    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(lm1, lm1);
    for (int i = 0; i < n; ++i) hess += st.W[i];

    // Exact minimization of the working quadratic over the (unpenalized)
    // intercepts, holding the blocks at their warm-started values.
    Eigen::VectorXd fitted_blocks = Eigen::VectorXd::Zero(n * lm1);
    for (int j = 0; j < p; ++j)
      if (!zero_design[j]) fitted_blocks += ortho[j].Q * bstar[j];
    Eigen::VectorXd b0 = hess.ldlt().solve(T0.transpose() * (z - fitted_blocks));
    Eigen::VectorXd rho = z - T0 * b0 - fitted_blocks;

    // Cyclic blockwise coordinate descent in the orthogonalized coordinates.
    std::vector<Eigen::VectorXd> bstar_cd = bstar;
    for (int sweep = 1; sweep <= controls.max_inner; ++sweep) {
      ++rep.inner_sweeps;
      double change2 = 0.0, norm2 = 0.0;
      for (int j = 0; j < p; ++j) {
        if (zero_design[j]) continue;
        const Eigen::VectorXd rtilde = ortho[j].Q.transpose() * rho + bstar_cd[j];
        Eigen::VectorXd next = group_screen(rtilde, config, n, design.dims[j])
                                   ? Eigen::VectorXd::Zero(rtilde.size())
                                   : block_solve(rtilde, config, n, design.dims[j]);
        const double moved2 = (next - bstar_cd[j]).squaredNorm();
        change2 += moved2;
        norm2 += next.squaredNorm();
        if (moved2 > 0.0) {
          rho.noalias() += ortho[j].Q * (bstar_cd[j] - next);
          bstar_cd[j] = std::move(next);
        }
      }
      // Incremental residual updates accumulate rounding; refresh periodically.
      if (sweep % 50 == 0) {
        rho = z - T0 * b0;
        for (int j = 0; j < p; ++j)
          if (!zero_design[j]) rho.noalias() -= ortho[j].Q * bstar_cd[j];
      }
      if (std::sqrt(change2) <= controls.tol * std::max(std::sqrt(norm2), floor_norm)) break;
    }

    // Map the candidate back to original coordinates and step-halve against
    // the penalized objective; the penalty is measured in this iteration's
    // orthogonalized coordinates on both sides, where it is linear in the
    // step length.
    std::vector<Eigen::VectorXd> b_old(p), b_cd(p);
    for (int j = 0; j < p; ++j) {
      b_old[j] = coefs.group_vec(j);
      b_cd[j] = zero_design[j] ? b_old[j]
                               : Eigen::VectorXd(ortho[j].R.triangularView<Eigen::Upper>().solve(
                                     bstar_cd[j]));
    }
    const Eigen::VectorXd b0_old = coefs.intercepts;

    CoefficientSet trial = coefs;
    double step = 1.0;
    bool accepted = false;
    double f_acc = f_old;
    for (int h = 0; h <= controls.max_halvings; ++h, step *= 0.5) {
      trial.intercepts = (1.0 - step) * b0_old + step * b0;
      for (int j = 0; j < p; ++j)
        trial.blocks[j] = unflatten((1.0 - step) * b_old[j] + step * b_cd[j], design.dims[j], lm1);
      std::vector<Eigen::VectorXd> bstar_trial(p);
      for (int j = 0; j < p; ++j)
        bstar_trial[j] = zero_design[j]
                             ? Eigen::VectorXd()
                             : Eigen::VectorXd((1.0 - step) * bstar[j] + step * bstar_cd[j]);
      const double ll_trial = log_likelihood(y, posterior_probs(design, trial));
      const double f_trial = -ll_trial + starred_penalty(bstar_trial, config, n, design.dims);
      if (std::isfinite(f_trial) && f_trial <= f_old + 1e-12 * std::max(1.0, std::abs(f_old))) {
        accepted = true;
        f_acc = f_trial;
        coefs = trial;
        for (int j = 0; j < p; ++j) bstar[j] = std::move(bstar_trial[j]);
        break;
      }
    }
    rep.objective_before.push_back(f_old);
    rep.objective_after.push_back(f_acc);

    double change2 = (coefs.intercepts - b0_old).squaredNorm();
    double norm2 = coefs.intercepts.squaredNorm();
    for (int j = 0; j < p; ++j) {
      change2 += (coefs.group_vec(j) - b_old[j]).squaredNorm();
      norm2 += coefs.group_vec(j).squaredNorm();
    }
    if (!accepted || std::sqrt(change2) <= controls.tol * std::max(std::sqrt(norm2), floor_norm)) {
      rep.converged = true;
      break;
    }
  }

  // Final bookkeeping, all in the coordinates of the last working problem:
  // selection flags come from the thresholded solution itself, shrinkage
  // factors from the partial residuals at the accepted coefficients.
  rep.coefficients = coefs;
  rep.starred = bstar;
  rep.active_groups.assign(p, false);
  rep.active_subblocks.assign(p, std::vector<bool>(lm1, false));
  rep.shrinkage = Eigen::MatrixXd::Zero(p, lm1);

  Eigen::VectorXd rho = z - T0 * coefs.intercepts;
  for (int j = 0; j < p; ++j)
    if (!zero_design[j]) rho.noalias() -= ortho[j].Q * bstar[j];

  std::vector<Eigen::VectorXd> rtilde(p);
  for (int j = 0; j < p; ++j) {
    if (zero_design[j]) {
      rtilde[j] = Eigen::VectorXd();
      continue;
    }
    rtilde[j] = ortho[j].Q.transpose() * rho + bstar[j];
    const auto th = thresholds_for(config, n, design.dims[j]);
    const double gnorm = bstar[j].norm();
    for (int l = 0; l < lm1; ++l) {
      const double bl = bstar[j].segment(l * design.dims[j], design.dims[j]).norm();
      if (bl > 0.0) {
        rep.active_subblocks[j][l] = true;
        rep.active_groups[j] = true;
      }
      const double rl = rtilde[j].segment(l * design.dims[j], design.dims[j]).norm();
      if (gnorm > 0.0 && rl > 0.0)
        rep.shrinkage(j, l) = gnorm * std::max(rl - th.tau_s, 0.0) / ((gnorm + th.tau_g) * rl);
    }
  }

  rep.loglik = log_likelihood(y, posterior_probs(design, coefs));
  rep.penalized_objective = -rep.loglik + starred_penalty(bstar, config, n, design.dims);
  if (controls.keep_internals) rep.internals = FitInternals{std::move(st), std::move(ortho), std::move(rtilde)};
  return rep;
}

double lambda_max(const DesignMatrix& design, const Eigen::MatrixXd& y, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw input_error("lambda_max: alpha must lie in [0, 1]");
  const int n = design.n;
  const int lm1 = design.n_classes - 1;
  if (int(y.rows()) != n || int(y.cols()) != lm1)
    throw input_error("lambda_max: indicator shape mismatch");

  CoefficientSet coefs = CoefficientSet::zero(design);
  intercept_newton(design, y, coefs);
  IRLSState st = irls_linearize(design, coefs, y);

  Eigen::VectorXd rho = apply_blockwise(st.W_half, st.eta, n, design.n_classes);
  for (int l = 0; l < lm1; ++l)
    for (int lp = 0; lp < lm1; ++lp)
      for (int i = 0; i < n; ++i) rho[lp * n + i] -= st.W_half[i](lp, l) * coefs.intercepts[l];

  std::vector<int> live;
  std::vector<Eigen::VectorXd> rtilde;
  for (int j = 0; j < design.p(); ++j) {
    if (design.Z[j].norm() == 0.0) continue;
    const OrthoBlock ob = orthogonalize_block(st.W_half, design.Z[j], design.group_names[j]);
    live.push_back(j);
    rtilde.push_back(ob.Q.transpose() * rho);
  }

  const auto screened_everywhere = [&](double lambda) {
    const PenaltyConfig cfg{lambda, alpha};
    for (std::size_t k = 0; k < live.size(); ++k)
      if (!group_screen(rtilde[k], cfg, n, design.dims[live[k]])) return false;
    return true;
  };

  // Each bound below makes its group screen: the first kills the group
  // term outright, the second kills every sub-block before it.
  double hi = 0.0;
  for (std::size_t k = 0; k < live.size(); ++k) {
    const double root = std::sqrt(double(design.dims[live[k]]));
    const int dim = design.dims[live[k]];
    double bound = std::numeric_limits<double>::infinity();
    if (alpha < 1.0) bound = rtilde[k].norm() / (n * (1.0 - alpha) * root);
    if (alpha > 0.0) {
      double worst = 0.0;
      for (int l = 0; l < lm1; ++l)
        worst = std::max(worst, rtilde[k].segment(l * dim, dim).norm());
      bound = std::min(bound, worst / (n * alpha * root));
    }
    hi = std::max(hi, bound);
  }
  if (hi == 0.0) return 0.0;
  for (int guard = 0; guard < 60 && !screened_everywhere(hi); ++guard) hi *= 2.0;

  double lo = 0.0;
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (screened_everywhere(mid) ? hi : lo) = mid;
  }
  return hi;
}

KKTReport kkt_check(const DesignMatrix& design, const Eigen::MatrixXd& y,
                    const SolverReport& report, const PenaltyConfig& config) {
  if (!report.internals)
    throw input_error("kkt_check: fit must be run with keep_internals enabled");
  const int n = design.n;
  const int lm1 = design.n_classes - 1;
  const Eigen::MatrixXd probs = posterior_probs(design, report.coefficients);
  const std::vector<Eigen::MatrixXd> score = score_blocks(design, y, probs);

  KKTReport out;
  for (int j = 0; j < design.p(); ++j) {
    if (report.internals->ortho[j].R.size() == 0) continue;  // zero design block
    const int dim = design.dims[j];
    const auto th = thresholds_for(config, n, dim);
    const Eigen::VectorXd svec =
        Eigen::Map<const Eigen::VectorXd>(score[j].data(), score[j].size());
    const Eigen::VectorXd grad =
        -report.internals->ortho[j].R.transpose().triangularView<Eigen::Lower>().solve(svec);
    const Eigen::VectorXd& bs = report.starred[j];

    if (report.active_groups[j]) {
      const double gnorm = bs.norm();
      for (int l = 0; l < lm1; ++l) {
        const auto gl = grad.segment(l * dim, dim);
        const auto bl = bs.segment(l * dim, dim);
        const double blnorm = bl.norm();
        if (blnorm > 0.0) {
          const Eigen::VectorXd resid = gl + th.tau_g * bl / gnorm + th.tau_s * bl / blnorm;
          out.worst_active = std::max(out.worst_active, resid.norm());
        } else {
          out.worst_subblock = std::max(out.worst_subblock, gl.norm() - th.tau_s);
        }
      }
    } else {
      double s2 = 0.0;
      for (int l = 0; l < lm1; ++l) {
        const double survived = std::max(grad.segment(l * dim, dim).norm() - th.tau_s, 0.0);
        s2 += survived * survived;
      }
      out.worst_group = std::max(out.worst_group, std::sqrt(s2) - th.tau_g);
    }
  }
  return out;
}

}  // namespace fsgl
