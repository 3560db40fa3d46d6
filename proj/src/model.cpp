#include "fsgl/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>

#include "fsgl/errors.hpp"

namespace fsgl {

namespace {
constexpr double kProbFloor = 1e-5;
}

void FunctionalDataset::validate() const {
  if (n_classes < 2) throw input_error("need at least two classes");
  if (labels.empty()) throw input_error("dataset has no samples");
  if (groups.empty()) throw input_error("dataset has no predictor groups");
  if (reference_class < 1 || reference_class > n_classes)
    throw input_error("reference class out of range");
  std::set<int> seen;
  for (int lab : labels) {
    if (lab < 1 || lab > n_classes) throw input_error("class label out of range");
    seen.insert(lab);
  }
  if (static_cast<int>(seen.size()) < n_classes)
    throw input_error("every class must appear in the data at least once");
  if (!class_names.empty() && static_cast<int>(class_names.size()) != n_classes)
    throw input_error("class_names size must match the number of classes");
  for (const auto& g : groups) {
    if (g.values.rows() != n())
      throw input_error("group '" + g.name + "': row count does not match sample count");
    if (g.values.cols() < 1) throw input_error("group '" + g.name + "': empty block");
    if (g.functional) {
      if (!g.basis) throw input_error("group '" + g.name + "': functional group without basis");
      if (g.basis->size() != g.dim())
        throw input_error("group '" + g.name + "': coefficient count does not match basis size");
    }
  }
}

int DesignMatrix::total_dim() const {
  int acc = 0;
  for (int d : dims) acc += d;
  return acc;
}

CoefficientSet CoefficientSet::zero(const DesignMatrix& design) {
  CoefficientSet out;
  out.intercepts = Eigen::VectorXd::Zero(design.n_classes - 1);
  out.blocks.reserve(design.dims.size());
  for (int d : design.dims)
    out.blocks.emplace_back(Eigen::MatrixXd::Zero(d, design.n_classes - 1));
  return out;
}

Eigen::VectorXd CoefficientSet::group_vec(int j) const {
  return Eigen::Map<const Eigen::VectorXd>(blocks[j].data(), blocks[j].size());
}

int rotated_label(int c, int n_classes, int reference) {
  if (c == reference) return n_classes;
  return c > reference ? c - 1 : c;
}

Eigen::MatrixXd encode_labels(const std::vector<int>& labels, int n_classes, int reference) {
  if (n_classes < 2) throw input_error("need at least two classes");
  if (reference < 1 || reference > n_classes) throw input_error("reference class out of range");
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(labels.size(), n_classes - 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > n_classes) throw input_error("class label out of range");
    const int rot = rotated_label(labels[i], n_classes, reference);
    if (rot < n_classes) y(i, rot - 1) = 1.0;
  }
  return y;
}

DesignMatrix build_design(const FunctionalDataset& dataset) {
  dataset.validate();
  DesignMatrix design;
  design.n = dataset.n();
  design.n_classes = dataset.n_classes;
  for (const auto& g : dataset.groups) {
    design.group_names.push_back(g.name);
    design.dims.push_back(g.dim());
    if (g.functional) {
      design.Z.push_back(g.values * g.basis->gram_matrix());
    } else {
      design.Z.push_back(g.values);
    }
  }
  return design;
}

namespace {

Eigen::MatrixXd linear_predictor(const DesignMatrix& design, const CoefficientSet& coefs) {
  Eigen::MatrixXd u = Eigen::VectorXd::Ones(design.n) * coefs.intercepts.transpose();
  for (int j = 0; j < design.p(); ++j) u += design.Z[j] * coefs.blocks[j];
  return u;
}

}  // namespace

Eigen::VectorXd linear_predictor_vec(const DesignMatrix& design, const CoefficientSet& coefs) {
  const Eigen::MatrixXd u = linear_predictor(design, coefs);
  return Eigen::Map<const Eigen::VectorXd>(u.data(), u.size());
}

Eigen::MatrixXd posterior_probs(const DesignMatrix& design, const CoefficientSet& coefs) {
  const int n = design.n, lm1 = design.n_classes - 1;
  const Eigen::MatrixXd u = linear_predictor(design, coefs);
  Eigen::MatrixXd probs(n, design.n_classes);
  for (int i = 0; i < n; ++i) {
    // Reference class has implicit linear predictor 0; shift by the max so
    // no exponential overflows.
    const double m = std::max(0.0, u.row(i).maxCoeff());
    double denom = std::exp(-m);
    for (int l = 0; l < lm1; ++l) denom += std::exp(u(i, l) - m);
    for (int l = 0; l < lm1; ++l) probs(i, l) = std::exp(u(i, l) - m) / denom;
    probs(i, lm1) = std::exp(-m) / denom;
  }
  return probs;
}

double log_likelihood(const Eigen::MatrixXd& y, const Eigen::MatrixXd& probs) {
  if (y.rows() != probs.rows() || y.cols() != probs.cols() - 1)
    throw input_error("log_likelihood: shape mismatch between indicators and probabilities");
  const int n = static_cast<int>(y.rows()), lm1 = static_cast<int>(y.cols());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double picked = probs(i, lm1);  // reference unless an indicator is set
    for (int l = 0; l < lm1; ++l)
      if (y(i, l) != 0.0) picked = probs(i, l);
    acc += std::log(std::max(picked, 1e-300));
  }
  return acc;
}

std::vector<Eigen::MatrixXd> score_blocks(const DesignMatrix& design, const Eigen::MatrixXd& y,
                                          const Eigen::MatrixXd& probs,
                                          Eigen::VectorXd* intercept_score) {
  const int lm1 = design.n_classes - 1;
  const Eigen::MatrixXd resid = y - probs.leftCols(lm1);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(design.p());
  for (int j = 0; j < design.p(); ++j) out.push_back(design.Z[j].transpose() * resid);
  if (intercept_score) *intercept_score = resid.colwise().sum();
  return out;
}

Eigen::VectorXd apply_blockwise(const std::vector<Eigen::MatrixXd>& blocks,
                                const Eigen::VectorXd& v, int n, int n_classes) {
  const int lm1 = n_classes - 1;
  Eigen::VectorXd out(v.size());
  Eigen::VectorXd buf(lm1), res(lm1);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < lm1; ++l) buf[l] = v[l * n + i];
    res.noalias() = blocks[i] * buf;
    for (int l = 0; l < lm1; ++l) out[l * n + i] = res[l];
  }
  return out;
}

IRLSState irls_linearize(const DesignMatrix& design, const CoefficientSet& coefs,
                         const Eigen::MatrixXd& y) {
  const int n = design.n, lm1 = design.n_classes - 1;
  IRLSState st;
  st.probs = posterior_probs(design, coefs);

  // Clamp all L probabilities away from 0/1 and renormalize each row; this
  // keeps every per-observation covariance block positive definite (a bare
  // clamp can push the non-reference probabilities to a sum above one).
  st.probs_floored = st.probs;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < design.n_classes; ++c)
      st.probs_floored(i, c) = std::clamp(st.probs_floored(i, c), kProbFloor, 1.0 - kProbFloor);
    st.probs_floored.row(i) /= st.probs_floored.row(i).sum();
  }

  st.W.resize(n);
  st.W_half.resize(n);
  std::vector<Eigen::MatrixXd> w_pinv(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd pi = st.probs_floored.row(i).head(lm1).transpose();
    st.W[i] = Eigen::MatrixXd(pi.asDiagonal()) - pi * pi.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(st.W[i]);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    const double cutoff = 1e-12 * std::max(ev.maxCoeff(), 1e-300);
    Eigen::VectorXd sqrt_ev(lm1), inv_ev(lm1);
    for (int l = 0; l < lm1; ++l) {
      sqrt_ev[l] = std::sqrt(ev[l]);
      inv_ev[l] = ev[l] > cutoff ? 1.0 / ev[l] : 0.0;
    }
    st.W_half[i] = es.eigenvectors() * sqrt_ev.asDiagonal() * es.eigenvectors().transpose();
    w_pinv[i] = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  }

  // Residual from the exact probabilities: the gradient of the working
  // quadratic at the expansion point is then the exact score even when the
  // floor was active on some observation.
  const Eigen::MatrixXd resid_mat = y - st.probs.leftCols(lm1);
  st.resid = Eigen::Map<const Eigen::VectorXd>(resid_mat.data(), resid_mat.size());

  st.eta = linear_predictor_vec(design, coefs) +
           apply_blockwise(w_pinv, st.resid, n, design.n_classes);
  return st;
}

}  // namespace fsgl
