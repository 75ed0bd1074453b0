#include "palm/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "palm/geometry.hpp"
#include "palm/losses.hpp"

namespace palm {
namespace {

constexpr double kMinRcond = 1e-15;

Matrix maybe_normalize(const Matrix& h, bool normalize) { return normalize ? normalize_rows(h) : h; }

Eigen::VectorXd best_cosines(const Matrix& z, const PrototypeBank& bank) {
  if (z.rows() == 0) throw Error(ErrorKind::InvalidInput, "no embeddings");
  if (z.cols() != bank.dim()) throw Error(ErrorKind::InvalidInput, "embedding dimension mismatch");
  const Matrix sim = z * bank.prototypes().transpose();
  return sim.rowwise().maxCoeff();
}

}  // namespace

void GaussianFit::factor() {
  const Eigen::Index e = covariance.rows();
  if (covariance.cols() != e || means.cols() != e) throw Error(ErrorKind::InvalidInput, "fit shapes disagree");
  if (!(shrinkage >= 0.0)) throw Error(ErrorKind::InvalidInput, "shrinkage must be >= 0");
  if (!means.allFinite() || !covariance.allFinite()) throw Error(ErrorKind::NumericalError, "non-finite fit");
  Eigen::MatrixXd reg = covariance + shrinkage * Eigen::MatrixXd::Identity(e, e);
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success || !(llt.rcond() > kMinRcond)) {
    throw Error(ErrorKind::SingularCovariance, "Sigma + delta*I is not positive definite");
  }
  llt_ = std::move(llt);
}

const Eigen::LLT<Eigen::MatrixXd>& GaussianFit::cholesky() const {
  if (!llt_) throw Error(ErrorKind::InvalidInput, "fit has not been factored");
  return *llt_;
}

GaussianFit fit_gaussian(const Matrix& features, std::span<const int> labels, std::optional<double> shrinkage,
                         bool normalize_features) {
  const Eigen::Index n = features.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw Error(ErrorKind::InvalidInput, "labels length mismatch");
  if (n == 0) throw Error(ErrorKind::InsufficientData, "no features");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw Error(ErrorKind::InvalidInput, "negative label");

  const Matrix h = maybe_normalize(features, normalize_features);
  GaussianFit fit;
  fit.normalize_features = normalize_features;
  fit.means = Matrix::Zero(classes, h.cols());
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.means.row(labels[static_cast<std::size_t>(i)]) += h.row(i);
    ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 2) {
      throw Error(ErrorKind::InsufficientData, "class " + std::to_string(c) + " has fewer than 2 samples");
    }
    fit.means.row(c) /= counts[static_cast<std::size_t>(c)];
  }
  Matrix centered(n, h.cols());
  for (Eigen::Index i = 0; i < n; ++i) centered.row(i) = h.row(i) - fit.means.row(labels[static_cast<std::size_t>(i)]);
  fit.covariance = centered.transpose() * centered / static_cast<double>(n);
  fit.shrinkage = shrinkage ? *shrinkage : 1e-6 * fit.covariance.trace() / static_cast<double>(h.cols());
  fit.factor();
  return fit;
}

double mahalanobis_score(const GaussianFit& fit, const Vector& h) {
  Matrix row = h.transpose();
  return mahalanobis_scores(fit, row).front();
}

std::vector<double> mahalanobis_scores(const GaussianFit& fit, const Matrix& h_raw) {
  if (h_raw.cols() != fit.means.cols()) throw Error(ErrorKind::InvalidInput, "feature dimension mismatch");
  const Matrix h = maybe_normalize(h_raw, fit.normalize_features);
  const auto& llt = fit.cholesky();
  std::vector<double> out(static_cast<std::size_t>(h.rows()));
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < fit.means.rows(); ++c) {
      const Eigen::VectorXd d = (h.row(i) - fit.means.row(c)).transpose();
      const Eigen::VectorXd y = llt.matrixL().solve(d);
      best = std::min(best, y.squaredNorm());
    }
    out[static_cast<std::size_t>(i)] = -best;
  }
  return out;
}

double knn_score(const Matrix& reference, const Vector& z, int k) {
  Matrix row = z.transpose();
  return knn_scores(reference, row, k).front();
}

std::vector<double> knn_scores(const Matrix& reference, const Matrix& z, int k) {
  if (k < 1 || k > reference.rows()) {
    throw Error(ErrorKind::InvalidInput, "k=" + std::to_string(k) + " outside [1, " + std::to_string(reference.rows()) + "]");
  }
  if (z.cols() != reference.cols()) throw Error(ErrorKind::InvalidInput, "embedding dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  std::vector<double> d2(static_cast<std::size_t>(reference.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < reference.rows(); ++j) d2[static_cast<std::size_t>(j)] = (reference.row(j) - z.row(i)).squaredNorm();
    std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
    out[static_cast<std::size_t>(i)] = -std::sqrt(d2[static_cast<std::size_t>(k - 1)]);
  }
  return out;
}

double posterior_score(const Vector& z, const PrototypeBank& bank, double tau) {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Constant(bank.classes(), bank.per_class(), 1.0 / bank.per_class());
  return class_posterior(z, bank, w, tau).maxCoeff();
}

std::vector<double> posterior_scores(const Matrix& z, const PrototypeBank& bank, double tau) {
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = posterior_score(z.row(i).transpose(), bank, tau);
  return out;
}

double compactness(const Matrix& z, const PrototypeBank& bank) {
  const Eigen::VectorXd best = best_cosines(z, bank);
  double total = 0.0;
  for (Eigen::Index i = 0; i < best.size(); ++i) total += std::acos(std::clamp(best[i], -1.0, 1.0));
  return total / static_cast<double>(best.size()) * 180.0 / std::numbers::pi;
}

double far_id_fraction(const Matrix& z, const PrototypeBank& bank, double threshold) {
  const Eigen::VectorXd best = best_cosines(z, bank);
  return static_cast<double>((best.array() < threshold).count()) / static_cast<double>(best.size());
}

}  // namespace palm
