#pragma once

#include <optional>
#include <span>
#include <vector>

#include "palm/bank.hpp"

namespace palm {

/// Class means with one covariance shared across classes. Scores use Sigma + shrinkage*I.
struct GaussianFit {
  Matrix means;                ///< C x E
  Eigen::MatrixXd covariance;  ///< pooled class-centered scatter / N, unregularized
  double shrinkage = 0.0;
  bool normalize_features = false;

  /// Validates and factors Sigma + shrinkage*I; throws SingularCovariance if it is not positive definite.
  void factor();
  const Eigen::LLT<Eigen::MatrixXd>& cholesky() const;

 private:
  std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_;
};

/// `shrinkage` defaults to 1e-6 * trace(Sigma) / E. Needs >= 2 samples in every class 0..max(label).
GaussianFit fit_gaussian(const Matrix& features, std::span<const int> labels,
                         std::optional<double> shrinkage = std::nullopt, bool normalize_features = false);

/// -min_c (h - mu_c)^T (Sigma + delta I)^{-1} (h - mu_c). Larger is more ID-like.
double mahalanobis_score(const GaussianFit& fit, const Vector& h);
std::vector<double> mahalanobis_scores(const GaussianFit& fit, const Matrix& h);

/// -(Euclidean distance from z to its k-th nearest reference row).
double knn_score(const Matrix& reference, const Vector& z, int k);
std::vector<double> knn_scores(const Matrix& reference, const Matrix& z, int k);

/// max_c p(y = c | z) with uniform 1/K mixture weights.
double posterior_score(const Vector& z, const PrototypeBank& bank, double tau);
std::vector<double> posterior_scores(const Matrix& z, const PrototypeBank& bank, double tau);

/// Mean angle in degrees between each embedding and its most similar prototype (any class).
double compactness(const Matrix& z, const PrototypeBank& bank);

/// Fraction of embeddings whose best prototype cosine is below `threshold`.
double far_id_fraction(const Matrix& z, const PrototypeBank& bank, double threshold = 0.8);

}  // namespace palm
