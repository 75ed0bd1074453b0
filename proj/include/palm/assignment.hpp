#pragma once

#include <span>

#include "palm/bank.hpp"

namespace palm {

/// K x B_c transport plan between one class's prototypes and its batch members.
struct AssignmentMatrix {
  Eigen::MatrixXd weights;
  int class_id = 0;
  bool converged = false;
  int iterations_used = 0;
  double residual = 0.0;  ///< max absolute deviation of any row or column sum from its target
};

struct SinkhornOptions {
  double epsilon = 0.05;
  int iterations = 3;  ///< 0 = iterate until the marginal residual drops below 1e-9
};

enum class AssignmentMode { Soft, Hard };

/// Per-sample, per-class weights w_i^c, stored as a B x (C*K) matrix. Always stop-gradient.
struct WeightTable {
  Matrix weights;
  int classes = 0;
  int per_class = 0;

  auto row(Eigen::Index i, int c) const {
    return weights.row(i).segment(static_cast<Eigen::Index>(c) * per_class, per_class);
  }
  auto row(Eigen::Index i, int c) {
    return weights.row(i).segment(static_cast<Eigen::Index>(c) * per_class, per_class);
  }
};

/// Sinkhorn-Knopp on exp(P Z^T / epsilon) with row targets 1/K and column targets 1/B.
/// `prototypes` is K x D, `embeddings` is B x D.
AssignmentMatrix sinkhorn_assign(const Matrix& prototypes, const Matrix& embeddings,
                                 const SinkhornOptions& options, int class_id = 0);

/// Keeps the k_top largest entries of every column; ties go to the lower prototype index.
AssignmentMatrix prune_topk(const AssignmentMatrix& matrix, int k_top);

/// One-hot columns at the most similar prototype; ties go to the lower index.
AssignmentMatrix hard_assign(const Matrix& prototypes, const Matrix& embeddings, int class_id = 0);

struct AssignmentOptions {
  SinkhornOptions sinkhorn;
  int k_top = 5;
  AssignmentMode mode = AssignmentMode::Soft;
};

/// Groups the batch by label and assigns each nonempty class against its own prototypes.
/// Rows for foreign classes are filled with 1/K.
WeightTable build_weight_table(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                               const AssignmentOptions& options);

/// Label-free variant over a single pool of prototypes (bank with one class).
/// Columns are rescaled by B so every sample's weights sum to 1 before pruning.
WeightTable build_global_weight_table(const Matrix& z, const PrototypeBank& bank,
                                      const AssignmentOptions& options);

}  // namespace palm
