#pragma once

#include <span>

#include "palm/assignment.hpp"
#include "palm/bank.hpp"

namespace palm {

/// Loss value with gradients.
///
/// `grad_z` is the ambient gradient with respect to the unit embeddings. When the bank is
/// attached it already includes the route through the EMA update; `grad_prototypes` is the
/// gradient with respect to the (current) prototype values and is kept for inspection.
struct LossOutput {
  double value = 0.0;
  Matrix grad_z;
  Matrix grad_prototypes;
  double mle = 0.0;
  double proto_contrast = 0.0;
};

/// Negative log mixture posterior of each sample's own class. Weights come from `table`
/// (post-pruning for the own class, uniform for foreign classes).
LossOutput mle_loss(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                    const WeightTable& table, double tau);

/// Contrasts every prototype against the rest of its class (numerator) and all prototypes of
/// the other classes (denominator). Needs C >= 2 and K >= 2.
/// `grad_z` has one row per sample of the attached batch, or zero rows when detached.
LossOutput proto_contrast_loss(const PrototypeBank& bank, double tau_p);

/// mle + lambda * proto_contrast.
LossOutput palm_loss(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                     const WeightTable& table, double tau, double tau_p, double lambda);

/// p(y = c | z) for every class given per-class mixture weights (`weights` is C x K).
Vector class_posterior(const Vector& z, const PrototypeBank& bank, const Eigen::MatrixXd& weights, double tau);

struct SwappedLossOutput {
  double value = 0.0;
  Matrix grad_z;      ///< includes the EMA route when the bank is attached
  Matrix grad_z_aug;
  Matrix grad_prototypes;
};

/// Swapped-assignment objective over one global prototype pool:
/// mean_i 1/2 [ l(z_i, w_aug_i) + l(z_aug_i, w_i) ] with
/// l(z, w) = -log( sum_k w_k exp(p_k.z / tau) / sum_k exp(p_k.z / tau) ).
/// `weights_from_aug` holds the assignments computed on `z_aug`, `weights_from_z` those on `z`.
/// An attached bank must have been updated from `z`.
SwappedLossOutput unsup_swapped_loss(const Matrix& z, const Matrix& z_aug, const WeightTable& weights_from_aug,
                                     const WeightTable& weights_from_z, const PrototypeBank& bank, double tau);

}  // namespace palm
