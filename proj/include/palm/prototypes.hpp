#pragma once

#include <span>

#include "palm/assignment.hpp"
#include "palm/bank.hpp"

namespace palm {

/// C*K i.i.d. uniform points on the sphere.
PrototypeBank init_uniform(int classes, int per_class, int dim, double alpha, Rng& rng);

/// p_k^c <- Normalize(alpha p_k^c + (1 - alpha) sum_i 1(y_i = c) w_{i,k}^c z_i).
///
/// Prototypes with no weight mass in the batch (including every prototype of an absent
/// class) keep their exact value. The result is attached: its pathway records how each
/// moved prototype depends on the batch rows.
PrototypeBank ema_update(const PrototypeBank& bank, const Matrix& z, std::span<const int> labels,
                         const WeightTable& table);

/// Same values, no gradient pathway.
PrototypeBank detach(const PrototypeBank& bank);

}  // namespace palm
