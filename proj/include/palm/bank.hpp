#pragma once

#include <optional>
#include <span>
#include <vector>

#include "palm/common.hpp"

namespace palm {

struct WeightTable;

/// Gradient route from an EMA-updated prototype back to the batch embeddings that moved it.
///
/// Only prototypes that received nonzero weight mass in the update have an entry;
/// every other prototype is a constant with respect to the batch.
struct EmaPathway {
  struct Entry {
    int prototype = 0;          ///< flat index c*K + k
    std::vector<int> samples;   ///< batch rows contributing to the weighted sum
    std::vector<double> weights;
    Vector blend;               ///< alpha*p_old + (1-alpha)*sum_i w_i z_i, before normalization
    double blend_norm = 0.0;
  };

  double alpha = 0.0;
  Eigen::Index batch_size = 0;
  std::vector<Entry> entries;

  /// Maps dL/dP (C*K x D) to dL/dz (batch_size x D) through normalization and the weighted sum.
  Matrix backward(const Matrix& grad_prototypes) const;
};

/// C classes x K prototypes per class, stored row-wise at index c*K + k.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(int classes, int per_class, Matrix prototypes, double alpha);

  int classes() const noexcept { return classes_; }
  int per_class() const noexcept { return per_class_; }
  Eigen::Index dim() const noexcept { return prototypes_.cols(); }
  double alpha() const noexcept { return alpha_; }

  const Matrix& prototypes() const noexcept { return prototypes_; }
  auto prototype(int c, int k) const { return prototypes_.row(static_cast<Eigen::Index>(c) * per_class_ + k); }
  /// K x D block for class c.
  auto class_block(int c) const {
    return prototypes_.middleRows(static_cast<Eigen::Index>(c) * per_class_, per_class_);
  }

  bool attached() const noexcept { return pathway_.has_value(); }
  const EmaPathway* pathway() const noexcept { return pathway_ ? &*pathway_ : nullptr; }

  void set_alpha(double alpha);

 private:
  friend PrototypeBank detach(const PrototypeBank& bank);
  friend PrototypeBank ema_update(const PrototypeBank& bank, const Matrix& z, std::span<const int> labels,
                                  const WeightTable& table);

  int classes_ = 0;
  int per_class_ = 0;
  Matrix prototypes_;
  double alpha_ = 0.999;
  std::optional<EmaPathway> pathway_;
};

}  // namespace palm
