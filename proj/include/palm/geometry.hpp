#pragma once

#include <cstdint>
#include <limits>

#include "palm/common.hpp"

namespace palm {

/// Norms at or below this are treated as zero by every normalizing operation.
inline constexpr double kMinNorm = 1e-12;

/// A point on the unit sphere. Only obtainable through `normalize` or a checked wrap.
class UnitVector {
 public:
  /// Wraps `v` if it is already unit-norm (within 1e-9) and finite.
  static UnitVector checked(Vector v);

  const Vector& vec() const noexcept { return v_; }
  Eigen::Index dim() const noexcept { return v_.size(); }
  double operator[](Eigen::Index i) const { return v_[i]; }

 private:
  explicit UnitVector(Vector v) : v_(std::move(v)) {}
  friend UnitVector normalize(const Vector& x);

  Vector v_;
};

UnitVector normalize(const Vector& x);

/// d normalize(x) / dx = (I - u u^T) / |x| with u = x / |x|.
Eigen::MatrixXd normalize_jacobian(const Vector& x);

/// Row-wise normalization; throws DegenerateVector naming the offending row.
Matrix normalize_rows(const Matrix& x);

struct VmfParams {
  UnitVector mu;
  double kappa = 0.0;  ///< 0 is the uniform distribution; +inf is a point mass at mu.
};

Vector sample_uniform_sphere(Eigen::Index dim, Rng& rng);

/// n i.i.d. vMF draws, one per row. Wood's rejection sampler for the cosine to mu.
Matrix sample_vmf(const VmfParams& params, Eigen::Index n, Rng& rng);

struct SyntheticSpec {
  int dim = 16;
  int classes = 4;
  int modes_per_class = 2;
  double kappa_id = 50.0;
  double kappa_ood = 50.0;
  int ood_directions = 4;
  double min_angular_sep = 1.0471975511965976;  // pi/3
  int train_per_class = 300;
  int test_per_class = 100;
  int ood_test = 400;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  EmbeddingBatch id_train;
  EmbeddingBatch id_test;
  EmbeddingBatch ood_test;  ///< unlabeled
  Matrix mode_directions;   ///< classes * modes_per_class rows, class-major
  Matrix ood_direction_set;
};

/// Draws well-separated mode and OOD directions, then samples each split.
SyntheticDataset gen_synthetic(const SyntheticSpec& spec);

}  // namespace palm
