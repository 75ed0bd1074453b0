#include "palm/geometry.hpp"

#include <cmath>
#include <string>

namespace palm {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateVector: return "DegenerateVector";
    case ErrorKind::DegeneratePrototype: return "DegeneratePrototype";
    case ErrorKind::SpecInfeasible: return "SpecInfeasible";
    case ErrorKind::NumericalError: return "NumericalError";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidConfiguration: return "InvalidConfiguration";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::DegenerateRange: return "DegenerateRange";
    case ErrorKind::InternalError: return "InternalError";
  }
  return "Unknown";
}

UnitVector UnitVector::checked(Vector v) {
  if (!v.allFinite()) throw Error(ErrorKind::InvalidInput, "non-finite unit vector component");
  if (std::abs(v.norm() - 1.0) > 1e-9) throw Error(ErrorKind::InvalidInput, "vector is not unit-norm");
  return UnitVector(std::move(v));
}

UnitVector normalize(const Vector& x) {
  const double n = x.norm();
  if (!(n > kMinNorm)) throw Error(ErrorKind::DegenerateVector, "norm below 1e-12");
  return UnitVector(x / n);
}

Eigen::MatrixXd normalize_jacobian(const Vector& x) {
  const double n = x.norm();
  if (!(n > kMinNorm)) throw Error(ErrorKind::DegenerateVector, "norm below 1e-12");
  const Vector u = x / n;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(x.size(), x.size()) - u * u.transpose();
  return jac / n;
}

Matrix normalize_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (!(n > kMinNorm)) {
      throw Error(ErrorKind::DegenerateVector, "row " + std::to_string(i) + " has norm below 1e-12");
    }
    out.row(i) = x.row(i) / n;
  }
  return out;
}

Vector sample_uniform_sphere(Eigen::Index dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    Vector g(dim);
    for (Eigen::Index j = 0; j < dim; ++j) g[j] = gauss(rng);
    const double n = g.norm();
    if (n > kMinNorm) return g / n;
  }
}

namespace {

// Cosine to the mean direction, drawn with Wood (1994).
double sample_vmf_cosine(double kappa, double dim, Rng& rng) {
  const double m1 = dim - 1.0;
  // b = (-2k + sqrt(4k^2 + m1^2)) / m1, rewritten to avoid cancellation at large kappa.
  const double b = m1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + m1 * std::log(1.0 - x0 * x0);

  std::gamma_distribution<double> gamma(m1 / 2.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (;;) {
    const double g1 = gamma(rng);
    const double g2 = gamma(rng);
    const double z = g1 / (g1 + g2);
    const double w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = unif(rng);
    if (kappa * w + m1 * std::log(1.0 - x0 * w) - c >= std::log(u)) return w;
  }
}

}  // namespace

Matrix sample_vmf(const VmfParams& params, Eigen::Index n, Rng& rng) {
  if (n < 1) throw Error(ErrorKind::InvalidInput, "sample_vmf needs n >= 1");
  if (!(params.kappa >= 0.0)) throw Error(ErrorKind::InvalidInput, "kappa must be >= 0");
  const Eigen::Index dim = params.mu.dim();
  if (dim < 2) throw Error(ErrorKind::InvalidInput, "dimension must be >= 2");
  const Vector& mu = params.mu.vec();

  Matrix out(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isinf(params.kappa)) {
      out.row(i) = mu.transpose();
      continue;
    }
    if (params.kappa == 0.0) {
      out.row(i) = sample_uniform_sphere(dim, rng).transpose();
      continue;
    }
    const double w = sample_vmf_cosine(params.kappa, static_cast<double>(dim), rng);
    Vector tangent;
    for (;;) {
      Vector g = sample_uniform_sphere(dim, rng);
      g -= g.dot(mu) * mu;
      const double gn = g.norm();
      if (gn > 1e-8) {
        tangent = g / gn;
        break;
      }
    }
    Vector x = w * mu + std::sqrt(std::max(0.0, 1.0 - w * w)) * tangent;
    out.row(i) = (x / x.norm()).transpose();
  }
  return out;
}

namespace {

constexpr int kMaxDirectionRejections = 10000;

// Appends `count` directions to `accepted`, each at least `min_sep` radians from every other.
void draw_separated(Matrix& accepted, Eigen::Index& filled, int count, double min_sep, Rng& rng,
                    int& rejections) {
  const double max_cos = std::cos(min_sep);
  for (int added = 0; added < count;) {
    const Vector cand = sample_uniform_sphere(accepted.cols(), rng);
    bool ok = true;
    for (Eigen::Index j = 0; j < filled && ok; ++j) ok = accepted.row(j).dot(cand) <= max_cos;
    if (!ok) {
      if (++rejections > kMaxDirectionRejections) {
        throw Error(ErrorKind::SpecInfeasible,
                    "could not place separated directions after 10000 rejections");
      }
      continue;
    }
    accepted.row(filled++) = cand.transpose();
    ++added;
  }
}

EmbeddingBatch draw_mixture(const Matrix& directions, Eigen::Index first, int count_dirs, double kappa,
                            int n, int label, Rng& rng) {
  EmbeddingBatch out;
  out.values.resize(n, directions.cols());
  std::uniform_int_distribution<int> pick(0, count_dirs - 1);
  for (int i = 0; i < n; ++i) {
    const Eigen::Index d = first + pick(rng);
    const VmfParams params{UnitVector::checked(directions.row(d).transpose()), kappa};
    out.values.row(i) = sample_vmf(params, 1, rng).row(0);
  }
  if (label >= 0) out.labels.assign(static_cast<std::size_t>(n), label);
  return out;
}

EmbeddingBatch concat(std::vector<EmbeddingBatch> parts, Eigen::Index dim) {
  EmbeddingBatch out;
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.size();
  out.values.resize(rows, dim);
  Eigen::Index at = 0;
  for (auto& p : parts) {
    out.values.middleRows(at, p.size()) = p.values;
    at += p.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace

SyntheticDataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.dim < 2 || spec.classes < 1 || spec.modes_per_class < 1 || spec.ood_directions < 0 ||
      spec.train_per_class < 0 || spec.test_per_class < 0 || spec.ood_test < 0 ||
      !(spec.kappa_id >= 0.0) || !(spec.kappa_ood >= 0.0) || !(spec.min_angular_sep >= 0.0)) {
    throw Error(ErrorKind::InvalidInput, "invalid synthetic spec");
  }
  if (spec.ood_test > 0 && spec.ood_directions == 0) {
    throw Error(ErrorKind::InvalidInput, "ood_test > 0 requires ood_directions > 0");
  }

  Rng rng = derive_rng(spec.seed, {0x5157});
  const int n_modes = spec.classes * spec.modes_per_class;
  Matrix all_dirs(n_modes + spec.ood_directions, spec.dim);
  Eigen::Index filled = 0;
  int rejections = 0;
  draw_separated(all_dirs, filled, n_modes, spec.min_angular_sep, rng, rejections);
  draw_separated(all_dirs, filled, spec.ood_directions, spec.min_angular_sep, rng, rejections);

  SyntheticDataset ds;
  ds.mode_directions = all_dirs.topRows(n_modes);
  ds.ood_direction_set = all_dirs.bottomRows(spec.ood_directions);

  std::vector<EmbeddingBatch> train, test;
  for (int c = 0; c < spec.classes; ++c) {
    const Eigen::Index first = static_cast<Eigen::Index>(c) * spec.modes_per_class;
    train.push_back(draw_mixture(all_dirs, first, spec.modes_per_class, spec.kappa_id,
                                 spec.train_per_class, c, rng));
  }
  for (int c = 0; c < spec.classes; ++c) {
    const Eigen::Index first = static_cast<Eigen::Index>(c) * spec.modes_per_class;
    test.push_back(draw_mixture(all_dirs, first, spec.modes_per_class, spec.kappa_id,
                                spec.test_per_class, c, rng));
  }
  ds.id_train = concat(std::move(train), spec.dim);
  ds.id_test = concat(std::move(test), spec.dim);
  if (spec.ood_test > 0) {
    ds.ood_test = draw_mixture(all_dirs, n_modes, spec.ood_directions, spec.kappa_ood,
                               spec.ood_test, -1, rng);
  } else {
    ds.ood_test.values.resize(0, spec.dim);
  }
  return ds;
}

}  // namespace palm
