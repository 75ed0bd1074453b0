#include "palm/prototypes.hpp"

#include <string>

#include "palm/geometry.hpp"

namespace palm {

PrototypeBank::PrototypeBank(int classes, int per_class, Matrix prototypes, double alpha)
    : classes_(classes), per_class_(per_class), prototypes_(std::move(prototypes)) {
  if (classes < 1 || per_class < 1) throw Error(ErrorKind::InvalidInput, "bank needs C, K >= 1");
  if (prototypes_.rows() != static_cast<Eigen::Index>(classes) * per_class) {
    throw Error(ErrorKind::InvalidInput, "prototype matrix must have C*K rows");
  }
  set_alpha(alpha);
}

void PrototypeBank::set_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidInput, "alpha must be in [0, 1]");
  alpha_ = alpha;
}

Matrix EmaPathway::backward(const Matrix& grad_prototypes) const {
  Matrix grad_z = Matrix::Zero(batch_size, grad_prototypes.cols());
  for (const auto& e : entries) {
    const Vector p = e.blend / e.blend_norm;
    const Vector g = grad_prototypes.row(e.prototype).transpose();
    // Jacobian of Normalize at the blend, then the (1 - alpha) factor of the weighted sum.
    const Vector g_sum = (1.0 - alpha) * (g - p * p.dot(g)) / e.blend_norm;
    for (std::size_t j = 0; j < e.samples.size(); ++j) {
      grad_z.row(e.samples[j]) += e.weights[j] * g_sum.transpose();
    }
  }
  return grad_z;
}

PrototypeBank init_uniform(int classes, int per_class, int dim, double alpha, Rng& rng) {
  if (classes < 1 || per_class < 1 || dim < 2) throw Error(ErrorKind::InvalidInput, "init_uniform needs C, K >= 1 and D >= 2");
  Matrix p(static_cast<Eigen::Index>(classes) * per_class, dim);
  for (Eigen::Index r = 0; r < p.rows(); ++r) p.row(r) = sample_uniform_sphere(dim, rng).transpose();
  return PrototypeBank(classes, per_class, std::move(p), alpha);
}

PrototypeBank ema_update(const PrototypeBank& bank, const Matrix& z, std::span<const int> labels,
                         const WeightTable& table) {
  if (bank.attached()) throw Error(ErrorKind::InvalidInput, "ema_update needs a detached bank");
  if (static_cast<Eigen::Index>(labels.size()) != z.rows() || table.weights.rows() != z.rows()) {
    throw Error(ErrorKind::InvalidInput, "batch, labels and weight table differ in length");
  }
  if (table.classes != bank.classes() || table.per_class != bank.per_class()) {
    throw Error(ErrorKind::InvalidInput, "weight table shape does not match bank");
  }
  if (z.cols() != bank.dim()) throw Error(ErrorKind::InvalidInput, "embedding dimension mismatch");

  PrototypeBank out = bank;
  EmaPathway pathway;
  pathway.alpha = bank.alpha();
  pathway.batch_size = z.rows();

  if (bank.alpha() < 1.0) {
    const int kk = bank.per_class();
    for (int c = 0; c < bank.classes(); ++c) {
      for (int k = 0; k < kk; ++k) {
        EmaPathway::Entry e;
        e.prototype = c * kk + k;
        Vector sum = Vector::Zero(z.cols());
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          if (labels[static_cast<std::size_t>(i)] != c) continue;
          const double w = table.row(i, c)[k];
          if (w == 0.0) continue;
          e.samples.push_back(static_cast<int>(i));
          e.weights.push_back(w);
          sum += w * z.row(i).transpose();
        }
        if (e.samples.empty()) continue;
        e.blend = bank.alpha() * bank.prototypes().row(e.prototype).transpose() + (1.0 - bank.alpha()) * sum;
        e.blend_norm = e.blend.norm();
        if (!(e.blend_norm >= kMinNorm)) {
          throw Error(ErrorKind::DegeneratePrototype,
                      "blend for prototype " + std::to_string(e.prototype) + " has norm below 1e-12");
        }
        out.prototypes_.row(e.prototype) = (e.blend / e.blend_norm).transpose();
        pathway.entries.push_back(std::move(e));
      }
    }
  }
  out.pathway_ = std::move(pathway);
  return out;
}

PrototypeBank detach(const PrototypeBank& bank) {
  PrototypeBank out = bank;
  out.pathway_.reset();
  return out;
}

}  // namespace palm
