#include "palm/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace palm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log sum_j w_j exp(a_j) over entries with w_j > 0, plus the responsibilities w_j exp(a_j - lse).
struct WeightedLse {
  double lse = kNegInf;
  Eigen::RowVectorXd resp;
};

WeightedLse weighted_lse(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& w) {
  WeightedLse out;
  out.resp = Eigen::RowVectorXd::Zero(a.size());
  double m = kNegInf;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (w[j] > 0.0 && a[j] > m) m = a[j];
  }
  if (m == kNegInf) return out;
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (w[j] > 0.0) s += w[j] * std::exp(a[j] - m);
  }
  out.lse = m + std::log(s);
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (w[j] > 0.0) out.resp[j] = w[j] * std::exp(a[j] - out.lse);
  }
  return out;
}

void check_tau(double tau, const char* name) {
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidInput, std::string(name) + " must be > 0");
}

// Direct MLE terms: value, dL/dz without the EMA route, dL/dP.
LossOutput mle_direct(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                      const WeightTable& table, double tau) {
  check_tau(tau, "tau");
  const Eigen::Index n = z.rows();
  if (n == 0) throw Error(ErrorKind::InvalidInput, "empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n || table.weights.rows() != n) {
    throw Error(ErrorKind::InvalidInput, "batch, labels and weight table differ in length");
  }
  const Matrix& p = bank.prototypes();
  const int kk = bank.per_class();
  const Matrix logits = z * p.transpose() / tau;
  Matrix g = Matrix::Zero(n, p.rows());

  LossOutput out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= bank.classes()) throw Error(ErrorKind::InvalidInput, "label out of range");
    const Eigen::RowVectorXd a = logits.row(i);
    const Eigen::RowVectorXd w = table.weights.row(i);
    const WeightedLse den = weighted_lse(a, w);
    const WeightedLse num = weighted_lse(a.segment(static_cast<Eigen::Index>(y) * kk, kk),
                                         w.segment(static_cast<Eigen::Index>(y) * kk, kk));
    if (num.lse == kNegInf || !std::isfinite(num.lse) || !std::isfinite(den.lse)) {
      throw Error(ErrorKind::NumericalError, "MLE numerator vanished for sample " + std::to_string(i));
    }
    out.value += den.lse - num.lse;
    g.row(i) = den.resp;
    g.row(i).segment(static_cast<Eigen::Index>(y) * kk, kk) -= num.resp;
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.value *= inv;
  out.mle = out.value;
  g *= inv / tau;
  out.grad_z = g * p;
  out.grad_prototypes = g.transpose() * z;
  return out;
}

LossOutput proto_direct(const PrototypeBank& bank, double tau_p) {
  check_tau(tau_p, "tau_p");
  const int cc = bank.classes();
  const int kk = bank.per_class();
  if (cc < 2 || kk < 2) {
    throw Error(ErrorKind::InvalidConfiguration, "prototype contrast needs C >= 2 and K >= 2");
  }
  const Matrix& p = bank.prototypes();
  const Eigen::Index m = p.rows();
  const Matrix s = p * p.transpose() / tau_p;
  Matrix g = Matrix::Zero(m, m);

  LossOutput out;
  Eigen::RowVectorXd num_mask(m), den_mask(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const Eigen::Index c = a / kk;
    for (Eigen::Index b = 0; b < m; ++b) {
      const bool same = b / kk == c;
      num_mask[b] = same && b != a ? 1.0 : 0.0;
      den_mask[b] = same ? 0.0 : 1.0;
    }
    const WeightedLse num = weighted_lse(s.row(a), num_mask);
    const WeightedLse den = weighted_lse(s.row(a), den_mask);
    out.value += den.lse - num.lse;
    g.row(a) = den.resp - num.resp;
  }
  const double inv = 1.0 / static_cast<double>(m);
  out.value *= inv;
  out.proto_contrast = out.value;
  g *= inv / tau_p;
  out.grad_prototypes = (g + g.transpose()) * p;
  return out;
}

Matrix through_pathway(const PrototypeBank& bank, const Matrix& grad_prototypes, Eigen::Index rows,
                       Eigen::Index cols) {
  if (const EmaPathway* path = bank.pathway()) {
    if (path->batch_size != rows) throw Error(ErrorKind::InvalidInput, "bank was updated from a different batch");
    return path->backward(grad_prototypes);
  }
  return Matrix::Zero(rows, cols);
}

}  // namespace

LossOutput mle_loss(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                    const WeightTable& table, double tau) {
  LossOutput out = mle_direct(z, labels, bank, table, tau);
  out.grad_z += through_pathway(bank, out.grad_prototypes, z.rows(), z.cols());
  return out;
}

LossOutput proto_contrast_loss(const PrototypeBank& bank, double tau_p) {
  LossOutput out = proto_direct(bank, tau_p);
  const Eigen::Index rows = bank.pathway() ? bank.pathway()->batch_size : 0;
  out.grad_z = through_pathway(bank, out.grad_prototypes, rows, bank.dim());
  return out;
}

LossOutput palm_loss(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                     const WeightTable& table, double tau, double tau_p, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidInput, "lambda must be >= 0");
  LossOutput out = mle_direct(z, labels, bank, table, tau);
  if (lambda > 0.0) {
    const LossOutput pc = proto_direct(bank, tau_p);
    out.proto_contrast = pc.value;
    out.value += lambda * pc.value;
    out.grad_prototypes += lambda * pc.grad_prototypes;
  }
  out.grad_z += through_pathway(bank, out.grad_prototypes, z.rows(), z.cols());
  return out;
}

Vector class_posterior(const Vector& z, const PrototypeBank& bank, const Eigen::MatrixXd& weights, double tau) {
  check_tau(tau, "tau");
  const int cc = bank.classes();
  const int kk = bank.per_class();
  if (weights.rows() != cc || weights.cols() != kk) throw Error(ErrorKind::InvalidInput, "weights must be C x K");
  if ((weights.array() < 0.0).any()) throw Error(ErrorKind::InvalidInput, "weights must be nonnegative");
  const Eigen::RowVectorXd a = (bank.prototypes() * z).transpose() / tau;
  const Eigen::RowVectorXd w = weights.transpose().reshaped().transpose();
  const WeightedLse den = weighted_lse(a, w);
  if (den.lse == kNegInf) throw Error(ErrorKind::NumericalError, "all posterior weights are zero");
  Vector post(cc);
  for (int c = 0; c < cc; ++c) post[c] = den.resp.segment(static_cast<Eigen::Index>(c) * kk, kk).sum();
  return post;
}

SwappedLossOutput unsup_swapped_loss(const Matrix& z, const Matrix& z_aug, const WeightTable& weights_from_aug,
                                     const WeightTable& weights_from_z, const PrototypeBank& bank, double tau) {
  check_tau(tau, "tau");
  const Eigen::Index n = z.rows();
  if (n == 0 || z_aug.rows() != n || z_aug.cols() != z.cols() || weights_from_aug.weights.rows() != n ||
      weights_from_z.weights.rows() != n) {
    throw Error(ErrorKind::InvalidInput, "swapped views are misaligned");
  }
  if (bank.classes() != 1) throw Error(ErrorKind::InvalidInput, "swapped loss needs a single prototype pool");
  const Matrix& p = bank.prototypes();

  SwappedLossOutput out;
  // l(v, w) for each row; returns gradient wrt the logits.
  auto view_term = [&](const Matrix& v, const WeightTable& w, Matrix& g) {
    const Matrix logits = v * p.transpose() / tau;
    g = Matrix::Zero(n, p.rows());
    const Eigen::RowVectorXd ones = Eigen::RowVectorXd::Ones(p.rows());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const WeightedLse num = weighted_lse(logits.row(i), w.weights.row(i));
      const WeightedLse den = weighted_lse(logits.row(i), ones);
      if (num.lse == kNegInf) {
        throw Error(ErrorKind::NumericalError, "swapped-loss numerator vanished for sample " + std::to_string(i));
      }
      total += den.lse - num.lse;
      g.row(i) = den.resp - num.resp;
    }
    return total;
  };
  Matrix g_z, g_aug;
  const double scale = 0.5 / static_cast<double>(n);
  out.value = scale * (view_term(z, weights_from_aug, g_z) + view_term(z_aug, weights_from_z, g_aug));
  g_z *= scale / tau;
  g_aug *= scale / tau;
  out.grad_z = g_z * p;
  out.grad_z_aug = g_aug * p;
  out.grad_prototypes = g_z.transpose() * z + g_aug.transpose() * z_aug;
  out.grad_z += through_pathway(bank, out.grad_prototypes, n, z.cols());
  return out;
}

}  // namespace palm
