#include "palm/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace palm {
namespace {

constexpr double kConvergedResidual = 1e-9;
constexpr int kMaxSweeps = 10000;
constexpr double kLogDomainBelow = 0.01;

double marginal_residual(const Eigen::MatrixXd& q) {
  const double row_target = 1.0 / static_cast<double>(q.rows());
  const double col_target = 1.0 / static_cast<double>(q.cols());
  const double r = (q.rowwise().sum().array() - row_target).abs().maxCoeff();
  const double c = (q.colwise().sum().array() - col_target).abs().maxCoeff();
  return std::max(r, c);
}

double log_sum_exp(const auto& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// Returns sweeps used. Each sweep is a row renormalization followed by a column renormalization.
int sinkhorn_direct(Eigen::MatrixXd& q, int iterations) {
  const double kk = static_cast<double>(q.rows());
  const double bb = static_cast<double>(q.cols());
  q /= q.sum();
  const int max_sweeps = iterations > 0 ? iterations : kMaxSweeps;
  int sweep = 0;
  while (sweep < max_sweeps) {
    Eigen::VectorXd rows = q.rowwise().sum();
    if (!(rows.array() > 0.0).all() || !rows.allFinite()) {
      throw Error(ErrorKind::NumericalError, "sinkhorn row mass vanished");
    }
    q = (1.0 / kk) * rows.cwiseInverse().asDiagonal() * q;
    Eigen::RowVectorXd cols = q.colwise().sum();
    if (!(cols.array() > 0.0).all() || !cols.allFinite()) {
      throw Error(ErrorKind::NumericalError, "sinkhorn column mass vanished");
    }
    q = (1.0 / bb) * q * cols.cwiseInverse().asDiagonal();
    ++sweep;
    if (iterations == 0 && marginal_residual(q) < kConvergedResidual) break;
  }
  return sweep;
}

int sinkhorn_log(Eigen::MatrixXd& log_q, int iterations) {
  const double log_k = std::log(static_cast<double>(log_q.rows()));
  const double log_b = std::log(static_cast<double>(log_q.cols()));
  log_q.array() -= log_sum_exp(log_q.reshaped());
  const int max_sweeps = iterations > 0 ? iterations : kMaxSweeps;
  int sweep = 0;
  while (sweep < max_sweeps) {
    for (Eigen::Index k = 0; k < log_q.rows(); ++k) {
      log_q.row(k).array() -= log_sum_exp(log_q.row(k)) + log_k;
    }
    for (Eigen::Index b = 0; b < log_q.cols(); ++b) {
      log_q.col(b).array() -= log_sum_exp(log_q.col(b)) + log_b;
    }
    ++sweep;
    if (iterations == 0 && marginal_residual(log_q.array().exp().matrix()) < kConvergedResidual) break;
  }
  if (!log_q.allFinite()) throw Error(ErrorKind::NumericalError, "sinkhorn log-domain overflow");
  return sweep;
}

}  // namespace

AssignmentMatrix sinkhorn_assign(const Matrix& prototypes, const Matrix& embeddings,
                                 const SinkhornOptions& options, int class_id) {
  if (embeddings.rows() == 0) throw Error(ErrorKind::EmptyClass, "no embeddings for class " + std::to_string(class_id));
  if (prototypes.rows() == 0) throw Error(ErrorKind::InvalidInput, "no prototypes");
  if (prototypes.cols() != embeddings.cols()) throw Error(ErrorKind::InvalidInput, "dimension mismatch");
  if (!(options.epsilon > 0.0)) throw Error(ErrorKind::InvalidInput, "epsilon must be > 0");
  if (options.iterations < 0) throw Error(ErrorKind::InvalidInput, "iterations must be >= 0");

  const Eigen::MatrixXd sim = prototypes * embeddings.transpose();
  if (!sim.allFinite()) throw Error(ErrorKind::NumericalError, "non-finite similarity");

  AssignmentMatrix out;
  out.class_id = class_id;
  // Shifting by the max leaves the plan unchanged and keeps exp() in range.
  Eigen::MatrixXd scaled = (sim.array() - sim.maxCoeff()) / options.epsilon;
  if (options.epsilon < kLogDomainBelow) {
    out.iterations_used = sinkhorn_log(scaled, options.iterations);
    out.weights = scaled.array().exp();
  } else {
    out.weights = scaled.array().exp();
    out.iterations_used = sinkhorn_direct(out.weights, options.iterations);
  }
  out.residual = marginal_residual(out.weights);
  out.converged = out.residual < kConvergedResidual;
  return out;
}

AssignmentMatrix prune_topk(const AssignmentMatrix& matrix, int k_top) {
  const auto kk = matrix.weights.rows();
  if (k_top < 1 || k_top > kk) throw Error(ErrorKind::InvalidInput, "k_top must be in [1, K]");
  AssignmentMatrix out = matrix;
  if (k_top == kk) return out;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(kk));
  for (Eigen::Index b = 0; b < matrix.weights.cols(); ++b) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
      return matrix.weights(x, b) > matrix.weights(y, b);
    });
    for (auto it = order.begin() + k_top; it != order.end(); ++it) out.weights(*it, b) = 0.0;
  }
  return out;
}

AssignmentMatrix hard_assign(const Matrix& prototypes, const Matrix& embeddings, int class_id) {
  if (embeddings.rows() == 0) throw Error(ErrorKind::EmptyClass, "no embeddings for class " + std::to_string(class_id));
  if (prototypes.cols() != embeddings.cols()) throw Error(ErrorKind::InvalidInput, "dimension mismatch");
  const Eigen::MatrixXd sim = prototypes * embeddings.transpose();
  AssignmentMatrix out;
  out.class_id = class_id;
  out.converged = true;
  out.weights = Eigen::MatrixXd::Zero(sim.rows(), sim.cols());
  for (Eigen::Index b = 0; b < sim.cols(); ++b) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < sim.rows(); ++k) {
      if (sim(k, b) > sim(best, b)) best = k;
    }
    out.weights(best, b) = 1.0;
  }
  return out;
}

WeightTable build_weight_table(const Matrix& z, std::span<const int> labels, const PrototypeBank& bank,
                               const AssignmentOptions& options) {
  const int n_classes = bank.classes();
  const int kk = bank.per_class();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw Error(ErrorKind::InvalidInput, "labels and embeddings differ in length");
  }
  WeightTable table;
  table.classes = n_classes;
  table.per_class = kk;
  table.weights = Matrix::Constant(z.rows(), static_cast<Eigen::Index>(n_classes) * kk, 1.0 / kk);

  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) {
      throw Error(ErrorKind::InvalidInput, "label " + std::to_string(labels[i]) + " out of range");
    }
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }

  for (int c = 0; c < n_classes; ++c) {
    const auto& idx = members[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    const Matrix zc = z(idx, Eigen::all);
    const Matrix pc = bank.class_block(c);
    AssignmentMatrix w;
    if (options.mode == AssignmentMode::Hard) {
      w = hard_assign(pc, zc, c);
    } else {
      w = prune_topk(sinkhorn_assign(pc, zc, options.sinkhorn, c), options.k_top);
    }
    for (std::size_t j = 0; j < idx.size(); ++j) {
      table.row(idx[j], c) = w.weights.col(static_cast<Eigen::Index>(j)).transpose();
    }
  }
  return table;
}

WeightTable build_global_weight_table(const Matrix& z, const PrototypeBank& bank,
                                      const AssignmentOptions& options) {
  if (bank.classes() != 1) throw Error(ErrorKind::InvalidInput, "global assignment needs a single prototype pool");
  const Matrix pool = bank.class_block(0);
  AssignmentMatrix w = options.mode == AssignmentMode::Hard
                           ? hard_assign(pool, z)
                           : prune_topk(sinkhorn_assign(pool, z, options.sinkhorn), options.k_top);
  if (options.mode == AssignmentMode::Soft) w.weights *= static_cast<double>(z.rows());
  WeightTable table;
  table.classes = 1;
  table.per_class = bank.per_class();
  table.weights = w.weights.transpose();
  return table;
}

}  // namespace palm
