#pragma once

// Independent reference computations used as test oracles. Everything here is written
// from the defining formulas with plain loops, sharing no code with the library beyond
// the container types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "palm/assignment.hpp"
#include "palm/bank.hpp"
#include "palm/common.hpp"
#include "palm/encoder.hpp"
#include "palm/trainer.hpp"

namespace oracle {

using palm::Matrix;
using palm::Vector;

inline Matrix random_unit_rows(Eigen::Index n, Eigen::Index d, palm::Rng& rng) {
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng);
    m.row(i) /= m.row(i).norm();
  }
  return m;
}

inline Matrix random_matrix(Eigen::Index n, Eigen::Index d, palm::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

inline int uniform_int(palm::Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(palm::Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// ---- metrics -------------------------------------------------------------

/// Exhaustive pair count: P(id > ood) + 1/2 P(id == ood).
inline double pair_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double a : id)
    for (double b : ood) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

/// Tries every observed score as a threshold (accept is score >= t), keeps the largest one that
/// accepts at least ceil(tpr * N) ID samples, and returns the OOD acceptance rate there.
inline double sweep_fpr(const std::vector<double>& id, const std::vector<double>& ood, double tpr) {
  const auto need = static_cast<std::size_t>(std::ceil(tpr * static_cast<double>(id.size()) - 1e-12));
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> candidates = id;
  candidates.insert(candidates.end(), ood.begin(), ood.end());
  for (double t : candidates) {
    const auto accepted = std::count_if(id.begin(), id.end(), [t](double s) { return s >= t; });
    if (static_cast<std::size_t>(accepted) >= need) best = std::max(best, t);
  }
  const auto fp = std::count_if(ood.begin(), ood.end(), [best](double s) { return s >= best; });
  return static_cast<double>(fp) / static_cast<double>(ood.size());
}

// ---- Sinkhorn ------------------------------------------------------------

/// Textbook fixed point (u, v) <- (1 / (K H v), 1 / (B H^T u)) on H = exp(P Z^T / eps),
/// iterated until both marginals match; returns diag(u) H diag(v).
inline Eigen::MatrixXd sinkhorn_fixed_point(const Matrix& p, const Matrix& z, double eps, int sweeps) {
  const Eigen::Index k = p.rows(), b = z.rows();
  Eigen::MatrixXd s = p * z.transpose() / eps;
  s.array() -= s.maxCoeff();
  const Eigen::MatrixXd h = s.array().exp().matrix();
  Eigen::VectorXd u = Eigen::VectorXd::Ones(k), v = Eigen::VectorXd::Ones(b);
  for (int it = 0; it < sweeps; ++it) {
    u = (static_cast<double>(k) * (h * v).array()).inverse().matrix();
    v = (static_cast<double>(b) * (h.transpose() * u).array()).inverse().matrix();
  }
  return u.asDiagonal() * h * v.asDiagonal();
}

// ---- losses --------------------------------------------------------------

/// -log sum_k w_yk exp(p_yk.z/tau) / sum_c sum_k w_ck exp(p_ck.z/tau), averaged over the batch.
inline double mle_direct(const Matrix& z, const std::vector<int>& labels, const Matrix& protos, int classes,
                         int per_class, const Matrix& weights, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double num = 0.0, den = 0.0;
    for (int c = 0; c < classes; ++c) {
      for (int k = 0; k < per_class; ++k) {
        const Eigen::Index j = static_cast<Eigen::Index>(c) * per_class + k;
        const double term = weights(i, j) * std::exp(protos.row(j).dot(z.row(i)) / tau);
        den += term;
        if (c == labels[static_cast<std::size_t>(i)]) num += term;
      }
    }
    total += -std::log(num / den);
  }
  return total / static_cast<double>(z.rows());
}

/// Mean over prototypes of -log( sum_{same class, k'!=k} e^{s/tau_p} / sum_{other classes} e^{s/tau_p} ).
inline double proto_contrast_direct(const Matrix& protos, int classes, int per_class, double tau_p) {
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k) {
      const Eigen::Index a = static_cast<Eigen::Index>(c) * per_class + k;
      double num = 0.0, den = 0.0;
      for (int c2 = 0; c2 < classes; ++c2) {
        for (int k2 = 0; k2 < per_class; ++k2) {
          const Eigen::Index b = static_cast<Eigen::Index>(c2) * per_class + k2;
          const double e = std::exp(protos.row(a).dot(protos.row(b)) / tau_p);
          if (c2 == c && k2 != k) num += e;
          if (c2 != c) den += e;
        }
      }
      total += -std::log(num / den);
    }
  }
  return total / static_cast<double>(classes * per_class);
}

// ---- finite differences --------------------------------------------------

/// Central differences of f over every entry of `x`.
inline Vector central_difference(const std::function<double(const Vector&)>& f, Vector x, double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Worst per-entry relative error, with a floor on the denominator so entries that are
/// zero in both (dead units, untouched biases) do not divide by zero.
inline double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

/// Smallest |pre-activation| over every rectified unit; finite differences are only
/// meaningful away from the kinks.
inline double kink_margin(const palm::MlpModel& model, const Matrix& x) {
  const palm::ForwardResult r = palm::forward(model, x);
  double m = std::numeric_limits<double>::infinity();
  const std::size_t rectified = model.encoder.size() + (model.projector.empty() ? 0 : model.projector.size() - 1);
  for (std::size_t l = 0; l < rectified && l < r.cache.pre_activation.size(); ++l)
    m = std::min(m, r.cache.pre_activation[l].cwiseAbs().minCoeff());
  return m;
}

struct GradientCase {
  palm::TrainConfig config;
  palm::MlpModel model;
  palm::PrototypeBank bank;
  Matrix x;
  std::vector<int> labels;
};

/// A random tiny supervised instance within D_in <= 10, D_proj <= 8, C <= 3, K <= 2, B <= 12,
/// redrawn until every rectified unit is at least `margin` from its kink.
inline GradientCase random_gradient_case(palm::Rng& rng, double margin = 1e-3) {
  for (;;) {
    GradientCase gc;
    const int d_in = uniform_int(rng, 3, 10);
    const int d_proj = uniform_int(rng, 3, 8);
    const int classes = uniform_int(rng, 2, 3);
    const int per_class = uniform_int(rng, 1, 2);
    const int batch = uniform_int(rng, 4, 12);
    auto& cfg = gc.config;
    cfg.classes = classes;
    cfg.prototypes_per_class = per_class;
    cfg.k_top = uniform_int(rng, 1, per_class);
    cfg.tau = uniform_real(rng, 0.1, 1.0);
    cfg.tau_p = uniform_real(rng, 0.2, 1.0);
    cfg.lambda = uniform_real(rng, 0.5, 2.0);
    // Well below the default momentum so the EMA route carries a visible share of the gradient.
    cfg.alpha = uniform_real(rng, 0.2, 0.95);
    cfg.encoder_layers = {uniform_int(rng, 3, 8), uniform_int(rng, 3, 6)};
    cfg.projector_layers = {uniform_int(rng, 3, 6), d_proj};
    gc.model = palm::make_mlp({d_in, cfg.encoder_layers[0], cfg.encoder_layers[1]},
                              {cfg.encoder_layers[1], cfg.projector_layers[0], d_proj}, rng);
    gc.bank = palm::PrototypeBank(classes, per_class, random_unit_rows(classes * per_class, d_proj, rng), cfg.alpha);
    gc.x = random_matrix(batch, d_in, rng);
    gc.labels.resize(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) gc.labels[static_cast<std::size_t>(i)] = i < classes ? i : uniform_int(rng, 0, classes - 1);
    if (kink_margin(gc.model, gc.x) >= margin) return gc;
  }
}

}  // namespace oracle
