#include "palm/encoder.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "palm/geometry.hpp"

namespace palm {
namespace {

template <typename Fn>
void for_each_layer(MlpModel& m, Fn&& fn) {
  for (auto& l : m.encoder) fn(l);
  for (auto& l : m.projector) fn(l);
}

template <typename Fn>
void for_each_layer(const MlpModel& m, Fn&& fn) {
  for (const auto& l : m.encoder) fn(l);
  for (const auto& l : m.projector) fn(l);
}

template <typename Fn>
void for_each_pair(MlpModel& a, const MlpModel& b, Fn&& fn) {
  if (a.encoder.size() != b.encoder.size() || a.projector.size() != b.projector.size()) {
    throw Error(ErrorKind::InvalidInput, "layer count mismatch");
  }
  auto check = [](const LayerParams& x, const LayerParams& y) {
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() || x.bias.size() != y.bias.size()) {
      throw Error(ErrorKind::InvalidInput, "layer shape mismatch");
    }
  };
  for (std::size_t i = 0; i < a.encoder.size(); ++i) {
    check(a.encoder[i], b.encoder[i]);
    fn(a.encoder[i], b.encoder[i]);
  }
  for (std::size_t i = 0; i < a.projector.size(); ++i) {
    check(a.projector[i], b.projector[i]);
    fn(a.projector[i], b.projector[i]);
  }
}

LayerParams init_layer(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  LayerParams l;
  l.weight.resize(out, in);
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = u(rng);
  l.bias.resize(out);
  for (Eigen::Index r = 0; r < out; ++r) l.bias[r] = u(rng);
  return l;
}

}  // namespace

Eigen::Index MlpModel::input_dim() const {
  if (!encoder.empty()) return encoder.front().weight.cols();
  return projector.empty() ? 0 : projector.front().weight.cols();
}

Eigen::Index MlpModel::feature_dim() const {
  if (!encoder.empty()) return encoder.back().weight.rows();
  return input_dim();
}

Eigen::Index MlpModel::projection_dim() const {
  return projector.empty() ? 0 : projector.back().weight.rows();
}

Eigen::Index MlpModel::parameter_count() const {
  Eigen::Index n = 0;
  for_each_layer(*this, [&](const LayerParams& l) { n += l.weight.size() + l.bias.size(); });
  return n;
}

MlpModel make_mlp(const std::vector<int>& encoder_sizes, const std::vector<int>& projector_sizes, Rng& rng) {
  if (encoder_sizes.empty() || projector_sizes.size() < 2) {
    throw Error(ErrorKind::InvalidInput, "need an input width and at least one projector layer");
  }
  if (encoder_sizes.back() != projector_sizes.front()) {
    throw Error(ErrorKind::InvalidInput, "encoder output width must equal projector input width");
  }
  for (int s : encoder_sizes)
    if (s < 1) throw Error(ErrorKind::InvalidInput, "layer widths must be positive");
  for (int s : projector_sizes)
    if (s < 1) throw Error(ErrorKind::InvalidInput, "layer widths must be positive");
  MlpModel m;
  for (std::size_t i = 1; i < encoder_sizes.size(); ++i)
    m.encoder.push_back(init_layer(encoder_sizes[i - 1], encoder_sizes[i], rng));
  for (std::size_t i = 1; i < projector_sizes.size(); ++i)
    m.projector.push_back(init_layer(projector_sizes[i - 1], projector_sizes[i], rng));
  return m;
}

MlpGradients zeros_like(const MlpModel& model) {
  MlpGradients g = model;
  for_each_layer(g, [](LayerParams& l) {
    l.weight.setZero();
    l.bias.setZero();
  });
  return g;
}

Vector get_parameters(const MlpModel& model) {
  Vector flat(model.parameter_count());
  Eigen::Index at = 0;
  for_each_layer(model, [&](const LayerParams& l) {
    flat.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  });
  return flat;
}

void set_parameters(MlpModel& model, const Vector& flat) {
  if (flat.size() != model.parameter_count()) throw Error(ErrorKind::InvalidInput, "parameter vector length mismatch");
  Eigen::Index at = 0;
  for_each_layer(model, [&](LayerParams& l) {
    l.weight.reshaped() = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  });
}

ForwardResult forward(const MlpModel& model, const Matrix& x) {
  if (model.projector.empty()) throw Error(ErrorKind::InvalidInput, "model has no projector");
  if (x.cols() != model.input_dim()) {
    throw Error(ErrorKind::InvalidInput, "input width " + std::to_string(x.cols()) + " != " +
                                             std::to_string(model.input_dim()));
  }
  ForwardResult out;
  Matrix a = x;
  auto run = [&](const LayerParams& l, bool rectify) {
    out.cache.inputs.push_back(a);
    Matrix pre = a * l.weight.transpose();
    pre.rowwise() += l.bias.transpose();
    out.cache.pre_activation.push_back(pre);
    a = rectify ? Matrix(pre.cwiseMax(0.0)) : pre;
  };
  for (const auto& l : model.encoder) run(l, true);
  out.h = a;
  for (std::size_t i = 0; i < model.projector.size(); ++i) run(model.projector[i], i + 1 < model.projector.size());
  if (!a.allFinite()) throw Error(ErrorKind::NumericalError, "non-finite activations");
  out.cache.z_raw = a;
  out.z = normalize_rows(a);
  return out;
}

MlpGradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& grad_z,
                      const std::optional<Matrix>& grad_h) {
  const Matrix& zr = cache.z_raw;
  const std::size_t n_layers = model.encoder.size() + model.projector.size();
  if (cache.inputs.size() != n_layers || grad_z.rows() != zr.rows() || grad_z.cols() != zr.cols()) {
    throw Error(ErrorKind::InvalidInput, "gradient or cache does not match the model");
  }
  if (grad_h && (grad_h->rows() != zr.rows() || grad_h->cols() != model.feature_dim())) {
    throw Error(ErrorKind::InvalidInput, "grad_h shape mismatch");
  }

  // Through z = z' / |z'| row by row.
  Matrix g(zr.rows(), zr.cols());
  for (Eigen::Index i = 0; i < zr.rows(); ++i) {
    const double norm = zr.row(i).norm();
    const Eigen::RowVectorXd u = zr.row(i) / norm;
    g.row(i) = (grad_z.row(i) - u * u.dot(grad_z.row(i))) / norm;
  }

  MlpGradients grads = zeros_like(model);
  auto step = [&](const LayerParams& l, LayerParams& gl, std::size_t idx, bool rectified) {
    if (rectified) g = g.cwiseProduct((cache.pre_activation[idx].array() > 0.0).cast<double>().matrix());
    gl.weight = g.transpose() * cache.inputs[idx];
    gl.bias = g.colwise().sum().transpose();
    g = g * l.weight;
  };
  const std::size_t n_enc = model.encoder.size();
  for (std::size_t j = model.projector.size(); j-- > 0;) {
    step(model.projector[j], grads.projector[j], n_enc + j, j + 1 < model.projector.size());
  }
  if (grad_h) g += *grad_h;
  for (std::size_t j = n_enc; j-- > 0;) step(model.encoder[j], grads.encoder[j], j, true);
  return grads;
}

void accumulate(MlpGradients& a, const MlpGradients& b) {
  for_each_pair(a, b, [](LayerParams& x, const LayerParams& y) {
    x.weight += y.weight;
    x.bias += y.bias;
  });
}

OptimizerState make_optimizer(const MlpModel& model, double base_lr, double momentum, double weight_decay,
                              int total_epochs) {
  OptimizerState s;
  s.momentum_buffer = zeros_like(model);
  s.base_lr = base_lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.total_epochs = total_epochs;
  return s;
}

void sgd_step(MlpModel& model, const MlpGradients& grads, OptimizerState& state, double lr) {
  MlpGradients& buf = state.momentum_buffer;
  // Pair buffers with gradients first so a shape mismatch throws before anything moves.
  for_each_pair(buf, grads, [&](LayerParams&, const LayerParams&) {});
  for_each_pair(model, buf, [&](LayerParams&, const LayerParams&) {});

  std::size_t i = 0;
  auto upd = [&](LayerParams& p, LayerParams& b, const LayerParams& g) {
    b.weight = state.momentum * b.weight + g.weight + state.weight_decay * p.weight;
    b.bias = state.momentum * b.bias + g.bias + state.weight_decay * p.bias;
    p.weight -= lr * b.weight;
    p.bias -= lr * b.bias;
  };
  for (i = 0; i < model.encoder.size(); ++i) upd(model.encoder[i], buf.encoder[i], grads.encoder[i]);
  for (i = 0; i < model.projector.size(); ++i) upd(model.projector[i], buf.projector[i], grads.projector[i]);
}

double cosine_lr(double base_lr, int epoch, int total_epochs) {
  if (total_epochs <= 0) return base_lr;
  if (epoch < 0 || epoch > total_epochs) throw Error(ErrorKind::InvalidInput, "epoch outside [0, total]");
  return 0.5 * base_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
}

}  // namespace palm
