#pragma once

#include <optional>
#include <vector>

#include "palm/common.hpp"

namespace palm {

struct LayerParams {
  Eigen::MatrixXd weight;  ///< out x in
  Vector bias;
};

/// Encoder f (every layer rectified, its output is the feature h) followed by projector g
/// (rectified hidden layers, linear output z'). z = z' / |z'|.
struct MlpModel {
  std::vector<LayerParams> encoder;
  std::vector<LayerParams> projector;

  Eigen::Index input_dim() const;
  Eigen::Index feature_dim() const;
  Eigen::Index projection_dim() const;
  Eigen::Index parameter_count() const;
};

/// Same layout as the model.
using MlpGradients = MlpModel;

/// `encoder_sizes` = [D_in, ..., E] (a single entry means h = x), `projector_sizes` = [E, ..., D_proj].
/// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpModel make_mlp(const std::vector<int>& encoder_sizes, const std::vector<int>& projector_sizes, Rng& rng);

MlpGradients zeros_like(const MlpModel& model);
Vector get_parameters(const MlpModel& model);
void set_parameters(MlpModel& model, const Vector& flat);

struct ForwardCache {
  std::vector<Matrix> inputs;       ///< input of every layer, encoder first
  std::vector<Matrix> pre_activation;
  Matrix z_raw;                     ///< z' before normalization
};

struct ForwardResult {
  Matrix h;
  Matrix z;
  ForwardCache cache;
};

ForwardResult forward(const MlpModel& model, const Matrix& x);

/// Reverse-mode gradients of a loss given dL/dz (B x D_proj) and optionally dL/dh (B x E).
MlpGradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& grad_z,
                      const std::optional<Matrix>& grad_h = std::nullopt);

/// Elementwise a += b.
void accumulate(MlpGradients& a, const MlpGradients& b);

struct OptimizerState {
  MlpGradients momentum_buffer;
  double base_lr = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  int epoch = 0;
  int total_epochs = 0;
};

OptimizerState make_optimizer(const MlpModel& model, double base_lr, double momentum, double weight_decay,
                              int total_epochs);

/// buf <- m*buf + grad + wd*param; param <- param - lr*buf.
void sgd_step(MlpModel& model, const MlpGradients& grads, OptimizerState& state, double lr);

/// Half-period cosine decay from base_lr at epoch 0 to 0 at `total_epochs`.
double cosine_lr(double base_lr, int epoch, int total_epochs);

}  // namespace palm
