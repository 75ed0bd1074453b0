#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "palm/assignment.hpp"
#include "palm/bank.hpp"
#include "palm/encoder.hpp"
#include "palm/scoring.hpp"

namespace palm {

enum class TrainMode { Supervised, Unsupervised };

struct TrainConfig {
  TrainMode mode = TrainMode::Supervised;
  int classes = 0;                 ///< 0 = one more than the largest training label
  int prototypes_per_class = 6;    ///< K (global pool size in unsupervised mode)
  int k_top = 5;
  double tau = 0.1;
  double tau_p = 0.5;
  double lambda = 1.0;
  double alpha = 0.999;
  double epsilon = 0.05;
  int sinkhorn_iters = 3;
  int batch_size = 128;
  int epochs = 100;
  double base_lr = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  std::uint64_t seed = 0;
  AssignmentMode assignment_mode = AssignmentMode::Soft;
  bool ema_enabled = true;
  double augment_sigma = 0.1;
  std::vector<int> encoder_layers{64, 32};  ///< widths after the input; the last is the feature width E
  std::vector<int> projector_layers{16};    ///< widths after E; the last is D_proj
  bool mahalanobis_normalize = false;

  /// Throws InvalidConfiguration naming the first bad field.
  void validate() const;
  /// Canonical JSON (sorted keys, every field present).
  std::string to_json() const;
  /// Unspecified keys keep their defaults; unknown keys are an error.
  static TrainConfig from_json(const std::string& text);
  /// FNV-1a 64 of the canonical JSON, as 16 hex digits.
  std::string hash() const;

  double effective_alpha() const { return ema_enabled ? alpha : 0.0; }
  AssignmentOptions assignment_options() const;
};

struct Checkpoint {
  TrainConfig config;
  MlpModel model;
  PrototypeBank bank;
  OptimizerState optimizer;
  int epoch = 0;
  std::string config_hash;
};

struct StepDiagnostics {
  int epoch = 0;
  int step = 0;
  double loss = 0.0;
  double mle = 0.0;
  double proto_contrast = 0.0;
  double assignment_entropy = 0.0;  ///< mean entropy (nats) of each sample's own-class weights, renormalized
  double prototype_drift_deg = 0.0; ///< largest angle any prototype moved this step
  double lr = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mle = 0.0;
  double proto_contrast = 0.0;
  std::optional<double> eval_auroc_mahalanobis;
  std::optional<double> eval_auroc_knn;
};

/// Loss and parameter gradients of one iteration with the assignment table held fixed.
struct Objective {
  double value = 0.0;
  double mle = 0.0;
  double proto_contrast = 0.0;
  MlpGradients grads;
  PrototypeBank bank;  ///< EMA-updated, still attached
  WeightTable table;
};

/// Forward, EMA update, L_PALM, backward. When `table` is null it is built from the forward
/// embeddings (the normal training path); passing one freezes the stop-gradient weights.
Objective supervised_objective(const MlpModel& model, const Matrix& x, std::span<const int> labels,
                               const PrototypeBank& bank, const TrainConfig& config,
                               const WeightTable* table = nullptr, bool with_gradients = true);

struct SwappedTables {
  WeightTable from_z;
  WeightTable from_aug;
};

/// Two-view swapped-assignment objective over the global pool (bank with one class).
Objective unsupervised_objective(const MlpModel& model, const Matrix& x, const Matrix& x_aug,
                                 const PrototypeBank& bank, const TrainConfig& config,
                                 const SwappedTables* tables = nullptr, bool with_gradients = true);

/// One iteration of the training loop. `bank` must be detached on entry and is detached on exit.
StepDiagnostics train_step(MlpModel& model, PrototypeBank& bank, const Matrix& x, std::span<const int> labels,
                           const TrainConfig& config, OptimizerState& state, double lr);

/// Unsupervised iteration; the augmented view is x plus N(0, augment_sigma^2) noise from `rng`.
StepDiagnostics train_unsupervised_step(MlpModel& model, PrototypeBank& bank, const Matrix& x,
                                        const TrainConfig& config, OptimizerState& state, double lr, Rng& rng);

/// Fresh model, bank and optimizer for `config` on data of width `input_dim`.
Checkpoint initialize(const TrainConfig& config, Eigen::Index input_dim, int classes);

struct EvalSplit {
  const EmbeddingBatch* id_test = nullptr;
  const EmbeddingBatch* ood_test = nullptr;
  int every = 10;
  int knn_k = 10;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::vector<StepDiagnostics> steps;
};

/// Continues training from `ckpt.epoch` up to `until_epoch` (capped at config.epochs).
/// Batches come from a per-epoch shuffle seeded by (seed, epoch), so resuming from a saved
/// checkpoint replays exactly.
void run_epochs(Checkpoint& ckpt, const EmbeddingBatch& data, int until_epoch, TrainLog* log = nullptr,
                const EvalSplit* eval = nullptr);

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

TrainResult train(const TrainConfig& config, const EmbeddingBatch& data, const EvalSplit* eval = nullptr);

/// Every score family and embedding diagnostic on a trained checkpoint.
struct DetectionSummary {
  std::vector<double> id_mahalanobis, ood_mahalanobis;
  std::vector<double> id_knn, ood_knn;
  std::vector<double> id_posterior, ood_posterior;
  double auroc_mahalanobis = 0.0, fpr95_mahalanobis = 0.0;
  double auroc_knn = 0.0, fpr95_knn = 0.0;
  double auroc_posterior = 0.0;
  double compactness_deg = 0.0;
  double far_id_fraction = 0.0;
};

/// Fits the Gaussian on training features (one global class in unsupervised mode).
GaussianFit fit_features(const Checkpoint& ckpt, const EmbeddingBatch& train);

DetectionSummary evaluate_detection(const Checkpoint& ckpt, const EmbeddingBatch& train,
                                    const EmbeddingBatch& id_test, const EmbeddingBatch& ood_test, int knn_k);

}  // namespace palm
