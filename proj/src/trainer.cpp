#include "palm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "palm/geometry.hpp"
#include "palm/losses.hpp"
#include "palm/metrics.hpp"
#include "palm/prototypes.hpp"

namespace palm {
namespace {

void config_error(const std::string& what) { throw Error(ErrorKind::InvalidConfiguration, what); }

double own_class_entropy(const WeightTable& table, std::span<const int> labels) {
  if (table.weights.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < table.weights.rows(); ++i) {
    const int c = labels.empty() ? 0 : labels[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd w = table.row(i, c);
    const double s = w.sum();
    if (!(s > 0.0)) continue;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      if (w[k] > 0.0) total -= (w[k] / s) * std::log(w[k] / s);
    }
  }
  return total / static_cast<double>(table.weights.rows());
}

double max_drift_deg(const Matrix& before, const Matrix& after) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < before.rows(); ++r) {
    const double c = std::clamp(before.row(r).dot(after.row(r)), -1.0, 1.0);
    worst = std::max(worst, std::acos(c));
  }
  return worst * 180.0 / std::numbers::pi;
}

PrototypeBank with_alpha(const PrototypeBank& bank, double alpha) {
  PrototypeBank b = detach(bank);
  b.set_alpha(alpha);
  return b;
}

std::vector<int> zero_labels(Eigen::Index n) { return std::vector<int>(static_cast<std::size_t>(n), 0); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (classes < 0) config_error("classes must be >= 0");
  if (prototypes_per_class < 1) config_error("prototypes_per_class must be >= 1");
  if (k_top < 1 || k_top > prototypes_per_class) config_error("k_top must be in [1, prototypes_per_class]");
  if (!(tau > 0.0)) config_error("tau must be > 0");
  if (!(tau_p > 0.0)) config_error("tau_p must be > 0");
  if (!(lambda >= 0.0)) config_error("lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) config_error("alpha must be in [0, 1]");
  if (!(epsilon > 0.0)) config_error("epsilon must be > 0");
  if (sinkhorn_iters < 0) config_error("sinkhorn_iters must be >= 0");
  if (batch_size < 1) config_error("batch_size must be >= 1");
  if (epochs < 0) config_error("epochs must be >= 0");
  if (!(base_lr >= 0.0)) config_error("base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) config_error("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) config_error("weight_decay must be >= 0");
  if (!(augment_sigma >= 0.0)) config_error("augment_sigma must be >= 0");
  if (projector_layers.empty()) config_error("projector_layers needs at least one width");
  for (int w : encoder_layers)
    if (w < 1) config_error("encoder_layers widths must be positive");
  for (int w : projector_layers)
    if (w < 1) config_error("projector_layers widths must be positive");
  if (projector_layers.back() < 2) config_error("projection dimension must be >= 2");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = mode == TrainMode::Supervised ? "supervised" : "unsupervised";
  j["classes"] = classes;
  j["prototypes_per_class"] = prototypes_per_class;
  j["k_top"] = k_top;
  j["tau"] = tau;
  j["tau_p"] = tau_p;
  j["lambda"] = lambda;
  j["alpha"] = alpha;
  j["epsilon"] = epsilon;
  j["sinkhorn_iters"] = sinkhorn_iters;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["base_lr"] = base_lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["assignment_mode"] = assignment_mode == AssignmentMode::Soft ? "soft" : "hard";
  j["ema_enabled"] = ema_enabled;
  j["augment_sigma"] = augment_sigma;
  j["encoder_layers"] = encoder_layers;
  j["projector_layers"] = projector_layers;
  j["mahalanobis_normalize"] = mahalanobis_normalize;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) config_error("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "mode") {
        const auto s = v.get<std::string>();
        if (s == "supervised") c.mode = TrainMode::Supervised;
        else if (s == "unsupervised") c.mode = TrainMode::Unsupervised;
        else config_error("mode must be supervised or unsupervised");
      } else if (key == "classes") c.classes = v.get<int>();
      else if (key == "prototypes_per_class") c.prototypes_per_class = v.get<int>();
      else if (key == "k_top") c.k_top = v.get<int>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "tau_p") c.tau_p = v.get<double>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "epsilon") c.epsilon = v.get<double>();
      else if (key == "sinkhorn_iters") c.sinkhorn_iters = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "base_lr") c.base_lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "assignment_mode") {
        const auto s = v.get<std::string>();
        if (s == "soft") c.assignment_mode = AssignmentMode::Soft;
        else if (s == "hard") c.assignment_mode = AssignmentMode::Hard;
        else config_error("assignment_mode must be soft or hard");
      } else if (key == "ema_enabled") c.ema_enabled = v.get<bool>();
      else if (key == "augment_sigma") c.augment_sigma = v.get<double>();
      else if (key == "encoder_layers") c.encoder_layers = v.get<std::vector<int>>();
      else if (key == "projector_layers") c.projector_layers = v.get<std::vector<int>>();
      else if (key == "mahalanobis_normalize") c.mahalanobis_normalize = v.get<bool>();
      else config_error("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string("config value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

AssignmentOptions TrainConfig::assignment_options() const {
  AssignmentOptions o;
  o.sinkhorn.epsilon = epsilon;
  o.sinkhorn.iterations = sinkhorn_iters;
  o.k_top = k_top;
  o.mode = assignment_mode;
  return o;
}

// ---------------------------------------------------------------------------
// Objectives

Objective supervised_objective(const MlpModel& model, const Matrix& x, std::span<const int> labels,
                               const PrototypeBank& bank, const TrainConfig& config, const WeightTable* table,
                               bool with_gradients) {
  if (bank.attached()) throw Error(ErrorKind::InvalidInput, "bank must be detached at the start of a step");
  const ForwardResult fwd = forward(model, x);

  Objective obj;
  obj.table = table ? *table : build_weight_table(fwd.z, labels, bank, config.assignment_options());
  obj.bank = ema_update(with_alpha(bank, config.effective_alpha()), fwd.z, labels, obj.table);

  // The prototype contrast is undefined with a single class or a single prototype per class.
  const bool contrast = bank.classes() >= 2 && bank.per_class() >= 2;
  const LossOutput loss = palm_loss(fwd.z, labels, obj.bank, obj.table, config.tau, config.tau_p,
                                    contrast ? config.lambda : 0.0);
  if (!std::isfinite(loss.value)) throw Error(ErrorKind::NumericalError, "non-finite loss");
  obj.value = loss.value;
  obj.mle = loss.mle;
  obj.proto_contrast = loss.proto_contrast;
  if (with_gradients) obj.grads = backward(model, fwd.cache, loss.grad_z);
  return obj;
}

Objective unsupervised_objective(const MlpModel& model, const Matrix& x, const Matrix& x_aug,
                                 const PrototypeBank& bank, const TrainConfig& config, const SwappedTables* tables,
                                 bool with_gradients) {
  if (bank.attached()) throw Error(ErrorKind::InvalidInput, "bank must be detached at the start of a step");
  if (bank.classes() != 1) throw Error(ErrorKind::InvalidInput, "unsupervised training needs a single prototype pool");
  const ForwardResult view = forward(model, x);
  const ForwardResult aug = forward(model, x_aug);

  SwappedTables t;
  if (tables) {
    t = *tables;
  } else {
    const AssignmentOptions opts = config.assignment_options();
    t.from_z = build_global_weight_table(view.z, bank, opts);
    t.from_aug = build_global_weight_table(aug.z, bank, opts);
  }
  const std::vector<int> labels = zero_labels(view.z.rows());

  Objective obj;
  obj.bank = ema_update(with_alpha(bank, config.effective_alpha()), view.z, labels, t.from_z);
  const SwappedLossOutput loss = unsup_swapped_loss(view.z, aug.z, t.from_aug, t.from_z, obj.bank, config.tau);
  if (!std::isfinite(loss.value)) throw Error(ErrorKind::NumericalError, "non-finite loss");
  obj.value = loss.value;
  obj.mle = loss.value;
  obj.table = t.from_z;
  if (with_gradients) {
    obj.grads = backward(model, view.cache, loss.grad_z);
    accumulate(obj.grads, backward(model, aug.cache, loss.grad_z_aug));
  }
  return obj;
}

// ---------------------------------------------------------------------------
// Steps

StepDiagnostics train_step(MlpModel& model, PrototypeBank& bank, const Matrix& x, std::span<const int> labels,
                           const TrainConfig& config, OptimizerState& state, double lr) {
  Objective obj = supervised_objective(model, x, labels, bank, config);
  sgd_step(model, obj.grads, state, lr);

  StepDiagnostics d;
  d.loss = obj.value;
  d.mle = obj.mle;
  d.proto_contrast = obj.proto_contrast;
  d.assignment_entropy = own_class_entropy(obj.table, labels);
  d.prototype_drift_deg = max_drift_deg(bank.prototypes(), obj.bank.prototypes());
  d.lr = lr;
  bank = detach(obj.bank);
  bank.set_alpha(config.effective_alpha());
  return d;
}

StepDiagnostics train_unsupervised_step(MlpModel& model, PrototypeBank& bank, const Matrix& x,
                                        const TrainConfig& config, OptimizerState& state, double lr, Rng& rng) {
  Matrix x_aug = x;
  if (config.augment_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.augment_sigma);
    for (Eigen::Index i = 0; i < x_aug.rows(); ++i)
      for (Eigen::Index j = 0; j < x_aug.cols(); ++j) x_aug(i, j) += noise(rng);
  }
  Objective obj = unsupervised_objective(model, x, x_aug, bank, config);
  sgd_step(model, obj.grads, state, lr);

  StepDiagnostics d;
  d.loss = obj.value;
  d.mle = obj.value;
  d.assignment_entropy = own_class_entropy(obj.table, {});
  d.prototype_drift_deg = max_drift_deg(bank.prototypes(), obj.bank.prototypes());
  d.lr = lr;
  bank = detach(obj.bank);
  bank.set_alpha(config.effective_alpha());
  return d;
}

// ---------------------------------------------------------------------------
// Loop

Checkpoint initialize(const TrainConfig& config, Eigen::Index input_dim, int classes) {
  config.validate();
  if (input_dim < 1) throw Error(ErrorKind::InvalidInput, "input dimension must be >= 1");
  Checkpoint ckpt;
  ckpt.config = config;
  const bool sup = config.mode == TrainMode::Supervised;
  if (sup) {
    if (classes < 1) throw Error(ErrorKind::InvalidInput, "supervised training needs at least one class");
    ckpt.config.classes = classes;
  }

  std::vector<int> enc{static_cast<int>(input_dim)};
  enc.insert(enc.end(), config.encoder_layers.begin(), config.encoder_layers.end());
  std::vector<int> proj{enc.back()};
  proj.insert(proj.end(), config.projector_layers.begin(), config.projector_layers.end());

  Rng model_rng = derive_rng(config.seed, {1});
  ckpt.model = make_mlp(enc, proj, model_rng);
  Rng bank_rng = derive_rng(config.seed, {2});
  ckpt.bank = init_uniform(sup ? classes : 1, config.prototypes_per_class, config.projector_layers.back(),
                           config.effective_alpha(), bank_rng);
  ckpt.optimizer = make_optimizer(ckpt.model, config.base_lr, config.momentum, config.weight_decay, config.epochs);
  ckpt.config_hash = ckpt.config.hash();
  return ckpt;
}

void run_epochs(Checkpoint& ckpt, const EmbeddingBatch& data, int until_epoch, TrainLog* log, const EvalSplit* eval) {
  const TrainConfig& cfg = ckpt.config;
  const bool sup = cfg.mode == TrainMode::Supervised;
  if (sup && !data.labeled()) throw Error(ErrorKind::InvalidInput, "supervised training needs labeled data");
  if (data.size() == 0) throw Error(ErrorKind::InvalidInput, "empty training set");
  if (data.dim() != ckpt.model.input_dim()) throw Error(ErrorKind::InvalidInput, "data width does not match the model");
  until_epoch = std::min(until_epoch, cfg.epochs);

  const auto n = static_cast<std::size_t>(data.size());
  std::vector<Eigen::Index> order(n);
  for (int epoch = ckpt.epoch; epoch < until_epoch; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle_rng = derive_rng(cfg.seed, {3, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog ep;
    ep.epoch = epoch;
    ep.lr = lr;
    int steps = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Matrix x = data.values(idx, Eigen::all);
      StepDiagnostics d;
      try {
        if (sup) {
          std::vector<int> y(idx.size());
          for (std::size_t j = 0; j < idx.size(); ++j) y[j] = data.labels[static_cast<std::size_t>(idx[j])];
          d = train_step(ckpt.model, ckpt.bank, x, y, cfg, ckpt.optimizer, lr);
        } else {
          Rng noise_rng = derive_rng(cfg.seed, {4, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(steps)});
          d = train_unsupervised_step(ckpt.model, ckpt.bank, x, cfg, ckpt.optimizer, lr, noise_rng);
        }
      } catch (const Error& e) {
        throw Error(e.kind(), std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(steps) + ")");
      }
      d.epoch = epoch;
      d.step = steps++;
      ep.loss += d.loss;
      ep.mle += d.mle;
      ep.proto_contrast += d.proto_contrast;
      if (log) log->steps.push_back(d);
    }
    ep.loss /= steps;
    ep.mle /= steps;
    ep.proto_contrast /= steps;
    ckpt.epoch = epoch + 1;
    ckpt.optimizer.epoch = ckpt.epoch;

    if (eval && eval->id_test && eval->ood_test && eval->every > 0 &&
        (ckpt.epoch % eval->every == 0 || ckpt.epoch == cfg.epochs)) {
      const DetectionSummary s = evaluate_detection(ckpt, data, *eval->id_test, *eval->ood_test, eval->knn_k);
      ep.eval_auroc_mahalanobis = s.auroc_mahalanobis;
      ep.eval_auroc_knn = s.auroc_knn;
    }
    if (log) log->epochs.push_back(ep);
  }
}

TrainResult train(const TrainConfig& config, const EmbeddingBatch& data, const EvalSplit* eval) {
  int classes = config.classes;
  if (config.mode == TrainMode::Supervised) {
    if (!data.labeled()) throw Error(ErrorKind::InvalidInput, "supervised training needs labeled data");
    const int max_label = *std::max_element(data.labels.begin(), data.labels.end());
    if (classes == 0) classes = max_label + 1;
    if (max_label >= classes) throw Error(ErrorKind::InvalidInput, "label exceeds configured class count");
  }
  TrainResult r;
  r.checkpoint = initialize(config, data.dim(), classes);
  run_epochs(r.checkpoint, data, config.epochs, &r.log, eval);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

GaussianFit fit_features(const Checkpoint& ckpt, const EmbeddingBatch& train) {
  const ForwardResult f = forward(ckpt.model, train.values);
  const bool sup = ckpt.config.mode == TrainMode::Supervised && train.labeled();
  const std::vector<int> labels = sup ? train.labels : zero_labels(train.size());
  return fit_gaussian(f.h, labels, std::nullopt, ckpt.config.mahalanobis_normalize);
}

DetectionSummary evaluate_detection(const Checkpoint& ckpt, const EmbeddingBatch& train, const EmbeddingBatch& id_test,
                                    const EmbeddingBatch& ood_test, int knn_k) {
  const ForwardResult tr = forward(ckpt.model, train.values);
  const ForwardResult id = forward(ckpt.model, id_test.values);
  const ForwardResult ood = forward(ckpt.model, ood_test.values);
  const bool sup = ckpt.config.mode == TrainMode::Supervised && train.labeled();
  const GaussianFit fit = fit_gaussian(tr.h, sup ? train.labels : zero_labels(train.size()), std::nullopt,
                                       ckpt.config.mahalanobis_normalize);

  DetectionSummary s;
  s.id_mahalanobis = mahalanobis_scores(fit, id.h);
  s.ood_mahalanobis = mahalanobis_scores(fit, ood.h);
  s.id_knn = knn_scores(tr.z, id.z, knn_k);
  s.ood_knn = knn_scores(tr.z, ood.z, knn_k);
  s.id_posterior = posterior_scores(id.z, ckpt.bank, ckpt.config.tau);
  s.ood_posterior = posterior_scores(ood.z, ckpt.bank, ckpt.config.tau);
  s.auroc_mahalanobis = auroc(s.id_mahalanobis, s.ood_mahalanobis);
  s.fpr95_mahalanobis = fpr_at_tpr(s.id_mahalanobis, s.ood_mahalanobis);
  s.auroc_knn = auroc(s.id_knn, s.ood_knn);
  s.fpr95_knn = fpr_at_tpr(s.id_knn, s.ood_knn);
  s.auroc_posterior = auroc(s.id_posterior, s.ood_posterior);
  s.compactness_deg = compactness(id.z, ckpt.bank);
  s.far_id_fraction = far_id_fraction(id.z, ckpt.bank);
  return s;
}

}  // namespace palm
