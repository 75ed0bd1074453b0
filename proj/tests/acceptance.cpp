// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if any fail.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "palm/cli.hpp"
#include "palm/geometry.hpp"
#include "palm/io.hpp"
#include "palm/losses.hpp"
#include "palm/metrics.hpp"
#include "palm/prototypes.hpp"
#include "support.hpp"

using namespace palm;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 3;
constexpr int kEpochs = 100;
// Fixed from the pilot (tools/palm_pilot): the lowest Mahalanobis or KNN AUROC the default
// config reached over seeds 0-2 was 0.8547.
constexpr double kDetectionThreshold = 0.85;

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

void gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const oracle::GradientCase gc = oracle::random_gradient_case(rng);
    const Objective base = supervised_objective(gc.model, gc.x, gc.labels, gc.bank, gc.config);
    const auto f = [&](const Vector& p) {
      MlpModel m = gc.model;
      set_parameters(m, p);
      return supervised_objective(m, gc.x, gc.labels, gc.bank, gc.config, &base.table, false).value;
    };
    const Vector fd = oracle::central_difference(f, get_parameters(gc.model), 1e-5);
    worst = std::max(worst, oracle::max_relative_error(get_parameters(base.grads), fd, 1e-7));
  }
  const double secs = seconds_since(t0);
  verdict(1, worst <= 1e-4 && secs < 10.0, fmt("20 instances, worst rel err %.3g (<= 1e-4), %.2fs (< 10s)", worst, secs));
}

void sinkhorn_polytope() {
  Rng rng(7);
  double worst_converged = 0.0;
  std::vector<double> three;
  for (int t = 0; t < 100; ++t) {
    const int k = oracle::uniform_int(rng, 1, 8), b = oracle::uniform_int(rng, 1, 64);
    const Matrix p = oracle::random_unit_rows(k, 8, rng), z = oracle::random_unit_rows(b, 8, rng);
    const AssignmentMatrix conv = sinkhorn_assign(p, z, {0.05, 0});
    double dev = 0.0;
    dev = std::max(dev, (conv.weights.rowwise().sum().array() - 1.0 / k).abs().maxCoeff());
    dev = std::max(dev, (conv.weights.colwise().sum().array() - 1.0 / b).abs().maxCoeff());
    worst_converged = std::max(worst_converged, dev);
    three.push_back(sinkhorn_assign(p, z, {0.05, 3}).residual);
  }
  std::sort(three.begin(), three.end());
  const double worst_three = three.back();
  const auto under = std::count_if(three.begin(), three.end(), [](double r) { return r < 0.05; });
  verdict(2, worst_converged <= 1e-6 && worst_three < 0.05,
          fmt("converged marginal dev %.3g (<= 1e-6), 3-sweep residual max %.3g (< 0.05), median %.3g, %d/100 under 0.05",
              worst_converged, worst_three, three[50], static_cast<int>(under)));
}

void prototype_invariants() {
  Rng rng(11);
  PrototypeBank bank = init_uniform(3, 4, 6, 0.9, rng);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    bank.set_alpha(oracle::uniform_real(rng, 0.0, 1.0));
    const int batch = oracle::uniform_int(rng, 1, 16);
    const Matrix z = oracle::random_unit_rows(batch, 6, rng);
    std::vector<int> y(static_cast<std::size_t>(batch));
    for (auto& v : y) v = oracle::uniform_int(rng, 0, 2);
    AssignmentOptions opts;
    opts.k_top = oracle::uniform_int(rng, 1, 4);
    bank = detach(ema_update(bank, z, y, build_weight_table(z, y, bank, opts)));
    worst = std::max(worst, (bank.prototypes().rowwise().norm().array() - 1.0).abs().maxCoeff());
  }

  const PrototypeBank frozen = init_uniform(3, 2, 5, 1.0, rng);
  const Matrix z = oracle::random_unit_rows(10, 5, rng);
  std::vector<int> y(10);
  for (int i = 0; i < 10; ++i) y[static_cast<std::size_t>(i)] = i % 3;
  AssignmentOptions opts;
  opts.k_top = 2;
  const WeightTable table = build_weight_table(z, y, frozen, opts);
  const bool identical = ema_update(frozen, z, y, table).prototypes() == frozen.prototypes();

  const LossOutput pc = proto_contrast_loss(frozen, 0.5);
  const bool zero_grad = pc.grad_z.rows() == 0 &&
                         palm_loss(z, y, frozen, table, 0.1, 0.5, 1.0).grad_z == palm_loss(z, y, frozen, table, 0.1, 0.5, 0.0).grad_z;
  verdict(3, worst <= 1e-9 && identical && zero_grad,
          fmt("norm drift %.3g over 1000 updates (<= 1e-9), alpha=1 identical: %s, detached contrast grad zero: %s", worst,
              identical ? "yes" : "no", zero_grad ? "yes" : "no"));
}

void metric_oracles() {
  Rng rng(13);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(static_cast<std::size_t>(oracle::uniform_int(rng, 1, 20)));
    std::vector<double> b(static_cast<std::size_t>(oracle::uniform_int(rng, 1, 20)));
    for (auto& v : a) v = oracle::uniform_int(rng, 0, 8) * 0.25;
    for (auto& v : b) v = oracle::uniform_int(rng, 0, 8) * 0.25;
    if (auroc(a, b) != oracle::pair_auroc(a, b)) ++mismatches;
    if (fpr_at_tpr(a, b, 0.95) != oracle::sweep_fpr(a, b, 0.95)) ++mismatches;
    if (auroc(a, b) + auroc(b, a) != 1.0) ++mismatches;
  }
  verdict(4, mismatches == 0, fmt("%d mismatches over 200 cases", mismatches));
}

struct SeedRuns {
  std::vector<DetectionSummary> summaries;
  std::vector<double> seconds;
  std::vector<double> first_loss, last_loss;
};

SeedRuns run_seeds(const std::function<void(TrainConfig&)>& tweak, bool unlabeled = false) {
  SeedRuns r;
  for (int seed = 0; seed < kSeeds; ++seed) {
    SyntheticSpec spec;
    spec.seed = static_cast<std::uint64_t>(seed);
    const SyntheticDataset ds = gen_synthetic(spec);
    TrainConfig cfg;
    cfg.epochs = kEpochs;
    cfg.seed = static_cast<std::uint64_t>(seed);
    tweak(cfg);
    EmbeddingBatch train_data = ds.id_train;
    if (unlabeled) train_data.labels.clear();
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult tr = train(cfg, train_data);
    r.seconds.push_back(seconds_since(t0));
    r.first_loss.push_back(tr.log.epochs.empty() ? 0.0 : tr.log.epochs.front().loss);
    r.last_loss.push_back(tr.log.epochs.empty() ? 0.0 : tr.log.epochs.back().loss);
    r.summaries.push_back(evaluate_detection(tr.checkpoint, train_data, ds.id_test, ds.ood_test, 10));
  }
  return r;
}

std::vector<double> collect(const SeedRuns& r, double DetectionSummary::*field) {
  std::vector<double> v;
  for (const auto& s : r.summaries) v.push_back(s.*field);
  return v;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.4f", x);
  return s;
}

void detection_criteria() {
  const SeedRuns base = run_seeds([](TrainConfig&) {});
  const auto maha = collect(base, &DetectionSummary::auroc_mahalanobis);
  const auto knn = collect(base, &DetectionSummary::auroc_knn);
  bool ok = true;
  for (std::size_t i = 0; i < maha.size(); ++i) ok = ok && maha[i] >= kDetectionThreshold && knn[i] >= kDetectionThreshold;
  double slowest = 0.0;
  for (double s : base.seconds) slowest = std::max(slowest, s);
  ok = ok && slowest < 120.0;
  verdict(5, ok, fmt("T=%.2f, Mahalanobis %s, KNN %s, slowest seed %.1fs (< 120s)", kDetectionThreshold,
                     list(maha).c_str(), list(knn).c_str(), slowest));

  const SeedRuns k4 = run_seeds([](TrainConfig& c) { c.prototypes_per_class = 4, c.k_top = 3; });
  const SeedRuns k1 = run_seeds([](TrainConfig& c) { c.prototypes_per_class = 1, c.k_top = 1; });
  const double c4 = mean(collect(k4, &DetectionSummary::compactness_deg));
  const double c1 = mean(collect(k1, &DetectionSummary::compactness_deg));
  const double m4 = mean(collect(k4, &DetectionSummary::auroc_mahalanobis));
  const double m1 = mean(collect(k1, &DetectionSummary::auroc_mahalanobis));
  const double n4 = mean(collect(k4, &DetectionSummary::auroc_knn));
  const double n1 = mean(collect(k1, &DetectionSummary::auroc_knn));
  verdict(6, c4 <= c1 && m4 >= m1 && n4 >= n1,
          fmt("compactness K4 %.2f vs K1 %.2f deg, Mahalanobis AUROC %.4f vs %.4f, KNN AUROC %.4f vs %.4f", c4, c1, m4, m1,
              n4, n1));

  const SeedRuns hard = run_seeds([](TrainConfig& c) { c.assignment_mode = AssignmentMode::Hard; });
  const SeedRuns no_ema = run_seeds([](TrainConfig& c) { c.ema_enabled = false; });
  bool finite = true;
  for (const SeedRuns* r : {&hard, &no_ema})
    for (std::size_t i = 0; i < r->last_loss.size(); ++i)
      finite = finite && std::isfinite(r->first_loss[i]) && std::isfinite(r->last_loss[i]);
  const double d = mean(maha);
  const double h = mean(collect(hard, &DetectionSummary::auroc_mahalanobis));
  const double e = mean(collect(no_ema, &DetectionSummary::auroc_mahalanobis));
  // Noise: two standard errors of the default's mean over seeds.
  const double noise = 2.0 * standard_error(maha);
  const bool worse_than_both = d < h - noise && d < e - noise;
  verdict(7, finite && !worse_than_both,
          fmt("finite losses: %s, mean Mahalanobis AUROC default %.4f, hard %.4f, ema-off %.4f, noise %.4f", finite ? "yes" : "no",
              d, h, e, noise));
}

int cli_code(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  return cli::run(args, out, err);
}

void determinism_and_formats() {
  SyntheticSpec spec;
  spec.seed = 9;
  const SyntheticDataset ds = gen_synthetic(spec);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 9;
  const auto build = [&] {
    io::ModelFile m{train(cfg, ds.id_train).checkpoint, std::nullopt, std::nullopt};
    m.fit = fit_features(m.checkpoint, ds.id_train);
    m.knn_reference = forward(m.checkpoint.model, ds.id_train.values).z;
    return io::encode_model(m);
  };
  const io::Bytes a = build(), b = build();
  const bool deterministic = a == b;
  const bool model_rt = io::encode_model(io::decode_model(a)) == a;
  const io::Bytes emb = io::encode_embeddings(ds.id_train);
  EmbeddingBatch unlabeled = ds.ood_test;
  const io::Bytes emb_u = io::encode_embeddings(unlabeled);
  const bool emb_rt = io::encode_embeddings(io::decode_embeddings(emb)) == emb &&
                      io::encode_embeddings(io::decode_embeddings(emb_u)) == emb_u;

  const fs::path d = fs::temp_directory_path() / "palm_acceptance";
  fs::remove_all(d);
  fs::create_directories(d);
  const auto p = [&](const char* f) { return (d / f).string(); };
  std::ofstream(d / "cfg.json") << R"({"epochs": 2, "prototypes_per_class": 2, "k_top": 2})";
  std::ofstream(d / "plain.csv") << "0.1,0.2\n0.3,0.4\n";
  bool codes = true;
  const auto expect = [&](int want, const std::vector<std::string>& args) {
    const int got = cli_code(args);
    if (got != want) {
      std::printf("  cli %s: exit %d, expected %d\n", args.empty() ? "(none)" : args[0].c_str(), got, want);
      codes = false;
    }
  };
  expect(2, {});
  expect(0, {"--help"});
  expect(0, {"gen", "--out", p("syn"), "--seed", "1"});
  expect(2, {"gen"});
  expect(0, {"import", "--csv", p("plain.csv"), "--out", p("plain.palm")});
  expect(2, {"import", "--csv", p("missing.csv"), "--out", p("x.palm")});
  expect(0, {"train", "--config", p("cfg.json"), "--train", p("syn_train.palm"), "--out", p("m.bin")});
  expect(2, {"train", "--train", p("plain.palm"), "--out", p("m2.bin")});
  expect(0, {"score", "--model", p("m.bin"), "--data", p("syn_test.palm"), "--out", p("id.csv")});
  expect(0, {"score", "--model", p("m.bin"), "--data", p("syn_ood.palm"), "--metric", "knn", "--out", p("ood.csv")});
  expect(2, {"score", "--model", p("m.bin"), "--data", p("syn_ood.palm"), "--metric", "bogus", "--out", p("x.csv")});
  io::ModelFile sing = io::read_model(d / "m.bin");
  sing.fit->covariance.setZero();
  sing.fit->shrinkage = 0.0;
  io::write_file_atomic(d / "sing.bin", io::encode_model(sing));
  expect(3, {"score", "--model", p("sing.bin"), "--data", p("syn_test.palm"), "--out", p("x.csv")});
  expect(0, {"eval", "--id", p("id.csv"), "--ood", p("ood.csv"), "--out", p("r.json")});
  expect(2, {"eval", "--id", p("id.csv"), "--ood", p("nope.csv"), "--out", p("r.json")});
  expect(0, {"hist", "--id", p("id.csv"), "--ood", p("ood.csv"), "--out", p("h.csv")});
  expect(2, {"hist", "--id", p("id.csv"), "--out", p("h.csv")});

  verdict(8, deterministic && model_rt && emb_rt && codes,
          fmt("bit-identical models: %s, model round trip: %s, embedding round trip: %s, cli exit codes: %s",
              deterministic ? "yes" : "no", model_rt ? "yes" : "no", emb_rt ? "yes" : "no", codes ? "yes" : "no"));
}

void unsupervised_smoke() {
  const SeedRuns trained = run_seeds([](TrainConfig& c) { c.mode = TrainMode::Unsupervised, c.epochs = 20; }, true);
  const SeedRuns untrained = run_seeds([](TrainConfig& c) { c.mode = TrainMode::Unsupervised, c.epochs = 0; }, true);
  bool decreased = true;
  for (std::size_t i = 0; i < trained.first_loss.size(); ++i)
    decreased = decreased && trained.last_loss[i] < trained.first_loss[i];
  const auto t = collect(trained, &DetectionSummary::auroc_mahalanobis);
  const auto u = collect(untrained, &DetectionSummary::auroc_mahalanobis);
  bool above = true;
  for (std::size_t i = 0; i < t.size(); ++i) above = above && t[i] > u[i];
  verdict(9, decreased && above,
          fmt("loss decreased every seed: %s, Mahalanobis AUROC trained %s vs untrained %s", decreased ? "yes" : "no",
              list(t).c_str(), list(u).c_str()));
}

}  // namespace

int main() {
  gradient_fidelity();
  sinkhorn_polytope();
  prototype_invariants();
  metric_oracles();
  detection_criteria();
  determinism_and_formats();
  unsupervised_smoke();
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
