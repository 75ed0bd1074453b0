// Brute-force pilot over the synthetic spec: prints the numbers the acceptance thresholds
// were chosen from. Usage: palm_pilot [seeds=3] [epochs=100] [alpha=0.999]
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "palm/geometry.hpp"
#include "palm/metrics.hpp"
#include "palm/scoring.hpp"
#include "palm/trainer.hpp"

namespace {

using namespace palm;

void report(const char* name, const TrainConfig& cfg, const SyntheticDataset& ds) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg, ds.id_train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const DetectionSummary s = evaluate_detection(r.checkpoint, ds.id_train, ds.id_test, ds.ood_test, 10);
  std::printf("%-14s seed=%llu maha=%.4f knn=%.4f post=%.4f compact=%.2f loss %.4f -> %.4f (%.1fs)\n", name,
              static_cast<unsigned long long>(cfg.seed), s.auroc_mahalanobis, s.auroc_knn, s.auroc_posterior,
              s.compactness_deg, r.log.epochs.front().loss, r.log.epochs.back().loss, secs);
}

}  // namespace

int main(int argc, char** argv) {
  const int seeds = argc > 1 ? std::atoi(argv[1]) : 3;
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 100;
  const double alpha = argc > 3 ? std::atof(argv[3]) : 0.999;
  for (int seed = 0; seed < seeds; ++seed) {
    SyntheticSpec spec;
    spec.seed = static_cast<std::uint64_t>(seed);
    const SyntheticDataset ds = gen_synthetic(spec);

    const auto& tr = ds.id_train;
    const GaussianFit raw_fit = fit_gaussian(tr.values, tr.labels);
    std::printf("%-14s seed=%d maha=%.4f knn=%.4f\n", "raw_input", seed,
                auroc(mahalanobis_scores(raw_fit, ds.id_test.values), mahalanobis_scores(raw_fit, ds.ood_test.values)),
                auroc(knn_scores(tr.values, ds.id_test.values, 10), knn_scores(tr.values, ds.ood_test.values, 10)));

    TrainConfig base;
    base.epochs = epochs;
    base.seed = static_cast<std::uint64_t>(seed);
    base.alpha = alpha;
    report("default", base, ds);

    TrainConfig k4 = base;
    k4.prototypes_per_class = 4;
    k4.k_top = 3;
    report("K4_top3", k4, ds);

    TrainConfig k1 = base;
    k1.prototypes_per_class = 1;
    k1.k_top = 1;
    report("K1", k1, ds);

    TrainConfig hard = base;
    hard.assignment_mode = AssignmentMode::Hard;
    report("hard", hard, ds);

    TrainConfig no_ema = base;
    no_ema.ema_enabled = false;
    report("ema_off", no_ema, ds);

    TrainConfig unsup = base;
    unsup.mode = TrainMode::Unsupervised;
    unsup.epochs = 20;
    report("unsup", unsup, ds);
    unsup.epochs = 0;
    const Checkpoint init = train(unsup, ds.id_train).checkpoint;
    const DetectionSummary s0 = evaluate_detection(init, ds.id_train, ds.id_test, ds.ood_test, 10);
    std::printf("%-14s seed=%d maha=%.4f\n", "unsup_init", seed, s0.auroc_mahalanobis);
  }
  return 0;
}
