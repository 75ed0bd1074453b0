#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace palm {

// All score inputs follow one orientation: larger means more in-distribution.

/// P(id > ood) over all pairs, ties counted 1/2.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Threshold = largest value accepting at least ceil(tpr * N_id) ID scores (accept is score >= threshold);
/// returns the fraction of OOD scores accepted.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr = 0.95);

struct OverlapHistogram {
  std::vector<double> edges;  ///< bins + 1 edges on the jointly min-max scaled axis [0, 1]
  std::vector<double> p_id;   ///< per-bin probability mass
  std::vector<double> p_ood;
  double overlap = 0.0;       ///< sum_b min(p_id, p_ood)
};

OverlapHistogram overlap_histogram(std::span<const double> id_scores, std::span<const double> ood_scores,
                                   int bins = 50);
double overlap_area(std::span<const double> id_scores, std::span<const double> ood_scores, int bins = 50);

struct EvalReport {
  double auroc = 0.0;
  double fpr95 = 0.0;
  double overlap_area = 0.0;
  std::optional<double> compactness;  ///< degrees
  std::optional<double> far_id_fraction;
  std::int64_t n_id = 0;
  std::int64_t n_ood = 0;
  std::optional<std::string> config_hash;

  /// Throws InternalError if a field is outside its range.
  void validate() const;
  /// Deterministic JSON with sorted keys; absent optionals are omitted.
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);

  bool operator==(const EvalReport&) const = default;
};

EvalReport make_report(std::span<const double> id_scores, std::span<const double> ood_scores, int bins = 50,
                       std::optional<double> compactness_deg = std::nullopt,
                       std::optional<double> far_id = std::nullopt,
                       std::optional<std::string> config_hash = std::nullopt);

}  // namespace palm
