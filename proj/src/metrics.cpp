#include "palm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "palm/common.hpp"

namespace palm {
namespace {

void require_nonempty(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::InvalidInput, "score lists must be nonempty");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(a.begin(), a.end(), finite) || !std::all_of(b.begin(), b.end(), finite)) {
    throw Error(ErrorKind::InvalidInput, "scores must be finite");
  }
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores);
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end());
  // Twice the Mann-Whitney U, kept integral so the tie rule is exact.
  std::int64_t twice_u = 0;
  for (double s : id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    twice_u += 2 * (lo - ood.begin()) + (hi - lo);
  }
  const auto pairs = static_cast<std::int64_t>(id_scores.size()) * static_cast<std::int64_t>(ood.size());
  return static_cast<double>(twice_u) / static_cast<double>(2 * pairs);
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr) {
  require_nonempty(id_scores, ood_scores);
  if (!(tpr > 0.0 && tpr <= 1.0)) throw Error(ErrorKind::InvalidInput, "tpr must be in (0, 1]");
  std::vector<double> id(id_scores.begin(), id_scores.end());
  std::sort(id.begin(), id.end(), std::greater<>());
  const auto n = static_cast<double>(id.size());
  // The small slack keeps 0.95 * 20 from rounding up to 20.
  auto need = static_cast<std::size_t>(std::ceil(tpr * n - 1e-9));
  need = std::clamp<std::size_t>(need, 1, id.size());
  const double threshold = id[need - 1];
  const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

OverlapHistogram overlap_histogram(std::span<const double> id_scores, std::span<const double> ood_scores, int bins) {
  require_nonempty(id_scores, ood_scores);
  if (bins < 1) throw Error(ErrorKind::InvalidInput, "bins must be >= 1");
  const auto [id_lo, id_hi] = std::minmax_element(id_scores.begin(), id_scores.end());
  const auto [ood_lo, ood_hi] = std::minmax_element(ood_scores.begin(), ood_scores.end());
  const double lo = std::min(*id_lo, *ood_lo);
  const double hi = std::max(*id_hi, *ood_hi);
  if (!(hi > lo)) throw Error(ErrorKind::DegenerateRange, "all scores are identical");

  OverlapHistogram out;
  out.p_id.assign(static_cast<std::size_t>(bins), 0.0);
  out.p_ood.assign(static_cast<std::size_t>(bins), 0.0);
  for (int b = 0; b <= bins; ++b) out.edges.push_back(static_cast<double>(b) / bins);
  auto fill = [&](std::span<const double> s, std::vector<double>& p) {
    for (double v : s) {
      const double t = (v - lo) / (hi - lo);
      const int b = std::min(static_cast<int>(std::floor(t * bins)), bins - 1);
      p[static_cast<std::size_t>(b)] += 1.0;
    }
    for (double& x : p) x /= static_cast<double>(s.size());
  };
  fill(id_scores, out.p_id);
  fill(ood_scores, out.p_ood);
  for (int b = 0; b < bins; ++b) out.overlap += std::min(out.p_id[static_cast<std::size_t>(b)], out.p_ood[static_cast<std::size_t>(b)]);
  return out;
}

double overlap_area(std::span<const double> id_scores, std::span<const double> ood_scores, int bins) {
  return overlap_histogram(id_scores, ood_scores, bins).overlap;
}

void EvalReport::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(auroc)) throw Error(ErrorKind::InternalError, "auroc outside [0, 1]");
  if (!unit(fpr95)) throw Error(ErrorKind::InternalError, "fpr95 outside [0, 1]");
  // Summing bin minima can exceed 1 by rounding only.
  if (!(overlap_area >= 0.0 && overlap_area <= 1.0 + 1e-12)) throw Error(ErrorKind::InternalError, "overlap_area outside [0, 1]");
  if (compactness && !(*compactness >= 0.0 && *compactness <= 180.0)) {
    throw Error(ErrorKind::InternalError, "compactness outside [0, 180] degrees");
  }
  if (far_id_fraction && !unit(*far_id_fraction)) throw Error(ErrorKind::InternalError, "far_id_fraction outside [0, 1]");
  if (n_id < 1 || n_ood < 1) throw Error(ErrorKind::InternalError, "counts must be positive");
}

std::string EvalReport::to_json() const {
  validate();
  nlohmann::json j;
  j["auroc"] = auroc;
  j["fpr95"] = fpr95;
  j["overlap_area"] = overlap_area;
  if (compactness) j["compactness_deg"] = *compactness;
  if (far_id_fraction) j["far_id_fraction"] = *far_id_fraction;
  j["n_id"] = n_id;
  j["n_ood"] = n_ood;
  if (config_hash) j["config_hash"] = *config_hash;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.auroc = j.at("auroc").get<double>();
    r.fpr95 = j.at("fpr95").get<double>();
    r.overlap_area = j.at("overlap_area").get<double>();
    if (j.contains("compactness_deg")) r.compactness = j["compactness_deg"].get<double>();
    if (j.contains("far_id_fraction")) r.far_id_fraction = j["far_id_fraction"].get<double>();
    r.n_id = j.at("n_id").get<std::int64_t>();
    r.n_ood = j.at("n_ood").get<std::int64_t>();
    if (j.contains("config_hash")) r.config_hash = j["config_hash"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("bad report JSON: ") + e.what());
  }
  r.validate();
  return r;
}

EvalReport make_report(std::span<const double> id_scores, std::span<const double> ood_scores, int bins,
                       std::optional<double> compactness_deg, std::optional<double> far_id,
                       std::optional<std::string> config_hash) {
  EvalReport r;
  r.auroc = auroc(id_scores, ood_scores);
  r.fpr95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
  r.overlap_area = overlap_area(id_scores, ood_scores, bins);
  r.compactness = compactness_deg;
  r.far_id_fraction = far_id;
  r.n_id = static_cast<std::int64_t>(id_scores.size());
  r.n_ood = static_cast<std::int64_t>(ood_scores.size());
  r.config_hash = std::move(config_hash);
  r.validate();
  return r;
}

}  // namespace palm
