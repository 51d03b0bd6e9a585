#include "vmap/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace vmap {

double chamfer_distance(const Polyline& a, const Polyline& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty point set");
  double sum_ab = 0.0, sum_ba = 0.0;
  for (const Vec2& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& q : b) best = std::min(best, (p - q).norm());
    sum_ab += best;
  }
  for (const Vec2& q : b) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& p : a) best = std::min(best, (p - q).norm());
    sum_ba += best;
  }
  return 0.5 * sum_ab / static_cast<double>(a.size()) + 0.5 * sum_ba / static_cast<double>(b.size());
}

std::vector<bool> match_at_threshold(const std::vector<ScoredElement>& preds,
                                     const std::vector<Polyline>& gts, double tau) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return preds[static_cast<size_t>(a)].confidence > preds[static_cast<size_t>(b)].confidence;
  });
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<bool> tp(preds.size(), false);
  for (int idx : order) {
    const ScoredElement& p = preds[static_cast<size_t>(idx)];
    double best = std::numeric_limits<double>::infinity();
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      double d = chamfer_distance(p.points, gts[g]);
      if (d < best) {
        best = d;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best < tau) {
      gt_used[static_cast<size_t>(best_gt)] = true;
      tp[static_cast<size_t>(idx)] = true;
    }
  }
  return tp;
}

double average_precision(const std::vector<bool>& tp_flags, const std::vector<double>& scores,
                         int n_gt) {
  if (n_gt < 0) throw std::invalid_argument("average_precision: negative n_gt");
  if (n_gt == 0) {
    for (bool f : tp_flags)
      if (!f) return 0.0;  // any FP with no GT
    return 1.0;            // vacuous perfection
  }
  std::vector<int> order(tp_flags.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
  });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (int idx : order) {
    if (tp_flags[static_cast<size_t>(idx)]) ++tp;
    else ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }
  // Monotone nonincreasing precision envelope, integrated over recall steps.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double ap_over_thresholds(const std::vector<double>& per_tau_aps) {
  if (per_tau_aps.empty()) throw std::invalid_argument("ap_over_thresholds: empty threshold list");
  double s = 0.0;
  for (double a : per_tau_aps) s += a;
  return s / static_cast<double>(per_tau_aps.size());
}

double mean_ap(const std::map<int, double>& class_aps) {
  for (int c = 0; c < kNumClasses; ++c)
    if (!class_aps.count(c)) throw std::invalid_argument("mean_ap: missing class AP");
  if (class_aps.size() != kNumClasses) throw std::invalid_argument("mean_ap: unexpected class");
  return (class_aps.at(0) + class_aps.at(1) + class_aps.at(2)) / 3.0;
}

ApBreakdown evaluate(const std::vector<std::vector<ScoredElement>>& scene_preds,
                     const std::vector<VectorizedMap>& scene_gts, const EvalConfig& config) {
  if (scene_preds.size() != scene_gts.size())
    throw std::invalid_argument("evaluate: scene count mismatch");
  for (size_t i = 1; i < config.thresholds.size(); ++i)
    if (config.thresholds[i] <= config.thresholds[i - 1])
      throw std::invalid_argument("evaluate: thresholds must be strictly increasing");

  ApBreakdown out;
  out.n_scenes = static_cast<int>(scene_gts.size());
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> per_tau;
    for (double tau : config.thresholds) {
      std::vector<bool> flags;
      std::vector<double> scores;
      int n_gt = 0;
      for (size_t s = 0; s < scene_gts.size(); ++s) {
        std::vector<ScoredElement> preds;
        for (const ScoredElement& p : scene_preds[s])
          if (static_cast<int>(p.cls) == c && p.confidence >= config.confidence_floor)
            preds.push_back(p);
        std::vector<Polyline> gts;
        for (const MapElement& g : scene_gts[s].elements)
          if (static_cast<int>(g.cls) == c) gts.push_back(g.points);
        n_gt += static_cast<int>(gts.size());
        std::vector<bool> tp = match_at_threshold(preds, gts, tau);
        for (size_t k = 0; k < preds.size(); ++k) {
          flags.push_back(tp[k]);
          scores.push_back(preds[k].confidence);
        }
      }
      per_tau.push_back(average_precision(flags, scores, n_gt));
    }
    out.per_class_per_tau[c] = per_tau;
    out.per_class[c] = ap_over_thresholds(per_tau);
  }
  out.map = mean_ap(out.per_class);
  return out;
}

std::string report_to_json(const ApBreakdown& ap, const EvalConfig& config) {
  nlohmann::json j;
  j["mAP"] = ap.map;
  j["n_scenes"] = ap.n_scenes;
  j["config"] = {{"thresholds", config.thresholds}, {"confidence_floor", config.confidence_floor}};
  for (const auto& [c, per_tau] : ap.per_class_per_tau) {
    nlohmann::json jc;
    for (size_t i = 0; i < per_tau.size(); ++i) {
      char key[32];
      std::snprintf(key, sizeof(key), "tau_%.1f", config.thresholds[i]);
      jc[key] = per_tau[i];
    }
    jc["mean"] = ap.per_class.at(c);
    j["per_class"][class_name(static_cast<ElementClass>(c))] = jc;
  }
  return j.dump(2);
}

std::string report_table_row(const ApBreakdown& ap, const std::string& label) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s AP_ped=%.3f AP_divider=%.3f AP_boundary=%.3f mAP=%.3f",
                label.c_str(), ap.per_class.at(0), ap.per_class.at(1), ap.per_class.at(2), ap.map);
  return buf;
}

}  // namespace vmap
