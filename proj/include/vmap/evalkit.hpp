#pragma once

#include <map>
#include <string>
#include <vector>

#include "vmap/map_model.hpp"

namespace vmap {

struct EvalConfig {
  std::vector<double> thresholds = {0.5, 1.0, 1.5};  // meters, strictly increasing
  PerceptionRange range;
  double confidence_floor = 0.0;
};

/// One scored prediction element (meters, resampled to N_e points).
struct ScoredElement {
  ElementClass cls = ElementClass::divider;
  Polyline points;
  bool is_closed = false;
  double confidence = 0.0;
};

struct ApBreakdown {
  // per class: AP per threshold plus the threshold-averaged AP
  std::map<int, std::vector<double>> per_class_per_tau;
  std::map<int, double> per_class;
  double map = 0.0;
  int n_scenes = 0;
};

/// Symmetric average Chamfer distance between two non-empty point sets.
double chamfer_distance(const Polyline& a, const Polyline& b);

/// Greedy matching by descending confidence: a prediction is a TP if its
/// Chamfer distance to the nearest unmatched GT is below tau.
std::vector<bool> match_at_threshold(const std::vector<ScoredElement>& preds,
                                     const std::vector<Polyline>& gts, double tau);

/// Area under the precision-recall curve with a monotone precision envelope
/// (all-point interpolation). flags/scores are parallel per-prediction
/// arrays; order need not be sorted.
double average_precision(const std::vector<bool>& tp_flags, const std::vector<double>& scores,
                         int n_gt);

/// Mean over the configured thresholds. Throws on empty input.
double ap_over_thresholds(const std::vector<double>& per_tau_aps);

/// (AP_ped + AP_divider + AP_boundary) / 3; requires exactly the 3 classes.
double mean_ap(const std::map<int, double>& class_aps);

/// Full evaluation over scenes: per scene one prediction list and one GT map.
ApBreakdown evaluate(const std::vector<std::vector<ScoredElement>>& scene_preds,
                     const std::vector<VectorizedMap>& scene_gts, const EvalConfig& config);

std::string report_to_json(const ApBreakdown& ap, const EvalConfig& config);
/// Flat row: AP_ped AP_divider AP_boundary mAP.
std::string report_table_row(const ApBreakdown& ap, const std::string& label);

}  // namespace vmap
