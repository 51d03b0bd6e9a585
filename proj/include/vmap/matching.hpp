#pragma once

#include <string>
#include <vector>

#include "vmap/autodiff.hpp"
#include "vmap/map_model.hpp"
#include "vmap/netcore.hpp"

namespace vmap {

/// Instance assignment pi (GT index -> prediction index, injective) plus the
/// per-pair optimal permutation index gamma and the pair costs.
struct MatchResult {
  std::vector<int> pred_for_gt;     // size N
  std::vector<int> perm_for_gt;     // size N, gamma index into the element's group
  std::vector<double> class_cost;   // size N
  std::vector<double> position_cost;  // size N
};

struct LossWeights {
  double alpha_c = 2.0;
  double alpha_p = 5.0;
  double alpha_d = 0.005;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct LayerLoss {
  double cls = 0.0, p2p = 0.0, dir = 0.0, total = 0.0;
};

struct LossReport {
  double total = 0.0, cls = 0.0, p2p = 0.0, dir = 0.0;
  std::vector<LayerLoss> per_layer;
};

/// -alpha (1 - p_t)^gamma log(p_t) for the target's probability. `probs` must
/// sum to 1 within 1e-6; p_t is clamped at 1e-12.
double focal_loss(const std::vector<double>& probs, int target_class, double alpha, double gamma);

/// sum_k |x_hat_k - x_perm(k)| + |y_hat_k - y_perm(k)|.
double manhattan_set_distance(const Polyline& pred, const Polyline& gt,
                              const std::vector<int>& perm);

/// Exhaustive minimum over the element's permutation group; ties go to the
/// lowest permutation index.
std::pair<int, double> best_permutation(const Polyline& pred_points, const MapElement& gt);

/// Focal class cost + best-permutation Manhattan position cost.
double instance_match_cost(const std::vector<double>& class_probs, const Polyline& pred_points,
                           const MapElement& gt, const LossWeights& w);

/// Minimum-cost injective row->column assignment (rows <= cols).
std::vector<int> hungarian_min(const std::vector<std::vector<double>>& cost);

/// Globally optimal one-to-one assignment of GT elements to predictions by
/// the Hungarian method. `literal_argmin` instead runs the independent
/// per-GT argmin (which may collide). Throws std::invalid_argument when
/// N > M. GT points must be normalized to the unit square.
MatchResult assign_instances(const Prediction& pred, const std::vector<MapElement>& gts,
                             const LossWeights& w, bool literal_argmin = false);

// Value-level losses (used by tests; the training path builds the same
// quantities as autodiff graph nodes).
double loss_cls_value(const Prediction& pred, const std::vector<MapElement>& gts,
                      const MatchResult& match, const LossWeights& w);
double loss_p2p_value(const Prediction& pred, const std::vector<MapElement>& gts,
                      const MatchResult& match);
double loss_dir_value(const Prediction& pred, const std::vector<MapElement>& gts,
                      const MatchResult& match);

/// Weighted training objective over all decoder layers (matching recomputed
/// per layer), as a differentiable graph node plus a numeric report. The
/// matching signature encodes every (pi, gamma) decision for stability
/// checks. Throws std::invalid_argument on negative weights.
ad::Var total_loss(ad::Tape& tape, const ModelOutput& output, const std::vector<MapElement>& gts,
                   const LossWeights& w, const ModelConfig& config, LossReport* report = nullptr,
                   std::string* match_signature = nullptr, bool literal_argmin = false);

/// GT elements with points affinely mapped to the unit square.
std::vector<MapElement> normalize_elements(const VectorizedMap& map);

Prediction prediction_values(const PredictionVars& vars, const ModelConfig& config);

}  // namespace vmap
