#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vmap/evalkit.hpp"
#include "vmap/matching.hpp"
#include "vmap/netcore.hpp"
#include "vmap/synthworld.hpp"

namespace vmap {

struct OptimConfig {
  double learning_rate = 1e-3;
  std::string decay = "cosine";  // cosine | none
  int64_t steps = 1000;
  int batch_size = 2;
  int checkpoint_every = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct DataConfig {
  std::string dataset_dir;
  std::string split = "train";  // train | val | all
  std::uint64_t seed = 7;
};

struct RunConfig {
  std::string run_id = "run";
  ModelConfig model;
  LossWeights weights;
  EvalConfig eval;
  DataConfig data;
  OptimConfig optim;
};

std::string run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Root directory for run artifacts; honors the VMAP_RUNS_ROOT environment
/// variable, defaulting to ./runs.
std::string runs_root();
std::string run_dir(const RunConfig& c);

struct StepRecord {
  int64_t step = 0;
  double lr = 0.0;
  double total = 0.0, cls = 0.0, p2p = 0.0, dir = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<StepRecord> trace;
};

/// Adam with an optional cosine-decayed learning rate.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const OptimConfig& cfg) : cfg_(cfg) {}
  double lr_at(int64_t step) const;
  void step(ParamStore& params, int64_t step_index);

 private:
  OptimConfig cfg_;
};

/// Seeded training loop over the dataset split; writes checkpoints and a
/// JSONL loss trace under the run directory. Aborts with a diagnostic on a
/// non-finite loss. `resume_from` continues from a saved checkpoint.
TrainResult train(const RunConfig& config, const std::string& resume_from = "",
                  std::function<void(const StepRecord&)> on_step = nullptr);

/// Convert a raw network prediction into scored elements in meters.
/// Predictions whose argmax is no-object are discarded; confidence is the
/// maximum probability over the real classes.
std::vector<ScoredElement> prediction_to_elements(const Prediction& pred,
                                                  const PerceptionRange& range,
                                                  double confidence_floor);

struct EvalResult {
  ApBreakdown breakdown;
  double scenes_per_second = 0.0;
};

/// Run the model over a dataset split and score it. With `gt_as_predictions`
/// the ground truth is fed back as predictions (oracle bypass).
EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const RunConfig& config,
                               const std::string& split, bool gt_as_predictions = false);

/// Per-scene inference to a vectorized-map document (meters).
VectorizedMap infer_scene(MapNet& net, const SceneSample& scene, const EvalConfig& eval_cfg);

std::vector<std::string> split_ids(const DatasetManifest& manifest, const std::string& split);

}  // namespace vmap
