#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vmap/autodiff.hpp"
#include "vmap/image.hpp"
#include "vmap/map_model.hpp"

namespace vmap {

struct ModelConfig {
  std::string preset = "nano";  // nano | tiny (backbone depth/width)
  std::string neck = "panet";   // fpn | panet
  int embed_dim = 64;
  int decoder_layers = 2;
  int num_queries = 50;       // M
  int points_per_element = 20;  // N_e
  int bev_grid = 50;
  int fusion_kernel = 7;
  int image_size = 128;
  bool single_view = false;
  std::uint64_t param_seed = 1;

  std::array<int, 3> backbone_channels() const {
    if (preset == "tiny") return {64, 128, 256};
    return {32, 64, 128};
  }
  int neck_lateral_channels() const { return preset == "tiny" ? 48 : 24; }

  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

/// Multi-scale CNN feature with its stride relative to the input image.
struct FeatureMap {
  ad::Var data;  // [C, H, W]
  int stride = 1;
};

/// Final decoded instances: per-class logits (last slot = no-object) and
/// normalized BEV points in [0, 1].
struct Prediction {
  Tensor class_logits;  // [M, num_classes + 1]
  Tensor points;        // [M, N_e, 2]
};

struct PredictionVars {
  ad::Var logits;  // [M, C+1]
  ad::Var points;  // [M*N_e, 2], in [0,1]
};

struct ModelOutput {
  std::vector<PredictionVars> layers;  // one per decoder layer, last is final
};

/// Deterministic parameter registry; iteration follows creation order.
class ParamStore {
 public:
  ad::Parameter& create(const std::string& name, std::vector<int> shape);
  ad::Parameter& at(const std::string& name);
  const std::vector<std::unique_ptr<ad::Parameter>>& all() const { return params_; }
  void zero_grads();
  int64_t total_count() const;

 private:
  std::vector<std::unique_ptr<ad::Parameter>> params_;
  std::map<std::string, ad::Parameter*> index_;
};

/// The full image-to-map network: per-view backbone + neck, per-view spatial
/// transformer, multi-view fusion, hierarchical-query decoder.
class MapNet {
 public:
  explicit MapNet(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }

  /// Forward pass; accepts 1 view (single-view mode, absent views
  /// zero-filled) or 4 views. Throws std::invalid_argument otherwise.
  ModelOutput forward(ad::Tape& tape, const std::vector<const Image*>& views);

  /// Values-only forward of the final decoder layer.
  Prediction predict(const std::vector<const Image*>& views);

  // Exposed stages, mainly for testing.
  std::vector<FeatureMap> backbone_forward(ad::Tape& tape, const Image& image);
  FeatureMap neck_forward(ad::Tape& tape, const std::vector<FeatureMap>& pyramid);
  FeatureMap stn_forward(ad::Tape& tape, const FeatureMap& feature, int view_index);
  FeatureMap fuse_views(ad::Tape& tape, const std::vector<FeatureMap>& warped);
  ModelOutput decode_map(ad::Tape& tape, const FeatureMap& bev);

  /// Regressed STN affine for a view (for inspection); identity at init.
  ad::Var stn_theta(ad::Tape& tape, const FeatureMap& feature, int view_index);

 private:
  void build();
  ad::Var conv_block(ad::Tape& tape, const ad::Var& x, const std::string& name, int stride,
                     bool act = true);

  ModelConfig config_;
  ParamStore params_;
};

/// Versioned checkpoint container: config echo + named parameter tensors
/// (+ optional optimizer state). Loading with a mismatched config throws.
struct TrainState {
  int64_t step = 0;
  double best_map = -1.0;
};

void save_checkpoint(const std::string& path, MapNet& net, const TrainState* state = nullptr);
TrainState load_checkpoint(const std::string& path, MapNet& net);
ModelConfig peek_checkpoint_config(const std::string& path);

/// Convert raster bytes to a [3, H, W] tensor in [0, 1].
Tensor image_to_tensor(const Image& img);

}  // namespace vmap
