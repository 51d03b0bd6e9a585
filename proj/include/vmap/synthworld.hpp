#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vmap/image.hpp"
#include "vmap/map_model.hpp"

namespace vmap {

/// Pinhole roadside camera. Pitch is positive downward; yaw is the heading of
/// the optical axis in the ground plane.
struct CameraSpec {
  Vec3 position;           // meters, z up
  double yaw = 0.0;        // radians
  double pitch = 0.0;      // radians, > 0 looks down
  double roll = 0.0;       // radians
  double focal = 0.0;      // pixels
  double cx = 0.0, cy = 0.0;
  int height = 0, width = 0;
};

struct SceneSample {
  std::array<Image, 4> images;
  std::array<CameraSpec, 4> cameras;
  VectorizedMap gt;
  std::uint64_t seed = 0;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct SceneParams {
  double lane_width = 3.5;          // meters
  int min_lanes = 2, max_lanes = 3; // lanes per direction per approach
  double crossing_width = 4.0;      // meters
  double curvature_jitter = 1.5;    // lateral centerline offset amplitude, meters
  double texture_noise = 0.15;      // [0,1]
  int image_size = 128;
  int points_per_element = 20;      // N_e after resampling
  PerceptionRange range;
  double camera_height = 6.0;       // meters
  double camera_pitch_deg = 20.0;
  double camera_distance = 22.0;    // corner offset from center, meters
  double divider_width = 0.4;       // rendered marking widths, meters
  double boundary_width = 0.5;
  Rgb crossing_color{70, 110, 230};
  Rgb divider_color{235, 205, 60};
  Rgb boundary_color{60, 205, 90};
};

/// Project a world point through the camera. Returns false if the point is
/// behind the camera (depth below `near`).
bool project_point(const CameraSpec& cam, const Vec3& world, double& px, double& py,
                   double near = 0.1);

/// Deterministic 4-way intersection scene: ground-truth map (clipped to the
/// perception range, elements resampled to N_e) plus the 4-corner camera rig.
void generate_scene(std::uint64_t seed, const SceneParams& params, VectorizedMap& gt,
                    std::array<CameraSpec, 4>& cameras);

SceneSample generate_sample(std::uint64_t seed, const SceneParams& params);

/// Inverse-ray rasterization of the ground-plane map through the pinhole
/// model: textured road surface with class-colored markings. Throws
/// std::invalid_argument for a degenerate camera (z <= 0 or looking away
/// from the ground).
Image render_view(const VectorizedMap& gt, const CameraSpec& camera, const SceneParams& params);

/// True if at least `min_frac` of the element's vertices project inside the
/// camera image with positive depth.
bool element_visible(const MapElement& el, const CameraSpec& cam, double min_frac = 0.5);

struct DatasetManifest {
  std::vector<std::string> scene_ids;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  int format_version = 1;
};

/// Write scenes under `directory` (cam0..cam3.ppm + map.json + cameras.json
/// per scene) and a top-level manifest.json with a train/val split. Partial
/// scene writes are removed on failure.
DatasetManifest export_dataset(const std::vector<SceneSample>& samples,
                               const std::string& directory, double train_ratio = 0.75);

DatasetManifest load_manifest(const std::string& directory);
SceneSample load_scene(const std::string& directory, const std::string& scene_id);

std::array<CameraSpec, 4> cameras_from_json(const std::string& text);
std::string cameras_to_json(const std::array<CameraSpec, 4>& cams);

}  // namespace vmap
