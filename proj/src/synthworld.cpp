#include "vmap/synthworld.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace vmap {

namespace {

struct CamBasis {
  Vec3 right, down, forward;
};

CamBasis camera_basis(const CameraSpec& c) {
  double cy = std::cos(c.yaw), sy = std::sin(c.yaw);
  double cp = std::cos(c.pitch), sp = std::sin(c.pitch);
  Vec3 forward{cp * cy, cp * sy, -sp};
  Vec3 up_world{0, 0, 1};
  Vec3 right = forward.cross(up_world).normalized();
  Vec3 down = forward.cross(right);
  if (c.roll != 0.0) {
    double cr = std::cos(c.roll), sr = std::sin(c.roll);
    Vec3 r2 = right * cr + down * sr;
    Vec3 d2 = down * cr - right * sr;
    right = r2;
    down = d2;
  }
  return {right, down, forward};
}

uint64_t hash_mix(uint64_t a) {
  a ^= a >> 33;
  a *= 0xff51afd7ed558ccdULL;
  a ^= a >> 33;
  a *= 0xc4ceb9fe1a85ec53ULL;
  a ^= a >> 33;
  return a;
}

// Value noise in [-1, 1] on an integer lattice, deterministic per seed.
double lattice_noise(uint64_t seed, int64_t ix, int64_t iy) {
  uint64_t h = hash_mix(seed ^ hash_mix(static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ULL ^
                                        static_cast<uint64_t>(iy) + 0x632be59bd9b4e019ULL));
  return static_cast<double>(h & 0xffffff) / double(0xffffff) * 2.0 - 1.0;
}

Vec2 rot(const Vec2& p, double c, double s) { return {c * p.x - s * p.y, s * p.x + c * p.y}; }

}  // namespace

bool project_point(const CameraSpec& cam, const Vec3& world, double& px, double& py, double near) {
  CamBasis b = camera_basis(cam);
  Vec3 v = world - cam.position;
  double z = v.dot(b.forward);
  if (z <= near) return false;
  px = cam.cx + cam.focal * v.dot(b.right) / z;
  py = cam.cy + cam.focal * v.dot(b.down) / z;
  return true;
}

bool element_visible(const MapElement& el, const CameraSpec& cam, double min_frac) {
  if (el.points.empty()) return false;
  int in = 0;
  for (const Vec2& p : el.points) {
    double px, py;
    if (project_point(cam, {p.x, p.y, 0.0}, px, py) && px >= 0 && px < cam.width && py >= 0 &&
        py < cam.height)
      ++in;
  }
  return in >= min_frac * static_cast<double>(el.points.size());
}

void generate_scene(std::uint64_t seed, const SceneParams& params, VectorizedMap& gt,
                    std::array<CameraSpec, 4>& cameras) {
  std::mt19937_64 rng(hash_mix(seed + 0x5eedULL));
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  int lanes_ns = uniform_int(params.min_lanes, params.max_lanes);
  int lanes_ew = uniform_int(params.min_lanes, params.max_lanes);
  double off_ns = uniform(-params.curvature_jitter, params.curvature_jitter);
  double off_ew = uniform(-params.curvature_jitter, params.curvature_jitter);
  double theta = uniform(-0.18, 0.18);  // global rotation, radians
  double hw_ns = lanes_ns * params.lane_width;
  double hw_ew = lanes_ew * params.lane_width;
  double extent = 1.5 * std::max(params.range.x_max, params.range.y_max);

  double ct = std::cos(theta), st = std::sin(theta);
  auto xf = [&](double x, double y) { return rot({x, y}, ct, st); };

  std::vector<MapElement> raw;
  auto add = [&](ElementClass cls, bool closed, std::vector<Vec2> pts) {
    MapElement el;
    el.cls = cls;
    el.is_closed = closed;
    for (Vec2& p : pts) p = xf(p.x, p.y);
    el.points = std::move(pts);
    raw.push_back(std::move(el));
  };

  // Each entry: (axis sign, lanes, this road's lateral offset + half width,
  // crossing anchor from the other road's edge). Vertical approaches first.
  struct Approach {
    bool vertical;
    double dir;  // +1 north/east, -1 south/west
  };
  const Approach approaches[4] = {{true, 1.0}, {true, -1.0}, {false, 1.0}, {false, -1.0}};

  for (const Approach& a : approaches) {
    double hw = a.vertical ? hw_ns : hw_ew;
    double off = a.vertical ? off_ns : off_ew;
    double other_hw = a.vertical ? hw_ew : hw_ns;
    double other_off = a.vertical ? off_ew : off_ns;
    int lanes = a.vertical ? lanes_ns : lanes_ew;
    double core_edge = std::abs(other_off) + other_hw;  // road band of the other axis
    double y0 = a.dir > 0 ? core_edge : -core_edge;
    double y1 = a.dir * extent;

    auto emit = [&](ElementClass cls, bool closed, std::vector<Vec2> local) {
      // Local frame: x across the road, y along the approach axis.
      std::vector<Vec2> pts;
      pts.reserve(local.size());
      for (const Vec2& p : local) {
        double wx = a.vertical ? off + p.x : p.y;
        double wy = a.vertical ? p.y : off + p.x;
        pts.push_back({wx, wy});
      }
      add(cls, closed, std::move(pts));
    };

    // Road-edge boundaries, one per side.
    emit(ElementClass::boundary, false, {{-hw, y0}, {-hw, y1}});
    emit(ElementClass::boundary, false, {{hw, y0}, {hw, y1}});

    // Dividers between same-direction lanes.
    double marking_start = a.dir * (std::abs(y0) + params.crossing_width + 1.0);
    for (int k = 1; k < lanes; ++k) {
      double x = k * params.lane_width;
      emit(ElementClass::divider, false, {{x, marking_start}, {x, y1}});
      emit(ElementClass::divider, false, {{-x, marking_start}, {-x, y1}});
    }

    // One pedestrian crossing spanning the road just outside the core.
    double c0 = a.dir * (std::abs(y0) + 0.4);
    double c1 = c0 + a.dir * params.crossing_width;
    emit(ElementClass::ped_crossing, true, {{-hw, c0}, {hw, c0}, {hw, c1}, {-hw, c1}});
  }

  gt.elements.clear();
  gt.range = params.range;
  for (const MapElement& el : raw) {
    auto pieces = clip_element(el, params.range, params.points_per_element);
    for (auto& p : pieces) gt.elements.push_back(std::move(p));
  }

  // Four corner cameras looking inward, 90 degree yaw increments.
  double d = params.camera_distance;
  double pitch = params.camera_pitch_deg * M_PI / 180.0;
  const double corner_x[4] = {d, -d, -d, d};
  const double corner_y[4] = {d, d, -d, -d};
  for (int i = 0; i < 4; ++i) {
    CameraSpec& c = cameras[i];
    c.position = {corner_x[i], corner_y[i], params.camera_height};
    c.yaw = std::atan2(-corner_y[i], -corner_x[i]);
    c.pitch = pitch;
    c.roll = 0.0;
    c.width = c.height = params.image_size;
    c.focal = 0.6 * params.image_size;
    c.cx = 0.5 * params.image_size;
    c.cy = 0.5 * params.image_size;
  }
}

Image render_view(const VectorizedMap& gt, const CameraSpec& camera, const SceneParams& params) {
  if (camera.position.z <= 0.0)
    throw std::invalid_argument("render_view: camera must be above the ground plane");
  if (camera.pitch <= 0.0)
    throw std::invalid_argument("render_view: camera must look downward");

  CamBasis b = camera_basis(camera);
  Image img(camera.height, camera.width);
  uint64_t noise_seed = hash_mix(static_cast<uint64_t>(camera.position.x * 31.0) ^
                                 static_cast<uint64_t>(gt.elements.size() * 7 + 13));

  // Per-element bounding boxes for the marking lookup.
  struct Box {
    double x0, x1, y0, y1;
  };
  std::vector<Box> boxes(gt.elements.size());
  for (size_t i = 0; i < gt.elements.size(); ++i) {
    Box bb{1e18, -1e18, 1e18, -1e18};
    for (const Vec2& p : gt.elements[i].points) {
      bb.x0 = std::min(bb.x0, p.x);
      bb.x1 = std::max(bb.x1, p.x);
      bb.y0 = std::min(bb.y0, p.y);
      bb.y1 = std::max(bb.y1, p.y);
    }
    boxes[i] = bb;
  }

  const Rgb sky{150, 170, 190};
  const Rgb asphalt{86, 86, 92};
  Vec2 prev_ground{0, 0};
  bool prev_valid = false;

  for (int y = 0; y < camera.height; ++y) {
    prev_valid = false;
    for (int x = 0; x < camera.width; ++x) {
      Vec3 dir = b.forward + b.right * ((x + 0.5 - camera.cx) / camera.focal) +
                 b.down * ((y + 0.5 - camera.cy) / camera.focal);
      std::uint8_t* px = img.px(y, x);
      if (dir.z >= -1e-9) {
        px[0] = sky.r;
        px[1] = sky.g;
        px[2] = sky.b;
        prev_valid = false;
        continue;
      }
      double t = -camera.position.z / dir.z;
      Vec2 g{camera.position.x + t * dir.x, camera.position.y + t * dir.y};
      if (std::abs(g.x) > 400.0 || std::abs(g.y) > 400.0) {
        px[0] = sky.r;
        px[1] = sky.g;
        px[2] = sky.b;
        prev_valid = false;
        continue;
      }

      // Ground sample distance, used to keep thin markings visible far away.
      double gsd = prev_valid ? (g - prev_ground).norm() : 0.0;
      prev_ground = g;
      prev_valid = true;

      Rgb color = asphalt;
      double n = lattice_noise(noise_seed, static_cast<int64_t>(std::floor(g.x * 2.0)),
                               static_cast<int64_t>(std::floor(g.y * 2.0)));
      double shade = 1.0 + params.texture_noise * 0.35 * n;

      double best_margin = -1.0;
      for (size_t i = 0; i < gt.elements.size(); ++i) {
        const MapElement& el = gt.elements[i];
        double half_w = 0.5 * (el.cls == ElementClass::divider ? params.divider_width
                                                               : params.boundary_width);
        half_w = std::max(half_w, 0.6 * gsd);
        const Box& bb = boxes[i];
        if (g.x < bb.x0 - half_w || g.x > bb.x1 + half_w || g.y < bb.y0 - half_w ||
            g.y > bb.y1 + half_w)
          continue;
        if (el.cls == ElementClass::ped_crossing) {
          if (point_in_polygon(g, el.points)) {
            color = params.crossing_color;
            best_margin = 1e9;
          }
        } else {
          double dist = point_polyline_distance(g, el.points, el.is_closed);
          double margin = half_w - dist;
          if (margin > 0.0 && margin > best_margin) {
            color = el.cls == ElementClass::divider ? params.divider_color : params.boundary_color;
            best_margin = margin;
          }
        }
      }

      auto clamp8 = [](double v) {
        return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      };
      px[0] = clamp8(color.r * shade);
      px[1] = clamp8(color.g * shade);
      px[2] = clamp8(color.b * shade);
    }
  }
  return img;
}

SceneSample generate_sample(std::uint64_t seed, const SceneParams& params) {
  SceneSample s;
  s.seed = seed;
  generate_scene(seed, params, s.gt, s.cameras);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06llu", static_cast<unsigned long long>(seed));
  s.gt.scene_id = buf;
  for (int i = 0; i < 4; ++i) s.images[i] = render_view(s.gt, s.cameras[i], params);
  return s;
}

std::string cameras_to_json(const std::array<CameraSpec, 4>& cams) {
  nlohmann::json j = nlohmann::json::array();
  for (const CameraSpec& c : cams) {
    j.push_back({{"position", {c.position.x, c.position.y, c.position.z}},
                 {"yaw", c.yaw},
                 {"pitch", c.pitch},
                 {"roll", c.roll},
                 {"focal", c.focal},
                 {"cx", c.cx},
                 {"cy", c.cy},
                 {"height", c.height},
                 {"width", c.width}});
  }
  return j.dump(2);
}

std::array<CameraSpec, 4> cameras_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  std::array<CameraSpec, 4> cams;
  for (int i = 0; i < 4; ++i) {
    const auto& jc = j.at(i);
    CameraSpec& c = cams[i];
    c.position = {jc["position"][0], jc["position"][1], jc["position"][2]};
    c.yaw = jc["yaw"];
    c.pitch = jc["pitch"];
    c.roll = jc["roll"];
    c.focal = jc["focal"];
    c.cx = jc["cx"];
    c.cy = jc["cy"];
    c.height = jc["height"];
    c.width = jc["width"];
  }
  return cams;
}

DatasetManifest export_dataset(const std::vector<SceneSample>& samples,
                               const std::string& directory, double train_ratio) {
  fs::path root(directory);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root))
    throw std::runtime_error("export_dataset: cannot create directory " + directory);

  DatasetManifest m;
  for (const SceneSample& s : samples) {
    fs::path scene_dir = root / s.gt.scene_id;
    try {
      fs::create_directories(scene_dir);
      for (int i = 0; i < 4; ++i)
        write_ppm(s.images[i], (scene_dir / ("cam" + std::to_string(i) + ".ppm")).string());
      std::ofstream fm(scene_dir / "map.json");
      fm << map_to_json(s.gt);
      std::ofstream fc(scene_dir / "cameras.json");
      fc << cameras_to_json(s.cameras);
      if (!fm || !fc) throw std::runtime_error("export_dataset: write failed in " + scene_dir.string());
    } catch (...) {
      fs::remove_all(scene_dir, ec);
      throw;
    }
    m.scene_ids.push_back(s.gt.scene_id);
  }

  size_t n_train = static_cast<size_t>(std::floor(train_ratio * m.scene_ids.size()));
  for (size_t i = 0; i < m.scene_ids.size(); ++i)
    (i < n_train ? m.train_ids : m.val_ids).push_back(m.scene_ids[i]);

  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["scene_ids"] = m.scene_ids;
  j["split"] = {{"train", m.train_ids}, {"val", m.val_ids}};
  j["train_ratio"] = train_ratio;
  std::ofstream f(root / "manifest.json");
  f << j.dump(2);
  if (!f) throw std::runtime_error("export_dataset: cannot write manifest in " + directory);
  return m;
}

DatasetManifest load_manifest(const std::string& directory) {
  std::ifstream f(fs::path(directory) / "manifest.json");
  if (!f) throw std::runtime_error("load_manifest: cannot open manifest in " + directory);
  nlohmann::json j = nlohmann::json::parse(f);
  DatasetManifest m;
  m.format_version = j["format_version"];
  m.scene_ids = j["scene_ids"].get<std::vector<std::string>>();
  m.train_ids = j["split"]["train"].get<std::vector<std::string>>();
  m.val_ids = j["split"]["val"].get<std::vector<std::string>>();
  return m;
}

SceneSample load_scene(const std::string& directory, const std::string& scene_id) {
  fs::path dir = fs::path(directory) / scene_id;
  SceneSample s;
  for (int i = 0; i < 4; ++i) s.images[i] = read_ppm((dir / ("cam" + std::to_string(i) + ".ppm")).string());
  std::ifstream fm(dir / "map.json");
  if (!fm) throw std::runtime_error("load_scene: missing map.json in " + dir.string());
  std::string text((std::istreambuf_iterator<char>(fm)), std::istreambuf_iterator<char>());
  s.gt = map_from_json(text);
  std::ifstream fc(dir / "cameras.json");
  if (!fc) throw std::runtime_error("load_scene: missing cameras.json in " + dir.string());
  std::string ctext((std::istreambuf_iterator<char>(fc)), std::istreambuf_iterator<char>());
  s.cameras = cameras_from_json(ctext);
  return s;
}

}  // namespace vmap
