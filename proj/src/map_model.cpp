#include "vmap/map_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace vmap {

Polyline normalize_points(const Polyline& points, const PerceptionRange& range) {
  Polyline out;
  out.reserve(points.size());
  for (const Vec2& p : points) {
    if (!range.contains(p))
      throw std::out_of_range("normalize_points: point outside perception range");
    out.push_back({(p.x - range.x_min) / range.width(), (p.y - range.y_min) / range.height()});
  }
  return out;
}

Polyline denormalize_points(const Polyline& points, const PerceptionRange& range) {
  Polyline out;
  out.reserve(points.size());
  for (const Vec2& p : points) {
    if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0)
      throw std::domain_error("denormalize_points: coordinate outside [0,1]");
    out.push_back({range.x_min + p.x * range.width(), range.y_min + p.y * range.height()});
  }
  return out;
}

PermutationGroup permutation_group(int n, bool is_closed) {
  if (n < 2) throw std::invalid_argument("permutation_group: need at least 2 points");
  PermutationGroup g;
  std::vector<int> ident(n);
  std::iota(ident.begin(), ident.end(), 0);
  if (!is_closed) {
    g.permutations.push_back(ident);
    std::vector<int> rev(ident.rbegin(), ident.rend());
    g.permutations.push_back(rev);
  } else {
    // All cyclic shifts in both orientations, identity first.
    for (int s = 0; s < n; ++s) {
      std::vector<int> p(n);
      for (int i = 0; i < n; ++i) p[i] = (i + s) % n;
      g.permutations.push_back(p);
    }
    for (int s = 0; s < n; ++s) {
      std::vector<int> p(n);
      for (int i = 0; i < n; ++i) p[i] = ((s - i) % n + n) % n;
      g.permutations.push_back(p);
    }
  }
  return g;
}

Polyline resample_polyline(const Polyline& points, int n_target, bool is_closed) {
  if (points.size() < 2) throw std::invalid_argument("resample_polyline: need at least 2 points");
  if (n_target < 2) throw std::invalid_argument("resample_polyline: n_target must be >= 2");

  size_t n_seg = is_closed ? points.size() : points.size() - 1;
  std::vector<double> cum(n_seg + 1, 0.0);
  for (size_t i = 0; i < n_seg; ++i) {
    const Vec2& a = points[i];
    const Vec2& b = points[(i + 1) % points.size()];
    cum[i + 1] = cum[i] + (b - a).norm();
  }
  double total = cum.back();
  if (total <= 0.0) throw std::invalid_argument("resample_polyline: zero-length input");

  double spacing = is_closed ? total / n_target : total / (n_target - 1);
  Polyline out;
  out.reserve(n_target);
  size_t seg = 0;
  for (int k = 0; k < n_target; ++k) {
    double s = std::min(k * spacing, total);
    while (seg + 1 < n_seg && cum[seg + 1] < s) ++seg;
    double seg_len = cum[seg + 1] - cum[seg];
    double t = seg_len > 0.0 ? (s - cum[seg]) / seg_len : 0.0;
    const Vec2& a = points[seg];
    const Vec2& b = points[(seg + 1) % points.size()];
    out.push_back(a + (b - a) * std::clamp(t, 0.0, 1.0));
  }
  out.front() = points.front();
  return out;
}

namespace {

// Sutherland-Hodgman clip of a polygon against one half-plane.
Polyline clip_polygon_halfplane(const Polyline& poly, auto inside, auto intersect) {
  Polyline out;
  size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& cur = poly[i];
    const Vec2& prev = poly[(i + n - 1) % n];
    bool cin = inside(cur), pin = inside(prev);
    if (cin) {
      if (!pin) out.push_back(intersect(prev, cur));
      out.push_back(cur);
    } else if (pin) {
      out.push_back(intersect(prev, cur));
    }
  }
  return out;
}

Vec2 lerp_at(const Vec2& a, const Vec2& b, double t) { return a + (b - a) * t; }

}  // namespace

std::vector<MapElement> clip_element(const MapElement& el, const PerceptionRange& range,
                                     int n_points, double min_arclength) {
  std::vector<MapElement> result;
  if (el.points.size() < 2) return result;

  if (el.is_closed) {
    Polyline poly = el.points;
    auto clip_x_lo = [&](Polyline p) {
      return clip_polygon_halfplane(
          p, [&](const Vec2& v) { return v.x >= range.x_min; },
          [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.x_min - a.x) / (b.x - a.x)); });
    };
    auto clip_x_hi = [&](Polyline p) {
      return clip_polygon_halfplane(
          p, [&](const Vec2& v) { return v.x <= range.x_max; },
          [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.x_max - a.x) / (b.x - a.x)); });
    };
    auto clip_y_lo = [&](Polyline p) {
      return clip_polygon_halfplane(
          p, [&](const Vec2& v) { return v.y >= range.y_min; },
          [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.y_min - a.y) / (b.y - a.y)); });
    };
    auto clip_y_hi = [&](Polyline p) {
      return clip_polygon_halfplane(
          p, [&](const Vec2& v) { return v.y <= range.y_max; },
          [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.y_max - a.y) / (b.y - a.y)); });
    };
    poly = clip_y_hi(clip_y_lo(clip_x_hi(clip_x_lo(poly))));
    if (poly.size() >= 3 && polyline_length(poly, true) >= min_arclength) {
      MapElement out;
      out.cls = el.cls;
      out.is_closed = true;
      out.points = resample_polyline(poly, n_points, true);
      result.push_back(std::move(out));
    }
    return result;
  }

  // Open polyline: walk segments, emitting in-range pieces.
  auto inside = [&](const Vec2& p) { return range.contains(p); };
  Polyline cur;
  auto flush = [&]() {
    if (cur.size() >= 2 && polyline_length(cur, false) >= min_arclength) {
      MapElement out;
      out.cls = el.cls;
      out.is_closed = false;
      out.points = resample_polyline(cur, n_points, false);
      result.push_back(std::move(out));
    }
    cur.clear();
  };
  auto clip_segment = [&](Vec2 a, Vec2 b, Vec2& ca, Vec2& cb) -> bool {
    // Liang-Barsky.
    double t0 = 0.0, t1 = 1.0;
    double dx = b.x - a.x, dy = b.y - a.y;
    auto update = [&](double p, double q) {
      if (p == 0.0) return q >= 0.0;
      double r = q / p;
      if (p < 0.0) {
        if (r > t1) return false;
        if (r > t0) t0 = r;
      } else {
        if (r < t0) return false;
        if (r < t1) t1 = r;
      }
      return true;
    };
    if (!update(-dx, a.x - range.x_min)) return false;
    if (!update(dx, range.x_max - a.x)) return false;
    if (!update(-dy, a.y - range.y_min)) return false;
    if (!update(dy, range.y_max - a.y)) return false;
    ca = {a.x + t0 * dx, a.y + t0 * dy};
    cb = {a.x + t1 * dx, a.y + t1 * dy};
    return t0 < t1;
  };

  for (size_t i = 0; i + 1 < el.points.size(); ++i) {
    Vec2 a = el.points[i], b = el.points[i + 1], ca, cb;
    if (!clip_segment(a, b, ca, cb)) {
      flush();
      continue;
    }
    bool starts_inside = inside(a);
    if (cur.empty()) {
      cur.push_back(ca);
    } else if (!starts_inside) {
      flush();
      cur.push_back(ca);
    }
    cur.push_back(cb);
    if (!inside(b)) flush();
  }
  flush();
  return result;
}

std::string map_to_json(const VectorizedMap& map) {
  nlohmann::json j;
  j["scene_id"] = map.scene_id;
  j["range"] = {{"x_min", map.range.x_min},
                {"x_max", map.range.x_max},
                {"y_min", map.range.y_min},
                {"y_max", map.range.y_max}};
  j["elements"] = nlohmann::json::array();
  for (const MapElement& el : map.elements) {
    nlohmann::json je;
    je["class_id"] = static_cast<int>(el.cls);
    je["is_closed"] = el.is_closed;
    nlohmann::json pts = nlohmann::json::array();
    for (const Vec2& p : el.points) pts.push_back({p.x, p.y});
    je["points"] = std::move(pts);
    j["elements"].push_back(std::move(je));
  }
  return j.dump(2);
}

VectorizedMap map_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  VectorizedMap map;
  map.scene_id = j.value("scene_id", "");
  if (j.contains("range")) {
    map.range.x_min = j["range"]["x_min"];
    map.range.x_max = j["range"]["x_max"];
    map.range.y_min = j["range"]["y_min"];
    map.range.y_max = j["range"]["y_max"];
  }
  for (const auto& je : j["elements"]) {
    MapElement el;
    el.cls = static_cast<ElementClass>(je["class_id"].get<int>());
    el.is_closed = je["is_closed"].get<bool>();
    for (const auto& p : je["points"]) el.points.push_back({p[0].get<double>(), p[1].get<double>()});
    map.elements.push_back(std::move(el));
  }
  return map;
}

}  // namespace vmap
