#pragma once

#include <string>
#include <vector>

#include "vmap/geometry.hpp"

namespace vmap {

/// The three evaluated map element classes. Pedestrian crossings are closed
/// polygons; dividers and boundaries are open polylines.
enum class ElementClass : int { ped_crossing = 0, divider = 1, boundary = 2 };

constexpr int kNumClasses = 3;

inline const char* class_name(ElementClass c) {
  switch (c) {
    case ElementClass::ped_crossing: return "ped_crossing";
    case ElementClass::divider: return "divider";
    case ElementClass::boundary: return "boundary";
  }
  return "unknown";
}

inline bool class_is_closed(ElementClass c) { return c == ElementClass::ped_crossing; }

/// BEV rectangle (meters) inside which elements live. Origin at the
/// intersection center, x right, y forward.
struct PerceptionRange {
  double x_min = -30.0;
  double x_max = 30.0;
  double y_min = -30.0;
  double y_max = 30.0;

  bool contains(const Vec2& p, double eps = 1e-9) const {
    return p.x >= x_min - eps && p.x <= x_max + eps && p.y >= y_min - eps && p.y <= y_max + eps;
  }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
};

/// One map instance: class, ordered 2-D point set (meters), open/closed flag.
/// Closed elements are interpreted cyclically; the closing vertex is not
/// duplicated.
struct MapElement {
  ElementClass cls = ElementClass::divider;
  Polyline points;
  bool is_closed = false;
};

struct VectorizedMap {
  std::vector<MapElement> elements;
  PerceptionRange range;
  std::string scene_id;
};

/// The point orderings of an element considered equivalent: identity +
/// reversal for open polylines, all cyclic shifts x both orientations for
/// closed polygons. Member 0 is always the identity.
struct PermutationGroup {
  std::vector<std::vector<int>> permutations;
  int size() const { return static_cast<int>(permutations.size()); }
};

/// Affine map of points in meters to the unit square. Throws
/// std::out_of_range if any point lies outside `range`.
Polyline normalize_points(const Polyline& points, const PerceptionRange& range);

/// Inverse of normalize_points. Throws std::domain_error on coordinates
/// outside [0, 1].
Polyline denormalize_points(const Polyline& points, const PerceptionRange& range);

/// Enumerate the permutation group for an element with n_points vertices.
/// Throws std::invalid_argument for n_points < 2.
PermutationGroup permutation_group(int n_points, bool is_closed);

/// Resample a polyline (or cyclic polygon) to n_target points at equal
/// arclength spacing. The first output point coincides with the first input
/// point. Throws std::invalid_argument on degenerate (zero-length) input.
Polyline resample_polyline(const Polyline& points, int n_target, bool is_closed);

/// Clip an element to the perception range. Polylines may split into several
/// pieces; polygons are clipped as polygons. Pieces with less than
/// min_arclength meters of retained geometry are dropped. Results are
/// resampled to n_points.
std::vector<MapElement> clip_element(const MapElement& el, const PerceptionRange& range,
                                     int n_points, double min_arclength = 1.0);

/// Structured-text (JSON) annotation schema shared with the dataset exporter.
std::string map_to_json(const VectorizedMap& map);
VectorizedMap map_from_json(const std::string& text);

}  // namespace vmap
