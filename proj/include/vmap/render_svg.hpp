#pragma once

#include <string>
#include <vector>

#include "vmap/map_model.hpp"

namespace vmap {

/// BEV vector rendering: dividers yellow, boundaries green, pedestrian
/// crossings blue, with a frame at the perception range. Multiple maps are
/// laid out as side-by-side panels (e.g. GT vs prediction).
std::string render_maps_svg(const std::vector<VectorizedMap>& maps,
                            const std::vector<std::string>& titles, double panel_px = 400.0);

}  // namespace vmap
