#include "vmap/render_svg.hpp"

#include <sstream>
#include <stdexcept>

namespace vmap {

namespace {

const char* class_color(ElementClass c) {
  switch (c) {
    case ElementClass::divider: return "#e6c832";      // yellow
    case ElementClass::boundary: return "#3ccd5a";     // green
    case ElementClass::ped_crossing: return "#4673e6"; // blue
  }
  return "#888888";
}

}  // namespace

std::string render_maps_svg(const std::vector<VectorizedMap>& maps,
                            const std::vector<std::string>& titles, double panel_px) {
  if (maps.empty()) throw std::invalid_argument("render_maps_svg: no maps");
  const double margin = 24.0, title_h = 20.0;
  double panel_w = panel_px + 2 * margin;
  double panel_h = panel_px + 2 * margin + title_h;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel_w * maps.size()
      << "\" height=\"" << panel_h << "\" font-family=\"monospace\">\n";
  for (size_t mi = 0; mi < maps.size(); ++mi) {
    const VectorizedMap& map = maps[mi];
    const PerceptionRange& r = map.range;
    double ox = mi * panel_w + margin, oy = margin + title_h;
    auto tx = [&](const Vec2& p) {
      double x = ox + (p.x - r.x_min) / r.width() * panel_px;
      // y up in BEV, down in SVG
      double y = oy + (r.y_max - p.y) / r.height() * panel_px;
      return std::pair<double, double>{x, y};
    };
    if (mi < titles.size())
      svg << "  <text x=\"" << ox << "\" y=\"" << margin + 12 << "\" font-size=\"14\">"
          << titles[mi] << "</text>\n";
    svg << "  <rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << panel_px << "\" height=\""
        << panel_px << "\" fill=\"#f4f4f6\" stroke=\"#444\"/>\n";
    for (const MapElement& el : map.elements) {
      svg << "  <" << (el.is_closed ? "polygon" : "polyline") << " points=\"";
      for (const Vec2& p : el.points) {
        auto [x, y] = tx(p);
        svg << x << "," << y << " ";
      }
      svg << "\" fill=\"" << (el.is_closed ? class_color(el.cls) : "none")
          << "\" fill-opacity=\"0.45\" stroke=\"" << class_color(el.cls)
          << "\" stroke-width=\"2\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace vmap
