#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vmap {

/// Interleaved 8-bit RGB raster.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // h * w * 3

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0) {}

  std::uint8_t* px(int y, int x) { return &data[(static_cast<size_t>(y) * width + x) * 3]; }
  const std::uint8_t* px(int y, int x) const {
    return &data[(static_cast<size_t>(y) * width + x) * 3];
  }
};

/// Binary PPM (P6). Throws std::runtime_error with path context on failure.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

}  // namespace vmap
