#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "featviz/heatmap.hpp"
#include "featviz/tensor.hpp"

namespace featviz {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  index_t width = 0;
  index_t height = 0;
  std::vector<std::uint8_t> pixels;

  [[nodiscard]] std::uint8_t* pixel(index_t y, index_t x) {
    return pixels.data() + static_cast<std::size_t>(3 * (y * width + x));
  }
  [[nodiscard]] const std::uint8_t* pixel(index_t y, index_t x) const {
    return pixels.data() + static_cast<std::size_t>(3 * (y * width + x));
  }
};

// Binary PPM (P6) and PGM (P5), maxval 255 only. Values scale to [0, 1];
// the resulting tensor is (1, 3, h, w) for P6 and (1, 1, h, w) for P5.
Tensor read_image(std::istream& in);
Tensor load_image(const std::string& path);

// Canonical encoding: each header token followed by a single whitespace byte.
// Writing the tensor returned by read_image reproduces the file bytes.
void write_image(const RgbImage& image, std::ostream& out);
void write_image(const Tensor& image, std::ostream& out);  // 1 channel -> P5, 3 -> P6
void save_image(const RgbImage& image, const std::string& path);
void save_image(const Tensor& image, const std::string& path);

enum class Colormap {
  Grayscale,  // |v| ramp, black = zero contribution
  Signed,     // blue-white-red, white = zero
  Hot,        // black-red-yellow-white |v| ramp
};

enum class NormMode {
  AbsMax,          // divide by max |v|
  PercentileClip,  // divide by the q-th percentile of |v|, then clamp
};

enum class UpsampleMode { None, Nearest, Bilinear };

struct RenderSpec {
  Colormap colormap = Colormap::Signed;
  NormMode norm = NormMode::AbsMax;
  float percentile = 99.0f;  // used by PercentileClip; 0 < q <= 100
  UpsampleMode upsample = UpsampleMode::None;
  index_t factor = 1;  // integer upsampling factor, >= 1
};

Colormap colormap_from_name(const std::string& name);
std::string to_string(Colormap map);

// Attribution maps and heatmaps to viewable rasters. Multi-channel maps are
// reduced to one channel by the per-pixel max of absolute values first.
RgbImage render(const Tensor& map, const RenderSpec& spec);
RgbImage render(const Heatmap& map, const RenderSpec& spec);

}  // namespace featviz
