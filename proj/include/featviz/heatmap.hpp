#pragma once

#include <string>

#include "featviz/tensor.hpp"

namespace featviz {

// 2-D importance map plus the provenance needed to interpret it. Occlusion
// maps live at sweep-grid resolution, class activation maps at feature-map
// resolution; values is always (1, 1, rows, cols).
struct Heatmap {
  Tensor values;

  std::string kind;             // "occlusion" or "cam"
  std::string sign_convention;  // what positive values mean
  Extent2 input_size{0, 0};     // (h, w) of the analyzed image

  // occlusion sweep geometry
  Extent2 box{0, 0};
  Extent2 stride{0, 0};

  // map-cell to input-pixel scale (cam)
  double scale_y = 1.0;
  double scale_x = 1.0;

  [[nodiscard]] index_t rows() const { return values.shape().h; }
  [[nodiscard]] index_t cols() const { return values.shape().w; }
};

}  // namespace featviz
