#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "featviz/attribution.hpp"
#include "featviz/heatmap.hpp"
#include "featviz/net.hpp"

namespace featviz {

// Fill the box with fixed values: one entry broadcast to every channel, or
// one entry per channel.
struct SolidFill {
  std::vector<float> value{0.5f};
};

// Fill the box with uniform draws from [low, high). Each sweep position gets
// its own stream derived from (seed, grid index), so the result is identical
// for any evaluation order or worker count.
struct RandomFill {
  std::uint64_t seed = 0;
  float low = 0.0f;
  float high = 1.0f;
};

using FillSpec = std::variant<SolidFill, RandomFill>;

struct OcclusionConfig {
  Extent2 box{1, 1};
  Extent2 stride{1, 1};
  FillSpec fill = SolidFill{};
  TargetSpec target = ClassUnit{0};
};

// Row-major top-left corners of the sweep grid; boxes are anchored fully
// inside the image, so the grid is floor((H - bh) / sy) + 1 rows by
// floor((W - bw) / sx) + 1 columns.
std::vector<Extent2> occlusion_positions(Extent2 input_hw, Extent2 box, Extent2 stride);

// Score drop map: value = score(original) - score(occluded), so positive
// means the covered region mattered. Grid positions are independent;
// `workers` > 1 evaluates them concurrently with bit-identical results.
Heatmap occlusion_map(const Network& net, const Tensor& input, const OcclusionConfig& config,
                      int workers = 1);

}  // namespace featviz
