#include "featviz/occlusion.hpp"

#include <algorithm>
#include <thread>

#include "featviz/rng.hpp"

namespace featviz {

std::vector<Extent2> occlusion_positions(Extent2 input_hw, Extent2 box, Extent2 stride) {
  if (box.y < 1 || box.x < 1) throw ConfigError("occlusion: box extents must be >= 1");
  if (stride.y < 1 || stride.x < 1) throw ConfigError("occlusion: stride must be >= 1");
  if (box.y > input_hw.y || box.x > input_hw.x) {
    throw ConfigError("occlusion: box " + std::to_string(box.y) + "x" + std::to_string(box.x) +
                      " does not fit inside " + std::to_string(input_hw.y) + "x" +
                      std::to_string(input_hw.x) + " image");
  }
  const index_t rows = (input_hw.y - box.y) / stride.y + 1;
  const index_t cols = (input_hw.x - box.x) / stride.x + 1;
  std::vector<Extent2> positions;
  positions.reserve(static_cast<std::size_t>(rows * cols));
  for (index_t gy = 0; gy < rows; ++gy) {
    for (index_t gx = 0; gx < cols; ++gx) {
      positions.push_back(Extent2{gy * stride.y, gx * stride.x});
    }
  }
  return positions;
}

namespace {

void apply_fill(Tensor& image, Extent2 corner, Extent2 box, const FillSpec& fill,
                index_t grid_index) {
  const Shape4 s = image.shape();
  if (const auto* solid = std::get_if<SolidFill>(&fill)) {
    for (index_t c = 0; c < s.c; ++c) {
      const float v = solid->value.size() == 1 ? solid->value[0]
                                               : solid->value[static_cast<std::size_t>(c)];
      for (index_t y = corner.y; y < corner.y + box.y; ++y) {
        for (index_t x = corner.x; x < corner.x + box.x; ++x) {
          image(0, c, y, x) = v;
        }
      }
    }
    return;
  }
  const auto& random = std::get<RandomFill>(fill);
  std::mt19937_64 eng(mix64(random.seed + mix64(static_cast<std::uint64_t>(grid_index) + 1)));
  for (index_t c = 0; c < s.c; ++c) {
    for (index_t y = corner.y; y < corner.y + box.y; ++y) {
      for (index_t x = corner.x; x < corner.x + box.x; ++x) {
        image(0, c, y, x) = uniform_float(eng, random.low, random.high);
      }
    }
  }
}

void check_fill(const FillSpec& fill, index_t channels) {
  if (const auto* solid = std::get_if<SolidFill>(&fill)) {
    if (solid->value.size() != 1 && static_cast<index_t>(solid->value.size()) != channels) {
      throw ConfigError("occlusion: solid fill has " + std::to_string(solid->value.size()) +
                        " values for " + std::to_string(channels) + " channels");
    }
    return;
  }
  const auto& random = std::get<RandomFill>(fill);
  if (!(random.low < random.high)) {
    throw ConfigError("occlusion: random fill needs low < high");
  }
}

}  // namespace

Heatmap occlusion_map(const Network& net, const Tensor& input, const OcclusionConfig& config,
                      int workers) {
  if (input.shape().n != 1) {
    throw ConfigError("occlusion: defined for single images (n = 1)");
  }
  check_fill(config.fill, input.shape().c);

  const std::vector<Extent2> positions =
      occlusion_positions({input.shape().h, input.shape().w}, config.box, config.stride);
  const index_t rows = (input.shape().h - config.box.y) / config.stride.y + 1;
  const index_t cols = (input.shape().w - config.box.x) / config.stride.x + 1;

  // Evaluating the base score also validates the target.
  const float base = target_activation(net, forward(net, input), config.target);

  std::vector<float> heat(positions.size(), 0.0f);
  auto sweep = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t g = lo; g < hi; ++g) {
      Tensor occluded = input;
      apply_fill(occluded, positions[g], config.box, config.fill, static_cast<index_t>(g));
      const float score = target_activation(net, forward(net, occluded), config.target);
      heat[g] = base - score;
    }
  };

  const std::size_t count = positions.size();
  const std::size_t nworkers =
      std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(count, 1));
  if (nworkers <= 1) {
    sweep(0, count);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    const std::size_t chunk = (count + nworkers - 1) / nworkers;
    for (std::size_t t = 0; t < nworkers; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(count, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(sweep, lo, hi);
    }
    for (std::thread& t : pool) t.join();
  }

  Heatmap map;
  map.values = Tensor(Shape4{1, 1, rows, cols}, std::move(heat));
  map.kind = "occlusion";
  map.sign_convention = "positive = score drop when covered (important region)";
  map.input_size = {input.shape().h, input.shape().w};
  map.box = config.box;
  map.stride = config.stride;
  return map;
}

}  // namespace featviz
