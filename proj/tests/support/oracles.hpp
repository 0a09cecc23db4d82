#pragma once

#include <vector>

#include "featviz/net.hpp"
#include "featviz/occlusion.hpp"

namespace featviz::test {

// Independent naive reference implementations used as oracles. Everything
// here recomputes results with explicit loops in double precision and never
// calls the library kernels it is checking.

// Flattened pre-softmax head activations for a single (n = 1) input given as
// flat (c, h, w) row-major doubles.
std::vector<double> oracle_forward(const Network& net, const std::vector<double>& input);

double oracle_class_score(const Network& net, const std::vector<double>& input, index_t cls);

// Central finite differences of oracle_class_score, step h per element.
std::vector<double> oracle_fd_gradient(const Network& net, const std::vector<double>& input,
                                       index_t cls, double h);

// Naive conv2d (explicit loops, double accumulation) for cross-checking the
// library kernel on the same float data.
std::vector<double> oracle_conv2d(const Tensor& input, const Tensor& kernel,
                                  std::span<const float> bias, Extent2 stride, Extent2 pad);

// Explicit-loop occlusion sweep making a full image copy per position; must
// agree with occlusion_map bit for bit.
std::vector<float> naive_occlusion(const Network& net, const Tensor& input,
                                   const OcclusionConfig& config);

std::vector<double> to_doubles(const Tensor& t);

}  // namespace featviz::test
