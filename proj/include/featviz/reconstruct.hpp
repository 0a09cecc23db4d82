#pragma once

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "featviz/attribution.hpp"
#include "featviz/net.hpp"

namespace featviz {

// Gradient-ascent objective: drive one unit as high as possible.
struct MaximizeUnit {
  TargetSpec target = ClassUnit{0};
};

// Gradient-ascent objective: match a recorded representation at one layer,
// maximizing -1/2 * ||phi(x) - reference||^2.
struct MatchRepresentation {
  index_t layer = 0;
  Tensor reference;
};

using Objective = std::variant<MaximizeUnit, MatchRepresentation>;

struct RegConfig {
  float lambda_p = 0.0f;  // weight of the L_p norm penalty
  float p = 6.0f;         // norm exponent, >= 1
  float lambda_tv = 0.0f; // weight of the total-variation penalty
};

struct ZeroInit {};
struct ConstantInit {
  float value = 0.0f;
};
struct RandomUniformInit {
  std::uint64_t seed = 0;
  float low = 0.0f;
  float high = 1.0f;
};
using InitSpec = std::variant<ZeroInit, ConstantInit, RandomUniformInit>;

struct OptConfig {
  index_t steps = 200;
  float step_size = 0.1f;
  InitSpec init = ZeroInit{};
  index_t record_every = 0;  // trajectory snapshot period; 0 = final iterate only
};

struct ReconstructionResult {
  Tensor final;
  std::vector<std::pair<index_t, Tensor>> trajectory;  // (step, iterate); final always last
  std::vector<double> loss_history;                    // total objective at iterates 0..steps
};

// Sum_i |x_i|^p and its gradient p*|x_i|^(p-1)*sign(x_i); the subgradient 0
// is chosen at x_i = 0. Requires p >= 1.
std::pair<double, Tensor> lp_penalty(const Tensor& x, float p);

// Smoothed total variation: sum over every pixel of
// sqrt(dy^2 + dx^2 + delta^2), delta = 1e-8, with one-sided forward
// differences treated as zero past the bottom/right borders. Returns the
// value and its exact gradient.
std::pair<double, Tensor> tv_penalty(const Tensor& x);

// Fixed-step gradient ascent on objective(x) - lambda_p*Lp(x) - lambda_tv*TV(x),
// starting from `init`. Objective gradients come from the Backprop+Gradient
// backward pass; the network itself never changes. Throws NumericError naming
// the step if the iterate leaves the finite range.
ReconstructionResult reconstruct(const Network& net, const Objective& objective,
                                 const RegConfig& reg, const OptConfig& opt);

}  // namespace featviz
