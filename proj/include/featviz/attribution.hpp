#pragma once

#include <variant>

#include "featviz/heatmap.hpp"
#include "featviz/net.hpp"
#include "featviz/tensor.hpp"

namespace featviz {

// How a backward signal crosses a ReLU:
//   Backprop  — masked where the forward input was non-positive (the gradient);
//   Deconvnet — masked where the backward signal itself is non-positive;
//   Guided    — masked by both.
enum class ReluRule { Backprop, Deconvnet, Guided };

ReluRule relu_rule_from_name(const std::string& name);
std::string to_string(ReluRule rule);

// How a backward signal crosses a convolution or dense layer: the exact
// adjoint (Gradient) or epsilon-stabilized relevance redistribution.
struct ConvRule {
  enum class Kind { Gradient, LrpEpsilon };
  Kind kind = Kind::Gradient;
  float epsilon = 0.001f;  // LrpEpsilon stabilizer, must be > 0

  static ConvRule gradient() { return {Kind::Gradient, 0.001f}; }
  static ConvRule lrp(float eps = 0.001f) { return {Kind::LrpEpsilon, eps}; }
};

std::string to_string(const ConvRule& rule);

// A single output-class unit, addressed into the flattened pre-softmax head.
struct ClassUnit {
  index_t class_index = 0;
};

// A single unit inside the network: channel/(y, x) of one layer's output.
struct InternalUnit {
  index_t layer = 0;
  index_t channel = 0;
  index_t y = 0;
  index_t x = 0;
};

using TargetSpec = std::variant<ClassUnit, InternalUnit>;

// Activation of the target unit for batch row 0 of a recorded pass.
float target_activation(const Network& net, const ForwardTape& tape, const TargetSpec& target);

struct AttributionConfig {
  ReluRule relu_rule = ReluRule::Backprop;
  ConvRule conv_rule = ConvRule::gradient();
  TargetSpec target = ClassUnit{0};
};

// Per-pixel contribution map, shaped like the network input.
struct AttributionMap {
  Tensor values;
  AttributionConfig config;
};

// One ReLU crossing under `rule`. negative_slope extends the rules to leaky
// units: the mask factors become `slope` instead of 0 on the negative side.
Tensor relu_backward(ReluRule rule, const Tensor& forward_input, const Tensor& upstream,
                     float negative_slope = 0.0f);

// One conv crossing under `rule`. For LrpEpsilon every input i of output j
// receives (x_i * w_ij) / (z_j + eps * sign(z_j)) * upstream_j, summed over j;
// sign(0) counts as +1 and the bias only enters through z_j.
Tensor conv_backward(const ConvRule& rule, const ConvLayer& layer, const Tensor& forward_input,
                     const Tensor& upstream);

// Dense layers reuse the conv rules as fully connected linear maps.
Tensor dense_backward(const ConvRule& rule, const DenseLayer& layer, const Tensor& forward_input,
                      const Tensor& upstream);

// Walks the tape from `from_layer` down to the input, applying the configured
// rule per layer type. `seed` must be shaped like layer `from_layer`'s output.
Tensor propagate_back(const Network& net, const ForwardTape& tape, index_t from_layer, Tensor seed,
                      ReluRule relu_rule, const ConvRule& conv_rule);

// Full backward projection for a single (n=1) input. Gradient runs seed 1.0
// at the target; LrpEpsilon runs seed the unit's own activation.
AttributionMap attribute(const Network& net, const Tensor& input, const AttributionConfig& config);

// Class activation map of a GlobalAvgPool -> (Flatten) -> Dense (-> Softmax)
// tail: the feature maps entering the pooling, weighted by the class row of
// the dense layer. Returned at feature-map resolution; scale_y/scale_x record
// the factor back to input space.
Heatmap cam(const Network& net, const Tensor& input, index_t class_index);

}  // namespace featviz
