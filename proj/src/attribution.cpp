#include "featviz/attribution.hpp"

#include <cmath>
#include <utility>

namespace featviz {

ReluRule relu_rule_from_name(const std::string& name) {
  if (name == "backprop") return ReluRule::Backprop;
  if (name == "deconvnet") return ReluRule::Deconvnet;
  if (name == "guided") return ReluRule::Guided;
  throw ConfigError("unknown relu rule '" + name + "' (expected backprop, deconvnet or guided)");
}

std::string to_string(ReluRule rule) {
  switch (rule) {
    case ReluRule::Backprop: return "backprop";
    case ReluRule::Deconvnet: return "deconvnet";
    case ReluRule::Guided: return "guided";
  }
  return "?";
}

std::string to_string(const ConvRule& rule) {
  return rule.kind == ConvRule::Kind::Gradient ? "gradient" : "lrp";
}

Tensor relu_backward(ReluRule rule, const Tensor& forward_input, const Tensor& upstream,
                     float negative_slope) {
  if (forward_input.shape() != upstream.shape()) {
    throw ShapeError("relu_backward: forward input " + to_string(forward_input.shape()) +
                     " vs upstream " + to_string(upstream.shape()));
  }
  Tensor out(upstream.shape());
  for (index_t i = 0; i < upstream.size(); ++i) {
    const float fwd_factor = forward_input[i] > 0.0f ? 1.0f : negative_slope;
    const float bwd_factor = upstream[i] > 0.0f ? 1.0f : negative_slope;
    switch (rule) {
      case ReluRule::Backprop: out[i] = upstream[i] * fwd_factor; break;
      case ReluRule::Deconvnet: out[i] = upstream[i] * bwd_factor; break;
      case ReluRule::Guided: out[i] = upstream[i] * fwd_factor * bwd_factor; break;
    }
  }
  return out;
}

namespace {

float stabilized(float z, float eps) {
  // sign(0) counts as +1
  return z + (z >= 0.0f ? eps : -eps);
}

void check_lrp_epsilon(const ConvRule& rule) {
  if (rule.kind == ConvRule::Kind::LrpEpsilon && !(rule.epsilon > 0.0f)) {
    throw ConfigError("lrp: epsilon must be > 0");
  }
}

// upstream_j / (z_j + eps*sign z_j), elementwise.
Tensor relevance_quotient(const Tensor& z, const Tensor& upstream, float eps) {
  Tensor t(z.shape());
  for (index_t i = 0; i < z.size(); ++i) {
    t[i] = static_cast<float>(static_cast<double>(upstream[i]) /
                              static_cast<double>(stabilized(z[i], eps)));
  }
  return t;
}

}  // namespace

Tensor conv_backward(const ConvRule& rule, const ConvLayer& layer, const Tensor& forward_input,
                     const Tensor& upstream) {
  check_lrp_epsilon(rule);
  if (rule.kind == ConvRule::Kind::Gradient) {
    return conv2d_input_grad(layer.kernel, upstream, forward_input.shape(), layer.stride,
                             layer.pad);
  }
  // LrpEpsilon: R_i = x_i * sum_j w_ij * (R_j / zs_j), with z recomputed from
  // the recorded layer input.
  const Tensor z = conv2d(forward_input, layer.kernel, layer.bias, layer.stride, layer.pad);
  if (z.shape() != upstream.shape()) {
    throw ShapeError("conv_backward: upstream shape " + to_string(upstream.shape()) +
                     " does not match forward output " + to_string(z.shape()));
  }
  const Tensor t = relevance_quotient(z, upstream, rule.epsilon);
  Tensor r = conv2d_input_grad(layer.kernel, t, forward_input.shape(), layer.stride, layer.pad);
  for (index_t i = 0; i < r.size(); ++i) r[i] *= forward_input[i];
  return r;
}

Tensor dense_backward(const ConvRule& rule, const DenseLayer& layer, const Tensor& forward_input,
                      const Tensor& upstream) {
  check_lrp_epsilon(rule);
  const Shape4 is = forward_input.shape();
  const index_t flat = is.c * is.h * is.w;
  if (flat != layer.in_features) {
    throw ShapeError("dense_backward: input flattens to " + std::to_string(flat) +
                     " values but in_features is " + std::to_string(layer.in_features));
  }
  const Shape4 us = upstream.shape();
  if (us.n != is.n || us.c * us.h * us.w != layer.out_features) {
    throw ShapeError("dense_backward: upstream shape " + to_string(us) + " does not match " +
                     std::to_string(layer.out_features) + " output features");
  }

  Tensor out(is);
  for (index_t n = 0; n < is.n; ++n) {
    const float* x = forward_input.data().data() + n * flat;
    const float* u = upstream.data().data() + n * layer.out_features;
    float* r = out.data().data() + n * flat;
    if (rule.kind == ConvRule::Kind::Gradient) {
      for (index_t i = 0; i < flat; ++i) {
        double acc = 0.0;
        for (index_t o = 0; o < layer.out_features; ++o) {
          acc += static_cast<double>(u[o]) * static_cast<double>(layer.weight(o, i));
        }
        r[i] = static_cast<float>(acc);
      }
    } else {
      // quotient per output unit, then redistribute proportional to x_i * w_oi
      std::vector<double> t(static_cast<std::size_t>(layer.out_features));
      for (index_t o = 0; o < layer.out_features; ++o) {
        double z = layer.bias.empty() ? 0.0 : layer.bias[static_cast<std::size_t>(o)];
        for (index_t i = 0; i < flat; ++i) {
          z += static_cast<double>(x[i]) * static_cast<double>(layer.weight(o, i));
        }
        const float zf = static_cast<float>(z);
        t[static_cast<std::size_t>(o)] =
            static_cast<double>(u[o]) / static_cast<double>(stabilized(zf, rule.epsilon));
      }
      for (index_t i = 0; i < flat; ++i) {
        double acc = 0.0;
        for (index_t o = 0; o < layer.out_features; ++o) {
          acc += t[static_cast<std::size_t>(o)] * static_cast<double>(layer.weight(o, i));
        }
        r[i] = static_cast<float>(acc * static_cast<double>(x[i]));
      }
    }
  }
  return out;
}

namespace {

// Avg-pool crossing: exact adjoint for Gradient, contribution-proportional
// epsilon redistribution for LRP (uniform weights 1/|window|).
Tensor avgpool_crossing(const ConvRule& rule, const Tensor& forward_input, const Tensor& upstream,
                        Extent2 window, Extent2 stride, bool global) {
  if (rule.kind == ConvRule::Kind::Gradient) {
    return avgpool_backward(upstream, window, stride, forward_input.shape(), global);
  }
  const Tensor z = avgpool(forward_input, window, stride, global);
  const Tensor t = relevance_quotient(z, upstream, rule.epsilon);
  Tensor r = avgpool_backward(t, window, stride, forward_input.shape(), global);
  for (index_t i = 0; i < r.size(); ++i) r[i] *= forward_input[i];
  return r;
}

}  // namespace

Tensor propagate_back(const Network& net, const ForwardTape& tape, index_t from_layer, Tensor seed,
                      ReluRule relu_rule, const ConvRule& conv_rule) {
  check_lrp_epsilon(conv_rule);
  if (tape.entries.size() != net.layers.size()) {
    throw ConfigError("propagate_back: tape does not belong to this network");
  }
  if (from_layer < 0 || from_layer >= static_cast<index_t>(net.layers.size())) {
    throw ConfigError("propagate_back: layer index " + std::to_string(from_layer) +
                      " out of range");
  }
  const TapeEntry& start = tape.entries[static_cast<std::size_t>(from_layer)];
  if (seed.shape() != start.output.shape()) {
    throw ShapeError("propagate_back: seed shape " + to_string(seed.shape()) +
                     " does not match layer output " + to_string(start.output.shape()));
  }

  Tensor signal = std::move(seed);
  for (index_t i = from_layer; i >= 0; --i) {
    const LayerSpec& layer = net.layers[static_cast<std::size_t>(i)];
    const TapeEntry& entry = tape.entries[static_cast<std::size_t>(i)];
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      signal = conv_backward(conv_rule, *conv, entry.input, signal);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      signal = relu_backward(relu_rule, entry.input, signal);
    } else if (const auto* leaky = std::get_if<LeakyReluLayer>(&layer)) {
      signal = relu_backward(relu_rule, entry.input, signal, leaky->alpha);
    } else if (std::holds_alternative<MaxPoolLayer>(layer)) {
      signal = maxunpool(signal, *entry.switches, entry.input.shape());
    } else if (const auto* ap = std::get_if<AvgPoolLayer>(&layer)) {
      signal = avgpool_crossing(conv_rule, entry.input, signal, ap->window, ap->stride, false);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      signal = avgpool_crossing(conv_rule, entry.input, signal, {1, 1}, {1, 1}, true);
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      signal = dense_backward(conv_rule, *dense, entry.input, signal);
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      signal = signal.reshaped(entry.input.shape());
    } else if (std::holds_alternative<SoftmaxLayer>(layer)) {
      throw ConfigError("propagate_back: softmax encountered at layer " + std::to_string(i) +
                        "; backward rules are defined on pre-softmax activations");
    } else {
      throw Error("propagate_back: unhandled layer variant");
    }
  }
  return signal;
}

namespace {

// (layer index, flat unit offset) of a target for a given tape.
std::pair<index_t, index_t> resolve_target(const Network& net, const ForwardTape& tape,
                                           const TargetSpec& target) {
  if (const auto* cls = std::get_if<ClassUnit>(&target)) {
    index_t layer = static_cast<index_t>(net.layers.size()) - 1;
    if (std::holds_alternative<SoftmaxLayer>(net.layers.back())) --layer;
    if (layer < 0) throw ConfigError("target: network has no pre-softmax layer");
    const Tensor& out = tape.entries[static_cast<std::size_t>(layer)].output;
    const Shape4 s = out.shape();
    const index_t width = s.c * s.h * s.w;
    if (cls->class_index < 0 || cls->class_index >= width) {
      throw ConfigError("target: class index " + std::to_string(cls->class_index) +
                        " out of range for " + std::to_string(width) + " output units");
    }
    return {layer, cls->class_index};
  }
  const auto& unit = std::get<InternalUnit>(target);
  if (unit.layer < 0 || unit.layer >= static_cast<index_t>(net.layers.size())) {
    throw ConfigError("target: layer index " + std::to_string(unit.layer) + " out of range");
  }
  if (std::holds_alternative<SoftmaxLayer>(net.layers[static_cast<std::size_t>(unit.layer)])) {
    throw ConfigError("target: layer " + std::to_string(unit.layer) +
                      " is softmax; targets are pre-softmax activations");
  }
  const Tensor& out = tape.entries[static_cast<std::size_t>(unit.layer)].output;
  const Shape4 s = out.shape();
  if (unit.channel < 0 || unit.channel >= s.c || unit.y < 0 || unit.y >= s.h || unit.x < 0 ||
      unit.x >= s.w) {
    throw ConfigError("target: unit (" + std::to_string(unit.channel) + ", " +
                      std::to_string(unit.y) + ", " + std::to_string(unit.x) +
                      ") out of range for layer output " + to_string(s));
  }
  return {unit.layer, out.offset(0, unit.channel, unit.y, unit.x)};
}

}  // namespace

float target_activation(const Network& net, const ForwardTape& tape, const TargetSpec& target) {
  const auto [layer, offset] = resolve_target(net, tape, target);
  return tape.entries[static_cast<std::size_t>(layer)].output[offset];
}

AttributionMap attribute(const Network& net, const Tensor& input, const AttributionConfig& config) {
  if (input.shape().n != 1) {
    throw ConfigError("attribute: defined for single images (n = 1), got n = " +
                      std::to_string(input.shape().n));
  }
  const ForwardTape tape = forward(net, input);
  const auto [layer, offset] = resolve_target(net, tape, config.target);
  const Tensor& out = tape.entries[static_cast<std::size_t>(layer)].output;

  Tensor seed(out.shape());
  seed[offset] = config.conv_rule.kind == ConvRule::Kind::Gradient ? 1.0f : out[offset];

  AttributionMap map;
  map.values = propagate_back(net, tape, layer, std::move(seed), config.relu_rule, config.conv_rule);
  map.config = config;
  if (!map.values.all_finite()) {
    throw NumericError("attribute: non-finite contribution values");
  }
  return map;
}

Heatmap cam(const Network& net, const Tensor& input, index_t class_index) {
  validate(net);
  // Locate the GlobalAvgPool -> (Flatten) -> Dense (-> Softmax) tail.
  index_t idx = static_cast<index_t>(net.layers.size()) - 1;
  if (idx >= 0 && std::holds_alternative<SoftmaxLayer>(net.layers[static_cast<std::size_t>(idx)]))
    --idx;
  if (idx < 0 || !std::holds_alternative<DenseLayer>(net.layers[static_cast<std::size_t>(idx)])) {
    throw ConfigError("cam: network head must be a dense layer (optionally followed by softmax)");
  }
  const auto& dense = std::get<DenseLayer>(net.layers[static_cast<std::size_t>(idx)]);
  index_t gap = idx - 1;
  if (gap >= 0 && std::holds_alternative<FlattenLayer>(net.layers[static_cast<std::size_t>(gap)]))
    --gap;
  if (gap < 0 || !std::holds_alternative<GlobalAvgPoolLayer>(net.layers[static_cast<std::size_t>(gap)])) {
    throw ConfigError("cam: dense head must follow a global average pooling layer");
  }
  if (class_index < 0 || class_index >= dense.out_features) {
    throw ConfigError("cam: class index " + std::to_string(class_index) + " out of range for " +
                      std::to_string(dense.out_features) + " classes");
  }
  if (input.shape().n != 1) {
    throw ConfigError("cam: defined for single images (n = 1)");
  }

  const ForwardTape tape = forward(net, input);
  const Tensor& features = tape.entries[static_cast<std::size_t>(gap)].input;  // (1, K, fh, fw)
  const Shape4 fs = features.shape();
  if (fs.c != dense.in_features) {
    throw ConfigError("cam: dense in_features does not match feature map count");
  }

  Heatmap map;
  map.values = Tensor(Shape4{1, 1, fs.h, fs.w});
  for (index_t y = 0; y < fs.h; ++y) {
    for (index_t x = 0; x < fs.w; ++x) {
      double acc = 0.0;
      for (index_t k = 0; k < fs.c; ++k) {
        acc += static_cast<double>(dense.weight(class_index, k)) *
               static_cast<double>(features(0, k, y, x));
      }
      map.values(0, 0, y, x) = static_cast<float>(acc);
    }
  }
  map.kind = "cam";
  map.sign_convention = "positive = evidence for the class";
  map.input_size = {input.shape().h, input.shape().w};
  map.scale_y = static_cast<double>(input.shape().h) / static_cast<double>(fs.h);
  map.scale_x = static_cast<double>(input.shape().w) / static_cast<double>(fs.w);
  return map;
}

}  // namespace featviz
