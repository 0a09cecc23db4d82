#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "featviz/tensor.hpp"

namespace featviz {

struct ConvLayer {
  Tensor kernel;  // (out_channels, in_channels, kh, kw)
  std::vector<float> bias;
  Extent2 stride{1, 1};
  Extent2 pad{0, 0};
};

struct ReluLayer {};

struct LeakyReluLayer {
  float alpha = 0.01f;
};

struct MaxPoolLayer {
  Extent2 window{2, 2};
  Extent2 stride{2, 2};
};

struct AvgPoolLayer {
  Extent2 window{2, 2};
  Extent2 stride{2, 2};
};

struct GlobalAvgPoolLayer {};

// Fully connected layer over the flattened (c, h, w) input, row-major.
struct DenseLayer {
  index_t out_features = 0;
  index_t in_features = 0;
  std::vector<float> weights;  // row-major [out][in]
  std::vector<float> bias;     // one per output

  [[nodiscard]] float weight(index_t o, index_t i) const {
    return weights[static_cast<std::size_t>(o * in_features + i)];
  }
};

struct FlattenLayer {};

struct SoftmaxLayer {};

using LayerSpec = std::variant<ConvLayer, ReluLayer, LeakyReluLayer, MaxPoolLayer, AvgPoolLayer,
                               GlobalAvgPoolLayer, DenseLayer, FlattenLayer, SoftmaxLayer>;

std::string layer_type_name(const LayerSpec& layer);
index_t layer_param_count(const LayerSpec& layer);

struct InputShape {
  index_t c = 0, h = 0, w = 0;
  bool operator==(const InputShape&) const = default;
};

// A sequential chain of layers with a declared input shape. Immutable after
// load; any number of forward passes may share one instance.
struct Network {
  InputShape input{};
  std::vector<LayerSpec> layers;
  std::vector<std::string> labels;  // optional class names, one per output unit
};

// Output shape of `layer` for input shape `in`; throws ShapeError/ConfigError
// mentioning `index` when extents do not line up.
Shape4 layer_output_shape(const LayerSpec& layer, const Shape4& in, index_t index);

// Per-layer output shapes for a batch of n. Element i is the output of layer i.
std::vector<Shape4> chain_shapes(const Network& net, index_t n);

// End-to-end structural check: non-empty, shape chain consistent, Softmax
// only final, label count matches output width.
void validate(const Network& net);

struct TapeEntry {
  Tensor input;
  Tensor output;
  std::optional<Switches> switches;  // set for max-pool layers
};

// Complete activation record of one forward pass; tape[i].output equals
// tape[i+1].input.
struct ForwardTape {
  std::vector<TapeEntry> entries;
};

ForwardTape forward(const Network& net, const Tensor& input);

// Pre-softmax activations of the network head: the final layer's output, or
// the tensor entering the Softmax when one terminates the chain.
const Tensor& pre_softmax_output(const Network& net, const ForwardTape& tape);

// Pre-softmax score of one class for batch row 0; class_index addresses the
// flattened head output.
float class_score(const Network& net, const ForwardTape& tape, index_t class_index);

// FVNET model files: magic "FVNETv1\n", uint32-LE header length, UTF-8 JSON
// header (input shape, layer list with declared weight-blob sizes, optional
// labels), then the weight blobs as little-endian float32 in declared order.
// See docs/fvnet_format.md for a worked hex example.
void save_network(const Network& net, std::ostream& out);
std::string save_network_bytes(const Network& net);
Network load_network(std::istream& in);
Network load_network_bytes(std::string_view bytes);
void save_network_file(const Network& net, const std::string& path);
Network load_network_file(const std::string& path);

}  // namespace featviz
