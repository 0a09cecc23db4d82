#include "featviz/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace featviz {

using nlohmann::json;

std::string layer_type_name(const LayerSpec& layer) {
  struct Namer {
    std::string operator()(const ConvLayer&) const { return "conv"; }
    std::string operator()(const ReluLayer&) const { return "relu"; }
    std::string operator()(const LeakyReluLayer&) const { return "leaky_relu"; }
    std::string operator()(const MaxPoolLayer&) const { return "maxpool"; }
    std::string operator()(const AvgPoolLayer&) const { return "avgpool"; }
    std::string operator()(const GlobalAvgPoolLayer&) const { return "global_avgpool"; }
    std::string operator()(const DenseLayer&) const { return "dense"; }
    std::string operator()(const FlattenLayer&) const { return "flatten"; }
    std::string operator()(const SoftmaxLayer&) const { return "softmax"; }
  };
  return std::visit(Namer{}, layer);
}

index_t layer_param_count(const LayerSpec& layer) {
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    return conv->kernel.size() + static_cast<index_t>(conv->bias.size());
  }
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    return static_cast<index_t>(dense->weights.size() + dense->bias.size());
  }
  return 0;
}

namespace {

[[noreturn]] void layer_error(index_t index, const LayerSpec& layer, const std::string& what) {
  throw ShapeError("layer " + std::to_string(index) + " (" + layer_type_name(layer) + "): " + what);
}

// Windowed output extent; the formats admit only exact fits.
index_t windowed_extent(index_t in, index_t window, index_t stride, index_t pad) {
  if (window < 1) throw ConfigError("window must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (pad < 0) throw ConfigError("padding must be >= 0");
  const index_t span = in + 2 * pad - window;
  if (span < 0) throw ShapeError("window exceeds padded input extent");
  if (span % stride != 0) {
    throw ConfigError("stride does not divide the span; output extent would not be an integer");
  }
  return span / stride + 1;
}

Shape4 pooled_shape(const Shape4& in, Extent2 window, Extent2 stride, index_t channels) {
  return Shape4{in.n, channels, windowed_extent(in.h, window.y, stride.y, 0),
                windowed_extent(in.w, window.x, stride.x, 0)};
}

}  // namespace

Shape4 layer_output_shape(const LayerSpec& layer, const Shape4& in, index_t index) {
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    const Shape4 ks = conv->kernel.shape();
    if (ks.c != in.c) {
      layer_error(index, layer,
                  "expects " + std::to_string(ks.c) + " input channels, got " + std::to_string(in.c));
    }
    try {
      return Shape4{in.n, ks.n, windowed_extent(in.h, ks.h, conv->stride.y, conv->pad.y),
                    windowed_extent(in.w, ks.w, conv->stride.x, conv->pad.x)};
    } catch (const Error& e) {
      layer_error(index, layer, e.what());
    }
  }
  if (std::holds_alternative<ReluLayer>(layer) || std::holds_alternative<LeakyReluLayer>(layer) ||
      std::holds_alternative<SoftmaxLayer>(layer)) {
    return in;
  }
  if (const auto* mp = std::get_if<MaxPoolLayer>(&layer)) {
    try {
      return pooled_shape(in, mp->window, mp->stride, in.c);
    } catch (const Error& e) {
      layer_error(index, layer, e.what());
    }
  }
  if (const auto* ap = std::get_if<AvgPoolLayer>(&layer)) {
    try {
      return pooled_shape(in, ap->window, ap->stride, in.c);
    } catch (const Error& e) {
      layer_error(index, layer, e.what());
    }
  }
  if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
    if (in.h < 1 || in.w < 1) layer_error(index, layer, "empty spatial plane");
    return Shape4{in.n, in.c, 1, 1};
  }
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    const index_t flat = in.c * in.h * in.w;
    if (flat != dense->in_features) {
      layer_error(index, layer,
                  "input flattens to " + std::to_string(flat) + " values but in_features is " +
                      std::to_string(dense->in_features));
    }
    return Shape4{in.n, dense->out_features, 1, 1};
  }
  if (std::holds_alternative<FlattenLayer>(layer)) {
    return Shape4{in.n, in.c * in.h * in.w, 1, 1};
  }
  throw Error("layer_output_shape: unhandled layer variant");
}

std::vector<Shape4> chain_shapes(const Network& net, index_t n) {
  std::vector<Shape4> shapes;
  shapes.reserve(net.layers.size());
  Shape4 cur{n, net.input.c, net.input.h, net.input.w};
  for (index_t i = 0; i < static_cast<index_t>(net.layers.size()); ++i) {
    cur = layer_output_shape(net.layers[static_cast<std::size_t>(i)], cur, i);
    shapes.push_back(cur);
  }
  return shapes;
}

void validate(const Network& net) {
  if (net.layers.empty()) throw ConfigError("network: layer list is empty");
  if (net.input.c < 1 || net.input.h < 1 || net.input.w < 1) {
    throw ConfigError("network: declared input shape must be positive");
  }
  const auto shapes = chain_shapes(net, 1);
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    if (std::holds_alternative<SoftmaxLayer>(net.layers[i])) {
      throw ConfigError("layer " + std::to_string(i) +
                        " (softmax): softmax may appear only as the final layer");
    }
  }
  if (!net.labels.empty()) {
    const Shape4& last = shapes.back();
    const index_t width = last.c * last.h * last.w;
    if (static_cast<index_t>(net.labels.size()) != width) {
      throw ConfigError("network: " + std::to_string(net.labels.size()) + " labels for " +
                        std::to_string(width) + " output units");
    }
  }
}

namespace {

Tensor dense_forward(const DenseLayer& dense, const Tensor& x) {
  const Shape4 is = x.shape();
  Tensor out(Shape4{is.n, dense.out_features, 1, 1});
  const index_t flat = is.c * is.h * is.w;
  for (index_t n = 0; n < is.n; ++n) {
    const float* row = x.data().data() + n * flat;
    for (index_t o = 0; o < dense.out_features; ++o) {
      double acc = dense.bias.empty() ? 0.0 : dense.bias[static_cast<std::size_t>(o)];
      const float* wrow = dense.weights.data() + o * dense.in_features;
      for (index_t i = 0; i < flat; ++i) {
        acc += static_cast<double>(row[i]) * static_cast<double>(wrow[i]);
      }
      out(n, o, 0, 0) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor softmax_forward(const Tensor& x) {
  const Shape4 is = x.shape();
  const index_t flat = is.c * is.h * is.w;
  Tensor out(is);
  for (index_t n = 0; n < is.n; ++n) {
    const float* row = x.data().data() + n * flat;
    float* orow = out.data().data() + n * flat;
    float mx = row[0];
    for (index_t i = 1; i < flat; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    for (index_t i = 0; i < flat; ++i) denom += std::exp(static_cast<double>(row[i] - mx));
    for (index_t i = 0; i < flat; ++i) {
      orow[i] = static_cast<float>(std::exp(static_cast<double>(row[i] - mx)) / denom);
    }
  }
  return out;
}

TapeEntry apply_layer(const LayerSpec& layer, Tensor x) {
  TapeEntry entry;
  entry.input = std::move(x);
  const Tensor& in = entry.input;
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    entry.output = conv2d(in, conv->kernel, conv->bias, conv->stride, conv->pad);
  } else if (std::holds_alternative<ReluLayer>(layer)) {
    Tensor out(in.shape());
    for (index_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
    entry.output = std::move(out);
  } else if (const auto* leaky = std::get_if<LeakyReluLayer>(&layer)) {
    Tensor out(in.shape());
    for (index_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : leaky->alpha * in[i];
    entry.output = std::move(out);
  } else if (const auto* mp = std::get_if<MaxPoolLayer>(&layer)) {
    MaxPoolResult r = maxpool(in, mp->window, mp->stride);
    entry.output = std::move(r.output);
    entry.switches = std::move(r.switches);
  } else if (const auto* ap = std::get_if<AvgPoolLayer>(&layer)) {
    entry.output = avgpool(in, ap->window, ap->stride);
  } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
    entry.output = avgpool(in, {1, 1}, {1, 1}, /*global=*/true);
  } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    entry.output = dense_forward(*dense, in);
  } else if (std::holds_alternative<FlattenLayer>(layer)) {
    const Shape4 is = in.shape();
    entry.output = in.reshaped(Shape4{is.n, is.c * is.h * is.w, 1, 1});
  } else if (std::holds_alternative<SoftmaxLayer>(layer)) {
    entry.output = softmax_forward(in);
  } else {
    throw Error("forward: unhandled layer variant");
  }
  return entry;
}

}  // namespace

ForwardTape forward(const Network& net, const Tensor& input) {
  validate(net);
  const Shape4 is = input.shape();
  if (is.c != net.input.c || is.h != net.input.h || is.w != net.input.w || is.n < 1) {
    throw ShapeError("forward: input shape " + to_string(is) + " does not match declared (n, " +
                     std::to_string(net.input.c) + ", " + std::to_string(net.input.h) + ", " +
                     std::to_string(net.input.w) + ")");
  }
  ForwardTape tape;
  tape.entries.reserve(net.layers.size());
  Tensor cur = input;
  for (const LayerSpec& layer : net.layers) {
    TapeEntry entry = apply_layer(layer, std::move(cur));
    cur = entry.output;
    tape.entries.push_back(std::move(entry));
  }
  return tape;
}

const Tensor& pre_softmax_output(const Network& net, const ForwardTape& tape) {
  if (tape.entries.empty()) throw ConfigError("class_score: empty tape");
  if (tape.entries.size() != net.layers.size()) {
    throw ConfigError("class_score: tape does not belong to this network");
  }
  if (std::holds_alternative<SoftmaxLayer>(net.layers.back())) {
    return tape.entries.back().input;
  }
  return tape.entries.back().output;
}

float class_score(const Network& net, const ForwardTape& tape, index_t class_index) {
  const Tensor& scores = pre_softmax_output(net, tape);
  const Shape4 s = scores.shape();
  const index_t width = s.c * s.h * s.w;
  if (class_index < 0 || class_index >= width) {
    throw ConfigError("class_score: class index " + std::to_string(class_index) +
                      " out of range for " + std::to_string(width) + " output units");
  }
  return scores[class_index];
}

// --- FVNET serialization -----------------------------------------------------

namespace {

constexpr char kNetMagic[8] = {'F', 'V', 'N', 'E', 'T', 'v', '1', '\n'};

void append_u32le(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_floats_le(std::string& buf, std::span<const float> values) {
  for (float v : values) append_u32le(buf, std::bit_cast<std::uint32_t>(v));
}

json layer_header(const LayerSpec& layer) {
  json j;
  j["type"] = layer_type_name(layer);
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    const Shape4 ks = conv->kernel.shape();
    j["out_channels"] = ks.n;
    j["in_channels"] = ks.c;
    j["kernel"] = {ks.h, ks.w};
    j["stride"] = {conv->stride.y, conv->stride.x};
    j["pad"] = {conv->pad.y, conv->pad.x};
    j["weights"] = conv->kernel.size();
    j["bias"] = conv->bias.size();
  } else if (const auto* leaky = std::get_if<LeakyReluLayer>(&layer)) {
    j["alpha"] = leaky->alpha;
  } else if (const auto* mp = std::get_if<MaxPoolLayer>(&layer)) {
    j["window"] = {mp->window.y, mp->window.x};
    j["stride"] = {mp->stride.y, mp->stride.x};
  } else if (const auto* ap = std::get_if<AvgPoolLayer>(&layer)) {
    j["window"] = {ap->window.y, ap->window.x};
    j["stride"] = {ap->stride.y, ap->stride.x};
  } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    j["out_features"] = dense->out_features;
    j["in_features"] = dense->in_features;
    j["weights"] = dense->weights.size();
    j["bias"] = dense->bias.size();
  }
  return j;
}

Extent2 extent_from(const json& j, const char* field, index_t layer_index) {
  if (!j.contains(field) || !j[field].is_array() || j[field].size() != 2) {
    throw FormatError("fvnet: layer " + std::to_string(layer_index) + ": missing or malformed '" +
                      field + "'");
  }
  return Extent2{j[field][0].get<index_t>(), j[field][1].get<index_t>()};
}

}  // namespace

void save_network(const Network& net, std::ostream& out) {
  validate(net);
  json header;
  header["input"] = {net.input.c, net.input.h, net.input.w};
  header["layers"] = json::array();
  for (const LayerSpec& layer : net.layers) header["layers"].push_back(layer_header(layer));
  if (!net.labels.empty()) header["labels"] = net.labels;

  const std::string header_text = header.dump();
  std::string buf;
  buf.append(kNetMagic, 8);
  append_u32le(buf, static_cast<std::uint32_t>(header_text.size()));
  buf += header_text;
  for (const LayerSpec& layer : net.layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      append_floats_le(buf, conv->kernel.data());
      append_floats_le(buf, conv->bias);
    } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
      append_floats_le(buf, dense->weights);
      append_floats_le(buf, dense->bias);
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::string save_network_bytes(const Network& net) {
  std::ostringstream os;
  save_network(net, os);
  return os.str();
}

namespace {

struct BlobReader {
  std::istream& in;

  std::vector<float> take(std::size_t count, index_t layer_index) {
    std::vector<unsigned char> raw(count * 4);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError("fvnet: layer " + std::to_string(layer_index) +
                        ": truncated weight blob (wanted " + std::to_string(count) + " floats)");
    }
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t u = static_cast<std::uint32_t>(raw[i * 4]) |
                        static_cast<std::uint32_t>(raw[i * 4 + 1]) << 8 |
                        static_cast<std::uint32_t>(raw[i * 4 + 2]) << 16 |
                        static_cast<std::uint32_t>(raw[i * 4 + 3]) << 24;
      values[i] = std::bit_cast<float>(u);
    }
    return values;
  }
};

std::size_t declared_count(const json& j, const char* field, index_t layer_index) {
  if (!j.contains(field) || !j[field].is_number_unsigned()) {
    throw FormatError("fvnet: layer " + std::to_string(layer_index) + ": missing blob size '" +
                      field + "'");
  }
  const std::size_t count = j[field].get<std::size_t>();
  if (count > (std::size_t{1} << 28)) {
    throw FormatError("fvnet: layer " + std::to_string(layer_index) +
                      ": blob size exceeds the reader cap");
  }
  return count;
}

index_t geometry_field(const json& j, const char* field, index_t layer_index) {
  const index_t v = j.value(field, index_t{-1});
  if (v < 1 || v > (index_t{1} << 20)) {
    throw FormatError("fvnet: layer " + std::to_string(layer_index) + ": bad '" + field + "'");
  }
  return v;
}

LayerSpec parse_layer(const json& j, BlobReader& blobs, index_t index) {
  if (!j.contains("type") || !j["type"].is_string()) {
    throw FormatError("fvnet: layer " + std::to_string(index) + ": missing type");
  }
  const std::string type = j["type"].get<std::string>();
  if (type == "conv") {
    const index_t ko = geometry_field(j, "out_channels", index);
    const index_t ci = geometry_field(j, "in_channels", index);
    const Extent2 kext = extent_from(j, "kernel", index);
    if (kext.y < 1 || kext.x < 1 || kext.y > 4096 || kext.x > 4096) {
      throw FormatError("fvnet: layer " + std::to_string(index) + ": bad conv geometry");
    }
    const std::size_t wcount = declared_count(j, "weights", index);
    const std::size_t bcount = declared_count(j, "bias", index);
    if (wcount != static_cast<std::size_t>(ko * ci * kext.y * kext.x)) {
      throw FormatError("fvnet: layer " + std::to_string(index) +
                        ": weight blob size does not match conv geometry");
    }
    if (bcount != 0 && bcount != static_cast<std::size_t>(ko)) {
      throw FormatError("fvnet: layer " + std::to_string(index) +
                        ": bias blob size does not match out_channels");
    }
    ConvLayer conv;
    conv.stride = extent_from(j, "stride", index);
    conv.pad = extent_from(j, "pad", index);
    conv.kernel = Tensor(Shape4{ko, ci, kext.y, kext.x}, blobs.take(wcount, index));
    conv.bias = blobs.take(bcount, index);
    return conv;
  }
  if (type == "relu") return ReluLayer{};
  if (type == "leaky_relu") {
    if (!j.contains("alpha") || !j["alpha"].is_number()) {
      throw FormatError("fvnet: layer " + std::to_string(index) + ": leaky_relu needs alpha");
    }
    return LeakyReluLayer{j["alpha"].get<float>()};
  }
  if (type == "maxpool") return MaxPoolLayer{extent_from(j, "window", index), extent_from(j, "stride", index)};
  if (type == "avgpool") return AvgPoolLayer{extent_from(j, "window", index), extent_from(j, "stride", index)};
  if (type == "global_avgpool") return GlobalAvgPoolLayer{};
  if (type == "dense") {
    const index_t out_features = geometry_field(j, "out_features", index);
    const index_t in_features = geometry_field(j, "in_features", index);
    const std::size_t wcount = declared_count(j, "weights", index);
    const std::size_t bcount = declared_count(j, "bias", index);
    if (wcount != static_cast<std::size_t>(out_features * in_features)) {
      throw FormatError("fvnet: layer " + std::to_string(index) +
                        ": weight blob size does not match dense geometry");
    }
    if (bcount != 0 && bcount != static_cast<std::size_t>(out_features)) {
      throw FormatError("fvnet: layer " + std::to_string(index) +
                        ": bias blob size does not match out_features");
    }
    DenseLayer dense;
    dense.out_features = out_features;
    dense.in_features = in_features;
    dense.weights = blobs.take(wcount, index);
    dense.bias = blobs.take(bcount, index);
    return dense;
  }
  if (type == "flatten") return FlattenLayer{};
  if (type == "softmax") return SoftmaxLayer{};
  throw FormatError("fvnet: layer " + std::to_string(index) + ": unknown type '" + type + "'");
}

}  // namespace

Network load_network(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kNetMagic, 8) != 0) {
    throw FormatError("fvnet: bad magic (expected FVNETv1)");
  }
  unsigned char lenbuf[4];
  if (!in.read(reinterpret_cast<char*>(lenbuf), 4)) throw FormatError("fvnet: truncated header length");
  const std::uint32_t header_len = static_cast<std::uint32_t>(lenbuf[0]) |
                                   static_cast<std::uint32_t>(lenbuf[1]) << 8 |
                                   static_cast<std::uint32_t>(lenbuf[2]) << 16 |
                                   static_cast<std::uint32_t>(lenbuf[3]) << 24;
  if (header_len > (1u << 24)) {
    throw FormatError("fvnet: header length " + std::to_string(header_len) +
                      " exceeds the reader cap");
  }
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len))) {
    throw FormatError("fvnet: truncated header (declared " + std::to_string(header_len) + " bytes)");
  }
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("fvnet: header is not valid JSON: ") + e.what());
  }
  if (!header.contains("input") || !header["input"].is_array() || header["input"].size() != 3) {
    throw FormatError("fvnet: header missing input shape [c, h, w]");
  }
  Network net;
  try {
    net.input = InputShape{header["input"][0].get<index_t>(), header["input"][1].get<index_t>(),
                           header["input"][2].get<index_t>()};
    if (!header.contains("layers") || !header["layers"].is_array()) {
      throw FormatError("fvnet: header missing layer array");
    }
    BlobReader blobs{in};
    index_t index = 0;
    for (const json& jl : header["layers"]) {
      net.layers.push_back(parse_layer(jl, blobs, index));
      ++index;
    }
    if (header.contains("labels")) {
      net.labels = header["labels"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("fvnet: malformed header field: ") + e.what());
  }
  validate(net);
  return net;
}

Network load_network_bytes(std::string_view bytes) {
  std::istringstream is{std::string(bytes)};
  return load_network(is);
}

void save_network_file(const Network& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("fvnet: cannot open " + path + " for writing");
  save_network(net, f);
  if (!f) throw FormatError("fvnet: write failed for " + path);
}

Network load_network_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("fvnet: cannot open " + path);
  return load_network(f);
}

}  // namespace featviz
