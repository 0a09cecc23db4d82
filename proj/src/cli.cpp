#include "featviz/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "featviz/attribution.hpp"
#include "featviz/image.hpp"
#include "featviz/net.hpp"
#include "featviz/occlusion.hpp"
#include "featviz/reconstruct.hpp"
#include "featviz/version.hpp"

namespace featviz::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- flag-value parsers ------------------------------------------------------

index_t parse_int(const std::string& text, const char* what) {
  index_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw UsageError(std::string("expected an integer for ") + what + ", got '" + text + "'");
  }
  return value;
}

// "BHxBW" -> Extent2
Extent2 parse_extent_pair(const std::string& text, const char* flag) {
  const auto split = text.find('x');
  if (split == std::string::npos) {
    throw UsageError(std::string(flag) + " expects the form HxW, got '" + text + "'");
  }
  return Extent2{parse_int(text.substr(0, split), flag), parse_int(text.substr(split + 1), flag)};
}

// gray | rgb:R,G,B | random:SEED
FillSpec parse_fill(const std::string& text) {
  if (text == "gray") return SolidFill{{0.5f}};
  if (text.rfind("rgb:", 0) == 0) {
    std::vector<float> values;
    std::stringstream ss(text.substr(4));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const index_t v = parse_int(item, "--fill rgb component");
      if (v < 0 || v > 255) throw UsageError("--fill rgb components must lie in 0..255");
      values.push_back(static_cast<float>(v) / 255.0f);
    }
    if (values.size() != 3) throw UsageError("--fill rgb: expects three components R,G,B");
    return SolidFill{values};
  }
  if (text.rfind("random:", 0) == 0) {
    return RandomFill{static_cast<std::uint64_t>(parse_int(text.substr(7), "--fill random seed")),
                      0.0f, 1.0f};
  }
  throw UsageError("--fill expects gray, rgb:R,G,B or random:SEED, got '" + text + "'");
}

// zeros | rand:SEED
InitSpec parse_init(const std::string& text) {
  if (text == "zeros") return ZeroInit{};
  if (text.rfind("rand:", 0) == 0) {
    return RandomUniformInit{static_cast<std::uint64_t>(parse_int(text.substr(5), "--init seed")),
                             0.0f, 1.0f};
  }
  throw UsageError("--init expects zeros or rand:SEED, got '" + text + "'");
}

// none | nearest:F | bilinear:F
void parse_upsample(const std::string& text, RenderSpec& spec) {
  if (text == "none") {
    spec.upsample = UpsampleMode::None;
    spec.factor = 1;
    return;
  }
  const auto split = text.find(':');
  if (split == std::string::npos) {
    throw UsageError("--upsample expects none, nearest:F or bilinear:F, got '" + text + "'");
  }
  const std::string mode = text.substr(0, split);
  const index_t factor = parse_int(text.substr(split + 1), "--upsample factor");
  if (factor < 1) throw UsageError("--upsample factor must be >= 1");
  if (mode == "nearest") {
    spec.upsample = UpsampleMode::Nearest;
  } else if (mode == "bilinear") {
    spec.upsample = UpsampleMode::Bilinear;
  } else {
    throw UsageError("--upsample mode must be nearest or bilinear, got '" + mode + "'");
  }
  spec.factor = factor;
}

// absmax | pclip:Q
void parse_normalize(const std::string& text, RenderSpec& spec) {
  if (text == "absmax") {
    spec.norm = NormMode::AbsMax;
    return;
  }
  if (text.rfind("pclip:", 0) == 0) {
    spec.norm = NormMode::PercentileClip;
    try {
      spec.percentile = std::stof(text.substr(6));
    } catch (const std::exception&) {
      throw UsageError("--normalize pclip: expects a number, got '" + text + "'");
    }
    return;
  }
  throw UsageError("--normalize expects absmax or pclip:Q, got '" + text + "'");
}

RenderSpec parse_render(const std::string& colormap, const std::string& normalize,
                        const std::string& upsample) {
  RenderSpec spec;
  try {
    spec.colormap = colormap_from_name(colormap);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  parse_normalize(normalize, spec);
  parse_upsample(upsample, spec);
  return spec;
}

json render_params(const RenderSpec& spec) {
  json j;
  j["colormap"] = to_string(spec.colormap);
  j["normalize"] = spec.norm == NormMode::AbsMax
                       ? std::string("absmax")
                       : "pclip:" + std::to_string(spec.percentile);
  switch (spec.upsample) {
    case UpsampleMode::None: j["upsample"] = "none"; break;
    case UpsampleMode::Nearest: j["upsample"] = "nearest:" + std::to_string(spec.factor); break;
    case UpsampleMode::Bilinear: j["upsample"] = "bilinear:" + std::to_string(spec.factor); break;
  }
  return j;
}

int resolve_workers(int flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("FEATVIZ_WORKERS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw UsageError("FEATVIZ_WORKERS must be an integer, got '" + std::string(env) + "'");
    }
  }
  return 1;
}

// --- manifests ---------------------------------------------------------------

json base_manifest(const std::string& subcommand, const std::vector<std::string>& argv) {
  json m;
  m["subcommand"] = subcommand;
  m["argv"] = argv;
  m["version"] = kVersion;
  m["seed"] = nullptr;
  return m;
}

void write_manifest(const json& manifest, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("manifest: cannot open " + path + " for writing");
  f << manifest.dump(2) << '\n';
}

std::string fmt_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// --- subcommand bodies ---------------------------------------------------------

struct CommonModelImage {
  std::string model_path;
  std::string image_path;
};

int cmd_forward(const CommonModelImage& paths, index_t topk, std::ostream& out) {
  const Network net = load_network_file(paths.model_path);
  const Tensor image = load_image(paths.image_path);
  const ForwardTape tape = forward(net, image);
  const Tensor& scores = pre_softmax_output(net, tape);
  const bool has_softmax = std::holds_alternative<SoftmaxLayer>(net.layers.back());
  const Tensor& probs = tape.entries.back().output;

  const index_t width = scores.size();
  std::vector<index_t> order(static_cast<std::size_t>(width));
  std::iota(order.begin(), order.end(), index_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](index_t a, index_t b) { return scores[a] > scores[b]; });

  const index_t k = std::min(topk < 1 ? width : topk, width);
  for (index_t rank = 0; rank < k; ++rank) {
    const index_t cls = order[static_cast<std::size_t>(rank)];
    out << rank + 1 << "  class " << cls << "  score " << fmt_float(scores[cls]);
    if (has_softmax) out << "  prob " << fmt_float(probs[cls]);
    if (static_cast<std::size_t>(cls) < net.labels.size()) {
      out << "  " << net.labels[static_cast<std::size_t>(cls)];
    }
    out << '\n';
  }
  return 0;
}

int cmd_inspect(const std::string& model_path, std::ostream& out) {
  const Network net = load_network_file(model_path);
  const auto shapes = chain_shapes(net, 1);
  out << "input  (" << net.input.c << ", " << net.input.h << ", " << net.input.w << ")\n";
  index_t total = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const index_t params = layer_param_count(net.layers[i]);
    total += params;
    const Shape4& s = shapes[i];
    out << i << "  " << layer_type_name(net.layers[i]) << "  (" << s.c << ", " << s.h << ", "
        << s.w << ")  params " << params << '\n';
  }
  out << "total params " << total << '\n';
  if (!net.labels.empty()) {
    out << "labels";
    for (const auto& label : net.labels) out << ' ' << label;
    out << '\n';
  }
  return 0;
}

struct AttributeArgs {
  CommonModelImage paths;
  index_t class_index = 0;
  std::string relu_rule = "backprop";
  std::string conv_rule = "gradient";
  float epsilon = 0.001f;
  std::string out_path;
  std::string map_out;
  std::string colormap = "signed";
  std::string normalize = "absmax";
  std::string upsample = "none";
};

int cmd_attribute(const AttributeArgs& a, const std::vector<std::string>& argv) {
  const RenderSpec spec = parse_render(a.colormap, a.normalize, a.upsample);
  if (a.conv_rule != "gradient" && a.conv_rule != "lrp") {
    throw UsageError("--conv-rule expects gradient or lrp, got '" + a.conv_rule + "'");
  }
  const Network net = load_network_file(a.paths.model_path);
  const Tensor image = load_image(a.paths.image_path);

  AttributionConfig config;
  config.relu_rule = relu_rule_from_name(a.relu_rule);
  config.conv_rule =
      a.conv_rule == "gradient" ? ConvRule::gradient() : ConvRule::lrp(a.epsilon);
  config.target = ClassUnit{a.class_index};

  const AttributionMap map = attribute(net, image, config);
  save_image(render(map.values, spec), a.out_path);
  if (!a.map_out.empty()) save_fvt(map.values, a.map_out);

  json manifest = base_manifest("attribute", argv);
  manifest["inputs"] = {{"model", a.paths.model_path}, {"image", a.paths.image_path}};
  manifest["outputs"] = json::array({a.out_path});
  if (!a.map_out.empty()) manifest["outputs"].push_back(a.map_out);
  json params = render_params(spec);
  params["class"] = a.class_index;
  params["relu_rule"] = a.relu_rule;
  params["conv_rule"] = a.conv_rule;
  params["epsilon"] = a.epsilon;
  manifest["params"] = params;
  write_manifest(manifest, a.out_path + ".json");
  return 0;
}

struct OccludeArgs {
  CommonModelImage paths;
  index_t class_index = 0;
  std::string box;
  std::string stride = "1x1";
  std::string fill = "gray";
  std::string out_path;
  std::string map_out;
  std::string colormap = "signed";
  std::string normalize = "absmax";
  std::string upsample = "none";
  int workers = 1;
  bool workers_given = false;
};

int cmd_occlude(const OccludeArgs& a, const std::vector<std::string>& argv) {
  const RenderSpec spec = parse_render(a.colormap, a.normalize, a.upsample);
  OcclusionConfig config;
  config.box = parse_extent_pair(a.box, "--box");
  config.stride = parse_extent_pair(a.stride, "--stride");
  config.fill = parse_fill(a.fill);
  config.target = ClassUnit{a.class_index};
  const int workers = resolve_workers(a.workers, a.workers_given);

  const Network net = load_network_file(a.paths.model_path);
  const Tensor image = load_image(a.paths.image_path);
  const Heatmap map = occlusion_map(net, image, config, workers);
  save_image(render(map, spec), a.out_path);
  if (!a.map_out.empty()) save_fvt(map.values, a.map_out);

  json manifest = base_manifest("occlude", argv);
  manifest["inputs"] = {{"model", a.paths.model_path}, {"image", a.paths.image_path}};
  manifest["outputs"] = json::array({a.out_path});
  if (!a.map_out.empty()) manifest["outputs"].push_back(a.map_out);
  json params = render_params(spec);
  params["class"] = a.class_index;
  params["box"] = {config.box.y, config.box.x};
  params["stride"] = {config.stride.y, config.stride.x};
  params["grid"] = {map.rows(), map.cols()};
  params["input_size"] = {map.input_size.y, map.input_size.x};
  params["fill"] = a.fill;
  params["sign_convention"] = map.sign_convention;
  params["workers"] = workers;
  manifest["params"] = params;
  if (const auto* random = std::get_if<RandomFill>(&config.fill)) {
    manifest["seed"] = random->seed;
  }
  write_manifest(manifest, a.out_path + ".json");
  return 0;
}

struct CamArgs {
  CommonModelImage paths;
  index_t class_index = 0;
  std::string upsample = "none";
  std::string colormap = "signed";
  std::string normalize = "absmax";
  std::string out_path;
  std::string map_out;
};

int cmd_cam(const CamArgs& a, const std::vector<std::string>& argv) {
  const RenderSpec spec = parse_render(a.colormap, a.normalize, a.upsample);
  const Network net = load_network_file(a.paths.model_path);
  const Tensor image = load_image(a.paths.image_path);
  const Heatmap map = cam(net, image, a.class_index);
  save_image(render(map, spec), a.out_path);
  if (!a.map_out.empty()) save_fvt(map.values, a.map_out);

  json manifest = base_manifest("cam", argv);
  manifest["inputs"] = {{"model", a.paths.model_path}, {"image", a.paths.image_path}};
  manifest["outputs"] = json::array({a.out_path});
  if (!a.map_out.empty()) manifest["outputs"].push_back(a.map_out);
  json params = render_params(spec);
  params["class"] = a.class_index;
  params["feature_resolution"] = {map.rows(), map.cols()};
  params["scale"] = {map.scale_y, map.scale_x};
  manifest["params"] = params;
  write_manifest(manifest, a.out_path + ".json");
  return 0;
}

struct ReconstructArgs {
  std::string model_path;
  index_t maximize_class = -1;
  bool maximize_given = false;
  index_t invert_layer = -1;
  bool invert_given = false;
  std::string reference_path;
  index_t steps = 200;
  float lr = 0.1f;
  float lambda_p = 0.0f;
  float p = 6.0f;
  float lambda_tv = 0.0f;
  std::string init = "zeros";
  index_t record_every = 0;
  std::string out_dir;
};

int cmd_reconstruct(const ReconstructArgs& a, const std::vector<std::string>& argv) {
  if (a.maximize_given == a.invert_given) {
    throw UsageError("reconstruct needs exactly one of --maximize-class or --invert-layer");
  }
  if (a.invert_given && a.reference_path.empty()) {
    throw UsageError("--invert-layer requires --reference R.fvt");
  }
  const InitSpec init = parse_init(a.init);
  const Network net = load_network_file(a.model_path);

  Objective objective;
  if (a.maximize_given) {
    objective = MaximizeUnit{ClassUnit{a.maximize_class}};
  } else {
    objective = MatchRepresentation{a.invert_layer, load_fvt(a.reference_path)};
  }
  RegConfig reg{a.lambda_p, a.p, a.lambda_tv};
  OptConfig opt{a.steps, a.lr, init, a.record_every};

  const ReconstructionResult result = reconstruct(net, objective, reg, opt);

  fs::create_directories(a.out_dir);
  std::vector<std::string> outputs;
  for (const auto& [step, tensor] : result.trajectory) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06lld.fvt", static_cast<long long>(step));
    const std::string path = (fs::path(a.out_dir) / name).string();
    save_fvt(tensor, path);
    outputs.push_back(path);
  }

  json manifest = base_manifest("reconstruct", argv);
  manifest["inputs"] = {{"model", a.model_path}};
  if (a.invert_given) manifest["inputs"]["reference"] = a.reference_path;
  manifest["outputs"] = outputs;
  json params;
  if (a.maximize_given) {
    params["maximize_class"] = a.maximize_class;
  } else {
    params["invert_layer"] = a.invert_layer;
  }
  params["steps"] = a.steps;
  params["lr"] = a.lr;
  params["lambda_p"] = a.lambda_p;
  params["p"] = a.p;
  params["lambda_tv"] = a.lambda_tv;
  params["init"] = a.init;
  params["record_every"] = a.record_every;
  manifest["params"] = params;
  if (const auto* random = std::get_if<RandomUniformInit>(&init)) {
    manifest["seed"] = random->seed;
  }
  manifest["loss_history"] = result.loss_history;
  write_manifest(manifest, (fs::path(a.out_dir) / "manifest.json").string());
  return 0;
}

int cmd_replay(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw FormatError("replay: cannot open " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(std::string("replay: manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("argv") || !manifest["argv"].is_array()) {
    throw FormatError("replay: manifest has no argv record");
  }
  const auto argv = manifest["argv"].get<std::vector<std::string>>();
  return run(argv, out, err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"feature visualization toolkit: occlusion sweeps, backward-rule attribution, "
               "class activation maps and input reconstruction"};
  app.name("featviz");

  int exit_code = 0;

  // forward
  CommonModelImage fwd_paths;
  index_t topk = 5;
  auto* sub_forward = app.add_subcommand("forward", "Run the network and print class scores");
  sub_forward->add_option("--model", fwd_paths.model_path, "FVNET model file")->required();
  sub_forward->add_option("--image", fwd_paths.image_path, "PPM/PGM input image")->required();
  sub_forward->add_option("--topk", topk, "How many classes to print");
  sub_forward->callback([&] { exit_code = cmd_forward(fwd_paths, topk, out); });

  // inspect
  std::string inspect_model;
  auto* sub_inspect = app.add_subcommand("inspect", "Print the layer table of a model");
  sub_inspect->add_option("--model", inspect_model, "FVNET model file")->required();
  sub_inspect->callback([&] { exit_code = cmd_inspect(inspect_model, out); });

  // attribute
  AttributeArgs attr;
  auto* sub_attr = app.add_subcommand("attribute", "Backward-rule contribution map for one class");
  sub_attr->add_option("--model", attr.paths.model_path)->required();
  sub_attr->add_option("--image", attr.paths.image_path)->required();
  sub_attr->add_option("--class", attr.class_index, "Target class index")->required();
  sub_attr->add_option("--relu-rule", attr.relu_rule, "backprop | deconvnet | guided");
  sub_attr->add_option("--conv-rule", attr.conv_rule, "gradient | lrp");
  sub_attr->add_option("--epsilon", attr.epsilon, "LRP stabilizer")
      ->check(CLI::PositiveNumber);
  sub_attr->add_option("--out", attr.out_path, "Rendered map (PPM)")->required();
  sub_attr->add_option("--map-out", attr.map_out, "Also write the raw map (.fvt)");
  sub_attr->add_option("--colormap", attr.colormap, "gray | signed | hot");
  sub_attr->add_option("--normalize", attr.normalize, "absmax | pclip:Q");
  sub_attr->add_option("--upsample", attr.upsample, "none | nearest:F | bilinear:F");
  sub_attr->callback([&, &argv = args] { exit_code = cmd_attribute(attr, argv); });

  // occlude
  OccludeArgs occ;
  auto* sub_occ = app.add_subcommand("occlude", "Occlusion-sweep importance heatmap");
  sub_occ->add_option("--model", occ.paths.model_path)->required();
  sub_occ->add_option("--image", occ.paths.image_path)->required();
  sub_occ->add_option("--class", occ.class_index, "Target class index")->required();
  sub_occ->add_option("--box", occ.box, "Occluder size BHxBW")->required();
  sub_occ->add_option("--stride", occ.stride, "Sweep stride SYxSX");
  sub_occ->add_option("--fill", occ.fill, "gray | rgb:R,G,B | random:SEED");
  sub_occ->add_option("--out", occ.out_path, "Rendered heatmap (PPM)")->required();
  sub_occ->add_option("--map-out", occ.map_out, "Also write the raw heatmap (.fvt)");
  sub_occ->add_option("--colormap", occ.colormap, "gray | signed | hot");
  sub_occ->add_option("--normalize", occ.normalize, "absmax | pclip:Q");
  sub_occ->add_option("--upsample", occ.upsample, "none | nearest:F | bilinear:F");
  auto* workers_opt =
      sub_occ->add_option("--workers", occ.workers, "Concurrent sweep workers (or FEATVIZ_WORKERS)")
          ->check(CLI::PositiveNumber);
  sub_occ->callback([&, &argv = args] {
    occ.workers_given = workers_opt->count() > 0;
    exit_code = cmd_occlude(occ, argv);
  });

  // cam
  CamArgs cam_args;
  auto* sub_cam = app.add_subcommand("cam", "Class activation map of a GAP-tailed model");
  sub_cam->add_option("--model", cam_args.paths.model_path)->required();
  sub_cam->add_option("--image", cam_args.paths.image_path)->required();
  sub_cam->add_option("--class", cam_args.class_index, "Target class index")->required();
  sub_cam->add_option("--upsample", cam_args.upsample, "none | nearest:F | bilinear:F");
  sub_cam->add_option("--colormap", cam_args.colormap, "gray | signed | hot");
  sub_cam->add_option("--normalize", cam_args.normalize, "absmax | pclip:Q");
  sub_cam->add_option("--out", cam_args.out_path, "Rendered map (PPM)")->required();
  sub_cam->add_option("--map-out", cam_args.map_out, "Also write the raw map (.fvt)");
  sub_cam->callback([&, &argv = args] { exit_code = cmd_cam(cam_args, argv); });

  // reconstruct
  ReconstructArgs rec;
  auto* sub_rec = app.add_subcommand("reconstruct", "Gradient-ascent input reconstruction");
  sub_rec->add_option("--model", rec.model_path)->required();
  auto* max_opt = sub_rec->add_option("--maximize-class", rec.maximize_class,
                                      "Maximize this class unit");
  auto* inv_opt = sub_rec->add_option("--invert-layer", rec.invert_layer,
                                      "Match a recorded representation at this layer");
  sub_rec->add_option("--reference", rec.reference_path, "Reference representation (.fvt)");
  sub_rec->add_option("--steps", rec.steps, "Gradient steps")->check(CLI::NonNegativeNumber);
  sub_rec->add_option("--lr", rec.lr, "Step size")->check(CLI::PositiveNumber);
  sub_rec->add_option("--lambda-p", rec.lambda_p, "L_p penalty weight")
      ->check(CLI::NonNegativeNumber);
  sub_rec->add_option("--p", rec.p, "L_p exponent (>= 1)");
  sub_rec->add_option("--lambda-tv", rec.lambda_tv, "Total-variation penalty weight")
      ->check(CLI::NonNegativeNumber);
  sub_rec->add_option("--init", rec.init, "zeros | rand:SEED");
  sub_rec->add_option("--record-every", rec.record_every, "Snapshot period (0 = final only)")
      ->check(CLI::NonNegativeNumber);
  sub_rec->add_option("--out-dir", rec.out_dir, "Directory for snapshots + manifest")->required();
  sub_rec->callback([&, &argv = args] {
    rec.maximize_given = max_opt->count() > 0;
    rec.invert_given = inv_opt->count() > 0;
    exit_code = cmd_reconstruct(rec, argv);
  });

  // replay
  std::string manifest_path;
  auto* sub_replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  sub_replay->add_option("manifest", manifest_path, "Manifest JSON file")->required();
  sub_replay->callback([&] { exit_code = cmd_replay(manifest_path, out, err); });

  app.require_subcommand(1);

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("featviz");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    return exit_code;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    err << "featviz: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    err << "featviz: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "featviz: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace featviz::cli
