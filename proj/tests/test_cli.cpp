#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "featviz/cli.hpp"
#include "featviz/image.hpp"
#include "featviz/net.hpp"
#include "support/paths.hpp"
#include "support/testnets.hpp"

using namespace featviz;
using featviz::test::fixture_path;
using featviz::test::temp_path;

namespace {

struct RunResult {
  int code = 0;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const std::string& model_path() {
  static const std::string path = fixture_path("cross_detector.fvnet");
  return path;
}

const std::string& image_path() {
  static const std::string path = fixture_path("cross.pgm");
  return path;
}

}  // namespace

TEST_CASE("cli forward: fixture image is classified as class 0") {
  const RunResult r = run_cli({"forward", "--model", model_path(), "--image", image_path()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("1  class 0") == 0);
  CHECK(r.out.find("cross") != std::string::npos);
  CHECK(r.out.find("prob") != std::string::npos);
}

TEST_CASE("cli inspect prints the layer table") {
  const RunResult r = run_cli({"inspect", "--model", model_path()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("conv") != std::string::npos);
  CHECK(r.out.find("global_avgpool") != std::string::npos);
  CHECK(r.out.find("dense") != std::string::npos);
  CHECK(r.out.find("total params 14") != std::string::npos);  // 9+1 conv, 2+2 dense
}

TEST_CASE("cli attribute: writes output + manifest, and rerunning is byte-identical") {
  const std::string out_path = temp_path("attr.ppm");
  const std::vector<std::string> args = {"attribute", "--model", model_path(),
                                         "--image",   image_path(), "--class", "0",
                                         "--out",     out_path};
  REQUIRE(run_cli(args).code == 0);
  const std::string first_ppm = slurp(out_path);
  const std::string first_manifest = slurp(out_path + ".json");
  CHECK(first_manifest.find("\"subcommand\": \"attribute\"") != std::string::npos);
  CHECK(first_manifest.find("\"epsilon\"") != std::string::npos);

  REQUIRE(run_cli(args).code == 0);
  CHECK(slurp(out_path) == first_ppm);
  CHECK(slurp(out_path + ".json") == first_manifest);
}

TEST_CASE("cli replay reproduces outputs byte for byte") {
  const std::string out_path = temp_path("attr_replay.ppm");
  const RunResult made = run_cli({"attribute", "--model", model_path(), "--image", image_path(),
                                  "--class", "0", "--relu-rule", "guided", "--conv-rule", "lrp",
                                  "--epsilon", "0.01", "--out", out_path});
  REQUIRE(made.code == 0);
  const std::string ppm = slurp(out_path);
  const std::string manifest = slurp(out_path + ".json");

  std::filesystem::remove(out_path);
  const RunResult replayed = run_cli({"replay", out_path + ".json"});
  REQUIRE(replayed.code == 0);
  CHECK(slurp(out_path) == ppm);
  CHECK(slurp(out_path + ".json") == manifest);
}

TEST_CASE("cli occlude: 3x3 box, stride 1 on a 5x5 image reports a 3x3 grid") {
  // build a 5x5 gray image on the fly
  const std::string small_image = temp_path("small.pgm");
  Tensor img(Shape4{1, 1, 5, 5}, 0.25f);
  img(0, 0, 2, 2) = 1.0f;
  save_image(img, small_image);

  Network net = featviz::test::make_cross_detector();
  net.input = InputShape{1, 5, 5};
  const std::string small_model = temp_path("small.fvnet");
  save_network_file(net, small_model);

  const std::string out_path = temp_path("occ.ppm");
  const RunResult r =
      run_cli({"occlude", "--model", small_model, "--image", small_image, "--class", "0", "--box",
               "3x3", "--stride", "1x1", "--fill", "gray", "--out", out_path});
  REQUIRE(r.code == 0);
  const auto manifest = nlohmann::json::parse(slurp(out_path + ".json"));
  CHECK(manifest["params"]["grid"] == nlohmann::json::array({3, 3}));
  CHECK(manifest["params"]["box"] == nlohmann::json::array({3, 3}));
}

TEST_CASE("cli occlude: workers 1 and 8 write identical bytes") {
  const std::string out1 = temp_path("occ_w1.ppm");
  const std::string out8 = temp_path("occ_w8.ppm");
  const std::vector<std::string> common = {"occlude", "--model", model_path(), "--image",
                                           image_path(), "--class", "0", "--box", "3x3",
                                           "--stride", "1x1", "--fill", "random:42"};
  auto with = [&](const std::string& out, const std::string& workers) {
    std::vector<std::string> args = common;
    args.insert(args.end(), {"--out", out, "--workers", workers});
    return args;
  };
  REQUIRE(run_cli(with(out1, "1")).code == 0);
  REQUIRE(run_cli(with(out8, "8")).code == 0);
  CHECK(slurp(out1) == slurp(out8));
}

TEST_CASE("cli cam writes an upsampled map") {
  const std::string out_path = temp_path("cam.ppm");
  const RunResult r = run_cli({"cam", "--model", model_path(), "--image", image_path(), "--class",
                               "0", "--upsample", "nearest:2", "--out", out_path});
  REQUIRE(r.code == 0);
  std::ifstream f(out_path, std::ios::binary);
  const Tensor rendered = [&] {
    // PPM parses back: 7x7 feature map upsampled by 2 -> 14x14
    return read_image(f);
  }();
  CHECK(rendered.shape().h == 14);
  CHECK(rendered.shape().w == 14);
}

TEST_CASE("cli reconstruct writes numbered snapshots and a manifest") {
  const std::string out_dir = temp_path("recon_run");
  const RunResult r = run_cli({"reconstruct", "--model", model_path(), "--maximize-class", "0",
                               "--steps", "6", "--lr", "0.05", "--record-every", "3", "--init",
                               "rand:5", "--out-dir", out_dir});
  REQUIRE(r.code == 0);
  namespace fs = std::filesystem;
  CHECK(fs::exists(fs::path(out_dir) / "step_000003.fvt"));
  CHECK(fs::exists(fs::path(out_dir) / "step_000006.fvt"));
  const auto manifest = nlohmann::json::parse(slurp((fs::path(out_dir) / "manifest.json").string()));
  CHECK(manifest["loss_history"].size() == 7);  // iterates 0..6
  CHECK(manifest["seed"] == 5);

  // replaying the run manifest reproduces every snapshot byte for byte
  const std::string snap = slurp((fs::path(out_dir) / "step_000006.fvt").string());
  REQUIRE(run_cli({"replay", (fs::path(out_dir) / "manifest.json").string()}).code == 0);
  CHECK(slurp((fs::path(out_dir) / "step_000006.fvt").string()) == snap);
}

TEST_CASE("cli exit codes: usage, data, and missing-file errors") {
  CHECK(run_cli({"occlude", "--frobnicate"}).code == 1);   // unknown flag
  CHECK(run_cli({}).code == 1);                            // missing subcommand
  CHECK(run_cli({"forward", "--model", "does_not_exist.fvnet", "--image", image_path()}).code ==
        2);
  CHECK(run_cli({"forward", "--model", model_path(), "--image", "missing.pgm"}).code == 2);
  CHECK(run_cli({"attribute", "--model", model_path(), "--image", image_path(), "--class", "9",
                 "--out", temp_path("never.ppm")})
            .code == 2);
  // box larger than the image is a data error
  CHECK(run_cli({"occlude", "--model", model_path(), "--image", image_path(), "--class", "0",
                 "--box", "99x99", "--out", temp_path("never2.ppm")})
            .code == 2);
  // malformed box syntax is a usage error
  CHECK(run_cli({"occlude", "--model", model_path(), "--image", image_path(), "--class", "0",
                 "--box", "3by3", "--out", temp_path("never3.ppm")})
            .code == 1);
  // reconstruct needs exactly one objective
  CHECK(run_cli({"reconstruct", "--model", model_path(), "--out-dir", temp_path("never4")}).code ==
        1);
}

TEST_CASE("cli exit code 3 on numerical divergence") {
  const RunResult r =
      run_cli({"reconstruct", "--model", model_path(), "--maximize-class", "0", "--steps", "200",
               "--lr", "1e6", "--lambda-p", "1", "--p", "6", "--init", "rand:1", "--out-dir",
               temp_path("diverge")});
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("cli occlude: FEATVIZ_WORKERS is the fallback for --workers") {
  const std::string out_env = temp_path("occ_env.ppm");
  const std::string out_flag = temp_path("occ_flag.ppm");
  const std::vector<std::string> base = {"occlude", "--model", model_path(), "--image",
                                         image_path(), "--class", "0", "--box", "3x3",
                                         "--stride", "2x2", "--fill", "random:3"};
  setenv("FEATVIZ_WORKERS", "4", 1);
  std::vector<std::string> env_args = base;
  env_args.insert(env_args.end(), {"--out", out_env});
  REQUIRE(run_cli(env_args).code == 0);
  unsetenv("FEATVIZ_WORKERS");

  std::vector<std::string> flag_args = base;
  flag_args.insert(flag_args.end(), {"--out", out_flag, "--workers", "4"});
  REQUIRE(run_cli(flag_args).code == 0);

  CHECK(slurp(out_env) == slurp(out_flag));
  const auto manifest = nlohmann::json::parse(slurp(out_env + ".json"));
  CHECK(manifest["params"]["workers"] == 4);
}

TEST_CASE("cli help exits zero") {
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"attribute", "--help"}).code == 0);
}
