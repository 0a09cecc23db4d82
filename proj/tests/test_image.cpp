#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "featviz/image.hpp"
#include "featviz/rng.hpp"
#include "support/testnets.hpp"

using namespace featviz;
using featviz::test::random_input;

namespace {

std::string write_to_string(const Tensor& t) {
  std::ostringstream os;
  write_image(t, os);
  return os.str();
}

}  // namespace

TEST_CASE("read_image: single white P6 pixel becomes 1.0") {
  std::stringstream file("P6\n1 1\n255\n\xff\xff\xff");
  const Tensor t = read_image(file);
  REQUIRE(t.shape() == Shape4{1, 3, 1, 1});
  CHECK(t[0] == 1.0f);
  CHECK(t[1] == 1.0f);
  CHECK(t[2] == 1.0f);
}

TEST_CASE("read_image: hand-built 2x2 gradient PGM") {
  std::string bytes = "P5\n2 2\n255\n";
  bytes.push_back('\x00');
  bytes.push_back('\x55');  // 85
  bytes.push_back('\xaa');  // 170
  bytes.push_back('\xff');  // 255
  std::stringstream file(bytes);
  const Tensor t = read_image(file);
  REQUIRE(t.shape() == Shape4{1, 1, 2, 2});
  CHECK(t[0] == doctest::Approx(0.0f));
  CHECK(t[1] == doctest::Approx(85.0f / 255.0f));
  CHECK(t[2] == doctest::Approx(170.0f / 255.0f));
  CHECK(t[3] == doctest::Approx(1.0f));
}

TEST_CASE("write(read(x)) reproduces canonical files byte for byte") {
  // canonical = single whitespace after each header token
  std::string pgm = "P5\n3 2\n255\n";
  for (int i = 0; i < 6; ++i) pgm.push_back(static_cast<char>(40 * i));
  {
    std::stringstream in(pgm);
    const Tensor t = read_image(in);
    CHECK(write_to_string(t) == pgm);
  }

  std::string ppm = "P6\n2 2\n255\n";
  for (int i = 0; i < 12; ++i) ppm.push_back(static_cast<char>(255 - 20 * i));
  {
    std::stringstream in(ppm);
    const Tensor t = read_image(in);
    CHECK(write_to_string(t) == ppm);
  }
}

TEST_CASE("read_image accepts comments and extra whitespace") {
  std::string bytes = "P5 # comment\n# another\n 2\t1 \n255\n\x01\x02";
  std::stringstream file(bytes);
  const Tensor t = read_image(file);
  REQUIRE(t.shape() == Shape4{1, 1, 1, 2});
  CHECK(t[0] == doctest::Approx(1.0f / 255.0f));
}

TEST_CASE("read_image rejects malformed input") {
  std::stringstream bad1("P4\n1 1\n255\nx");
  CHECK_THROWS_AS(read_image(bad1), FormatError);

  std::stringstream bad2("P5\n2 2\n65535\n....");
  CHECK_THROWS_AS(read_image(bad2), FormatError);

  std::stringstream bad3("P5\n2 2\n255\n\x01\x02");  // payload too short
  CHECK_THROWS_AS(read_image(bad3), FormatError);

  std::stringstream bad4("P5\n-2 2\n255\n");
  CHECK_THROWS_AS(read_image(bad4), FormatError);
}

TEST_CASE("write_image rejects tensors that are not 1- or 3-channel") {
  std::ostringstream sink;
  CHECK_THROWS_AS(write_image(Tensor(Shape4{1, 2, 2, 2}), sink), ShapeError);
  CHECK_THROWS_AS(write_image(Tensor(Shape4{2, 1, 2, 2}), sink), ShapeError);
}

TEST_CASE("render: zero map under Signed is uniform white") {
  const Tensor map(Shape4{1, 1, 3, 3});
  const RgbImage img = render(map, RenderSpec{});
  for (const auto byte : img.pixels) CHECK(byte == 255);
}

TEST_CASE("render: AbsMax divides by the max magnitude") {
  Tensor map(Shape4{1, 1, 1, 2}, {1.0f, -2.0f});
  RenderSpec spec;
  spec.colormap = Colormap::Grayscale;
  const RgbImage img = render(map, spec);
  // normalized: |0.5| and |1| -> 128 and 255
  CHECK(img.pixel(0, 0)[0] == 128);
  CHECK(img.pixel(0, 1)[0] == 255);
}

TEST_CASE("render: PercentileClip saturates only the outlier") {
  Tensor map(Shape4{1, 1, 10, 10});
  std::mt19937_64 eng(5);
  for (index_t i = 0; i < 99; ++i) map[i] = uniform_float(eng, 0.5f, 1.0f);
  map[99] = 1000.0f;

  RenderSpec spec;
  spec.colormap = Colormap::Grayscale;
  spec.norm = NormMode::PercentileClip;
  spec.percentile = 99.0f;

  // explicit nearest-rank percentile of |v| as the oracle
  std::vector<float> mags(map.data().begin(), map.data().end());
  for (auto& m : mags) m = std::abs(m);
  std::sort(mags.begin(), mags.end());
  const float scale = mags[static_cast<std::size_t>(std::ceil(0.99 * 100.0)) - 1];
  REQUIRE(scale < 2.0f);  // the outlier is beyond the 99th percentile

  const RgbImage img = render(map, spec);
  int interior_saturated = 0;
  for (index_t i = 0; i < 99; ++i) {
    const auto expect = static_cast<std::uint8_t>(
        std::lround(std::clamp(map[i] / scale, -1.0f, 1.0f) * 255.0));
    CHECK(img.pixels[static_cast<std::size_t>(3 * i)] == expect);
    if (img.pixels[static_cast<std::size_t>(3 * i)] == 255) ++interior_saturated;
  }
  CHECK(interior_saturated < 99);               // interior is not washed out
  CHECK(img.pixels[3 * 99] == 255);             // the outlier clamps
}

TEST_CASE("render is invariant under power-of-two rescaling with AbsMax") {
  // power-of-two factors scale float data exactly, so the quotient v / max|v|
  // is bit-identical and so is the image
  const Tensor map = random_input(55, {1, 8, 8});
  RenderSpec spec;
  spec.colormap = Colormap::Signed;
  const RgbImage base = render(map, spec);
  for (float factor : {0.5f, 2.0f, 8.0f}) {
    Tensor scaled = map;
    for (index_t i = 0; i < scaled.size(); ++i) scaled[i] *= factor;
    const RgbImage other = render(scaled, spec);
    CHECK(other.pixels == base.pixels);
  }
}

TEST_CASE("signed colormap mirrors v and -v in red/blue") {
  Tensor map(Shape4{1, 1, 1, 2}, {0.37f, -0.37f});
  const RgbImage img = render(map, RenderSpec{});
  const auto* pos = img.pixel(0, 0);
  const auto* neg = img.pixel(0, 1);
  CHECK(pos[0] == neg[2]);
  CHECK(pos[1] == neg[1]);
  CHECK(pos[2] == neg[0]);
}

TEST_CASE("multi-channel maps reduce by max absolute value") {
  Tensor map(Shape4{1, 3, 1, 1}, {0.1f, -0.9f, 0.3f});
  RenderSpec spec;
  spec.colormap = Colormap::Grayscale;
  const RgbImage img = render(map, spec);
  CHECK(img.pixel(0, 0)[0] == 255);  // |-0.9| dominates and normalizes to 1
}

TEST_CASE("nearest upsampling replicates pixels") {
  Tensor map(Shape4{1, 1, 1, 2}, {1.0f, 0.0f});
  RenderSpec spec;
  spec.colormap = Colormap::Grayscale;
  spec.upsample = UpsampleMode::Nearest;
  spec.factor = 3;
  const RgbImage img = render(map, spec);
  REQUIRE(img.width == 6);
  REQUIRE(img.height == 3);
  for (index_t y = 0; y < 3; ++y) {
    for (index_t x = 0; x < 3; ++x) {
      CHECK(img.pixel(y, x)[0] == 255);
      CHECK(img.pixel(y, x + 3)[0] == 0);
    }
  }
}

TEST_CASE("bilinear upsampling interpolates between cells") {
  Tensor map(Shape4{1, 1, 1, 2}, {0.0f, 1.0f});
  RenderSpec spec;
  spec.colormap = Colormap::Grayscale;
  spec.upsample = UpsampleMode::Bilinear;
  spec.factor = 2;
  const RgbImage img = render(map, spec);
  REQUIRE(img.width == 4);
  const int a = img.pixel(0, 0)[0];
  const int b = img.pixel(0, 1)[0];
  const int c = img.pixel(0, 2)[0];
  const int d = img.pixel(0, 3)[0];
  CHECK(a == 0);
  CHECK(d == 255);
  CHECK(a <= b);
  CHECK(b <= c);
  CHECK(c <= d);
  CHECK(b > 0);
  CHECK(c < 255);
}

TEST_CASE("hot colormap ramps black to white") {
  Tensor map(Shape4{1, 1, 1, 3}, {0.0f, 0.5f, 1.0f});
  RenderSpec spec;
  spec.colormap = Colormap::Hot;
  const RgbImage img = render(map, spec);
  CHECK(img.pixel(0, 0)[0] == 0);   // black at zero
  CHECK(img.pixel(0, 2)[0] == 255); // white at full scale
  CHECK(img.pixel(0, 2)[1] == 255);
  CHECK(img.pixel(0, 2)[2] == 255);
  CHECK(img.pixel(0, 1)[0] == 255); // mid: red saturated,
  CHECK(img.pixel(0, 1)[2] == 0);   // blue still off
}

TEST_CASE("render rejects empty maps and bad percentiles") {
  CHECK_THROWS_AS(render(Tensor(Shape4{1, 0, 0, 0}), RenderSpec{}), ConfigError);
  RenderSpec spec;
  spec.norm = NormMode::PercentileClip;
  spec.percentile = 0.0f;
  CHECK_THROWS_AS(render(Tensor(Shape4{1, 1, 2, 2}), spec), ConfigError);
  spec.percentile = 101.0f;
  CHECK_THROWS_AS(render(Tensor(Shape4{1, 1, 2, 2}), spec), ConfigError);
}
