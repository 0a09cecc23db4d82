#include "featviz/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace featviz {

namespace {

// Skips whitespace and '#' comment lines between header tokens.
void skip_separators(std::istream& in) {
  int ch = in.peek();
  while (ch != EOF) {
    if (std::isspace(ch)) {
      in.get();
    } else if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else {
      break;
    }
    ch = in.peek();
  }
}

index_t read_header_int(std::istream& in, const char* what) {
  skip_separators(in);
  index_t value = -1;
  if (!(in >> value) || value < 0) {
    throw FormatError(std::string("image: malformed header (") + what + ")");
  }
  return value;
}

}  // namespace

Tensor read_image(std::istream& in) {
  char p = 0, kind = 0;
  if (!in.get(p) || !in.get(kind) || p != 'P' || (kind != '5' && kind != '6')) {
    throw FormatError("image: expected binary PGM (P5) or PPM (P6) magic");
  }
  const index_t channels = kind == '6' ? 3 : 1;
  const index_t width = read_header_int(in, "width");
  const index_t height = read_header_int(in, "height");
  const index_t maxval = read_header_int(in, "maxval");
  if (maxval != 255) {
    throw FormatError("image: only maxval 255 is supported, got " + std::to_string(maxval));
  }
  in.get();  // the single whitespace byte that ends the header

  if (width < 1 || height < 1) throw FormatError("image: empty raster");
  if (width > (index_t{1} << 20) || height > (index_t{1} << 20) ||
      width * height > (index_t{1} << 28)) {
    throw FormatError("image: implausible raster extents");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(width * height * channels));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("image: truncated payload (expected " + std::to_string(raw.size()) +
                      " bytes)");
  }

  Tensor t(Shape4{1, channels, height, width});
  for (index_t y = 0; y < height; ++y) {
    for (index_t x = 0; x < width; ++x) {
      for (index_t c = 0; c < channels; ++c) {
        const unsigned char b = raw[static_cast<std::size_t>((y * width + x) * channels + c)];
        t(0, c, y, x) = static_cast<float>(b) / 255.0f;
      }
    }
  }
  return t;
}

Tensor load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("image: cannot open " + path);
  return read_image(f);
}

namespace {

std::uint8_t to_byte(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(std::clamp<long>(q, 0, 255));
}

void write_header(std::ostream& out, char kind, index_t width, index_t height) {
  out << 'P' << kind << '\n' << width << ' ' << height << '\n' << "255" << '\n';
}

}  // namespace

void write_image(const RgbImage& image, std::ostream& out) {
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() != static_cast<std::size_t>(3 * image.width * image.height)) {
    throw ShapeError("image: pixel buffer does not match extents");
  }
  write_header(out, '6', image.width, image.height);
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

void write_image(const Tensor& image, std::ostream& out) {
  const Shape4 s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw ShapeError("image: writable tensors are 1x{1|3}xHxW, got " + to_string(s));
  }
  write_header(out, s.c == 3 ? '6' : '5', s.w, s.h);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(s.c * s.h * s.w));
  std::size_t i = 0;
  for (index_t y = 0; y < s.h; ++y) {
    for (index_t x = 0; x < s.w; ++x) {
      for (index_t c = 0; c < s.c; ++c) {
        raw[i++] = to_byte(image(0, c, y, x));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_image(const RgbImage& image, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("image: cannot open " + path + " for writing");
  write_image(image, f);
  if (!f) throw FormatError("image: write failed for " + path);
}

void save_image(const Tensor& image, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("image: cannot open " + path + " for writing");
  write_image(image, f);
  if (!f) throw FormatError("image: write failed for " + path);
}

Colormap colormap_from_name(const std::string& name) {
  if (name == "gray" || name == "grayscale") return Colormap::Grayscale;
  if (name == "signed") return Colormap::Signed;
  if (name == "hot") return Colormap::Hot;
  throw ConfigError("unknown colormap '" + name + "' (expected gray, signed or hot)");
}

std::string to_string(Colormap map) {
  switch (map) {
    case Colormap::Grayscale: return "gray";
    case Colormap::Signed: return "signed";
    case Colormap::Hot: return "hot";
  }
  return "?";
}

namespace {

// Normalized values live in [-1, 1]; c.f. RenderSpec.
std::vector<float> normalize(const std::vector<float>& values, const RenderSpec& spec) {
  float scale = 0.0f;
  if (spec.norm == NormMode::AbsMax) {
    for (float v : values) scale = std::max(scale, std::abs(v));
  } else {
    if (!(spec.percentile > 0.0f) || spec.percentile > 100.0f) {
      throw ConfigError("render: percentile must lie in (0, 100]");
    }
    std::vector<float> mags(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) mags[i] = std::abs(values[i]);
    std::sort(mags.begin(), mags.end());
    // nearest-rank percentile, 1-based
    const std::size_t rank = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(static_cast<double>(spec.percentile) / 100.0 *
                         static_cast<double>(mags.size()))));
    scale = mags[std::min(rank, mags.size()) - 1];
  }
  std::vector<float> out(values.size(), 0.0f);
  if (scale > 0.0f) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      out[i] = std::clamp(values[i] / scale, -1.0f, 1.0f);
    }
  }
  return out;
}

std::vector<float> upsample_plane(const std::vector<float>& plane, index_t h, index_t w,
                                  const RenderSpec& spec, index_t& oh, index_t& ow) {
  if (spec.upsample == UpsampleMode::None) {
    oh = h;
    ow = w;
    return plane;
  }
  if (spec.factor < 1) throw ConfigError("render: upsample factor must be >= 1");
  oh = h * spec.factor;
  ow = w * spec.factor;
  std::vector<float> out(static_cast<std::size_t>(oh * ow));
  if (spec.upsample == UpsampleMode::Nearest) {
    for (index_t y = 0; y < oh; ++y) {
      for (index_t x = 0; x < ow; ++x) {
        out[static_cast<std::size_t>(y * ow + x)] =
            plane[static_cast<std::size_t>((y / spec.factor) * w + (x / spec.factor))];
      }
    }
    return out;
  }
  // Bilinear with half-pixel centers, clamped at the borders.
  const double f = static_cast<double>(spec.factor);
  for (index_t y = 0; y < oh; ++y) {
    const double sy = (static_cast<double>(y) + 0.5) / f - 0.5;
    const double cy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    const index_t y0 = static_cast<index_t>(std::floor(cy));
    const index_t y1 = std::min(y0 + 1, h - 1);
    const double wy = cy - static_cast<double>(y0);
    for (index_t x = 0; x < ow; ++x) {
      const double sx = (static_cast<double>(x) + 0.5) / f - 0.5;
      const double cx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const index_t x0 = static_cast<index_t>(std::floor(cx));
      const index_t x1 = std::min(x0 + 1, w - 1);
      const double wx = cx - static_cast<double>(x0);
      const double v00 = plane[static_cast<std::size_t>(y0 * w + x0)];
      const double v01 = plane[static_cast<std::size_t>(y0 * w + x1)];
      const double v10 = plane[static_cast<std::size_t>(y1 * w + x0)];
      const double v11 = plane[static_cast<std::size_t>(y1 * w + x1)];
      out[static_cast<std::size_t>(y * ow + x)] = static_cast<float>(
          (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11));
    }
  }
  return out;
}

void apply_colormap(float t, Colormap map, std::uint8_t* rgb) {
  auto quant = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  switch (map) {
    case Colormap::Grayscale: {
      const std::uint8_t g = quant(std::abs(t));
      rgb[0] = rgb[1] = rgb[2] = g;
      break;
    }
    case Colormap::Signed: {
      // -1 -> blue, 0 -> white, +1 -> red; v and -v mirror in red/blue.
      const double a = std::abs(t);
      if (t >= 0.0f) {
        rgb[0] = 255;
        rgb[1] = quant(1.0 - a);
        rgb[2] = quant(1.0 - a);
      } else {
        rgb[0] = quant(1.0 - a);
        rgb[1] = quant(1.0 - a);
        rgb[2] = 255;
      }
      break;
    }
    case Colormap::Hot: {
      const double a = std::abs(t);
      rgb[0] = quant(3.0 * a);
      rgb[1] = quant(3.0 * a - 1.0);
      rgb[2] = quant(3.0 * a - 2.0);
      break;
    }
  }
}

}  // namespace

RgbImage render(const Tensor& map, const RenderSpec& spec) {
  const Shape4 s = map.shape();
  if (s.n != 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ConfigError("render: map must be a non-empty 1xCxHxW tensor, got " + to_string(s));
  }

  // channel reduction: per-pixel max of absolute values
  std::vector<float> plane(static_cast<std::size_t>(s.h * s.w));
  for (index_t y = 0; y < s.h; ++y) {
    for (index_t x = 0; x < s.w; ++x) {
      if (s.c == 1) {
        plane[static_cast<std::size_t>(y * s.w + x)] = map(0, 0, y, x);
      } else {
        float best = 0.0f;
        for (index_t c = 0; c < s.c; ++c) {
          const float v = map(0, c, y, x);
          if (std::abs(v) > std::abs(best)) best = v;
        }
        plane[static_cast<std::size_t>(y * s.w + x)] = std::abs(best);
      }
    }
  }

  std::vector<float> t = normalize(plane, spec);
  index_t oh = 0, ow = 0;
  t = upsample_plane(t, s.h, s.w, spec, oh, ow);

  RgbImage image;
  image.width = ow;
  image.height = oh;
  image.pixels.resize(static_cast<std::size_t>(3 * oh * ow));
  for (index_t y = 0; y < oh; ++y) {
    for (index_t x = 0; x < ow; ++x) {
      apply_colormap(t[static_cast<std::size_t>(y * ow + x)], spec.colormap, image.pixel(y, x));
    }
  }
  return image;
}

RgbImage render(const Heatmap& map, const RenderSpec& spec) { return render(map.values, spec); }

}  // namespace featviz
