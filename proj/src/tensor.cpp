#include "featviz/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <utility>

namespace featviz {

std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
  return os.str();
}

Tensor::Tensor(Shape4 shape, float value) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("tensor: negative extent in shape " + to_string(shape));
  }
  data_.assign(static_cast<std::size_t>(shape.count()), value);
}

Tensor::Tensor(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (shape.count() != static_cast<index_t>(data_.size())) {
    throw ShapeError("tensor: shape " + to_string(shape) + " expects " +
                     std::to_string(shape.count()) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::reshaped(Shape4 s) const {
  if (s.count() != size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(s));
  }
  return Tensor(s, std::vector<float>(data_));
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::sum() const {
  double acc = 0.0;
  for (float v : data_) acc += v;
  return acc;
}

namespace {

// Output extent of a windowed op; only exact fits are accepted.
index_t out_extent(const char* op, const char* axis, index_t in, index_t window, index_t stride,
                   index_t pad) {
  if (stride < 1) {
    throw ConfigError(std::string(op) + ": stride must be >= 1 on " + axis);
  }
  const index_t span = in + 2 * pad - window;
  if (span < 0) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(window) +
                     " exceeds padded input extent " + std::to_string(in + 2 * pad) + " on " +
                     axis);
  }
  if (span % stride != 0) {
    throw ConfigError(std::string(op) + ": (" + std::to_string(in) + " + 2*" +
                      std::to_string(pad) + " - " + std::to_string(window) + ") is not a multiple of stride " +
                      std::to_string(stride) + " on " + axis + "; output extent would not be an integer");
  }
  return span / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              Extent2 stride, Extent2 pad) {
  const Shape4 is = input.shape();
  const Shape4 ks = kernel.shape();  // (k_out, c_in, kh, kw)
  if (ks.c != is.c) {
    throw ShapeError("conv2d: input has " + std::to_string(is.c) + " channels but kernel expects " +
                     std::to_string(ks.c));
  }
  if (!bias.empty() && static_cast<index_t>(bias.size()) != ks.n) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " entries for " +
                     std::to_string(ks.n) + " output channels");
  }
  if (pad.y < 0 || pad.x < 0) throw ConfigError("conv2d: negative padding");
  const index_t oh = out_extent("conv2d", "height", is.h, ks.h, stride.y, pad.y);
  const index_t ow = out_extent("conv2d", "width", is.w, ks.w, stride.x, pad.x);

  Tensor out(Shape4{is.n, ks.n, oh, ow});
  for (index_t n = 0; n < is.n; ++n) {
    for (index_t ko = 0; ko < ks.n; ++ko) {
      const double b = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(ko)];
      for (index_t oy = 0; oy < oh; ++oy) {
        for (index_t ox = 0; ox < ow; ++ox) {
          double acc = b;
          for (index_t ci = 0; ci < is.c; ++ci) {
            for (index_t ky = 0; ky < ks.h; ++ky) {
              const index_t iy = oy * stride.y + ky - pad.y;
              if (iy < 0 || iy >= is.h) continue;
              for (index_t kx = 0; kx < ks.w; ++kx) {
                const index_t ix = ox * stride.x + kx - pad.x;
                if (ix < 0 || ix >= is.w) continue;
                acc += static_cast<double>(input(n, ci, iy, ix)) *
                       static_cast<double>(kernel(ko, ci, ky, kx));
              }
            }
          }
          out(n, ko, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& kernel, const Tensor& upstream, Shape4 input_shape,
                         Extent2 stride, Extent2 pad) {
  const Shape4 ks = kernel.shape();
  const Shape4 us = upstream.shape();
  const index_t oh = out_extent("conv2d_input_grad", "height", input_shape.h, ks.h, stride.y, pad.y);
  const index_t ow = out_extent("conv2d_input_grad", "width", input_shape.w, ks.w, stride.x, pad.x);
  const Shape4 expect{input_shape.n, ks.n, oh, ow};
  if (us != expect) {
    throw ShapeError("conv2d_input_grad: upstream shape " + to_string(us) +
                     " does not match forward output shape " + to_string(expect));
  }
  if (ks.c != input_shape.c) {
    throw ShapeError("conv2d_input_grad: input_shape has " + std::to_string(input_shape.c) +
                     " channels but kernel expects " + std::to_string(ks.c));
  }

  // Gather form: one 64-bit accumulator per input element.
  Tensor out(input_shape);
  for (index_t n = 0; n < input_shape.n; ++n) {
    for (index_t ci = 0; ci < input_shape.c; ++ci) {
      for (index_t iy = 0; iy < input_shape.h; ++iy) {
        for (index_t ix = 0; ix < input_shape.w; ++ix) {
          double acc = 0.0;
          for (index_t ky = 0; ky < ks.h; ++ky) {
            const index_t ty = iy + pad.y - ky;
            if (ty < 0 || ty % stride.y != 0) continue;
            const index_t oy = ty / stride.y;
            if (oy >= oh) continue;
            for (index_t kx = 0; kx < ks.w; ++kx) {
              const index_t tx = ix + pad.x - kx;
              if (tx < 0 || tx % stride.x != 0) continue;
              const index_t ox = tx / stride.x;
              if (ox >= ow) continue;
              for (index_t ko = 0; ko < ks.n; ++ko) {
                acc += static_cast<double>(upstream(n, ko, oy, ox)) *
                       static_cast<double>(kernel(ko, ci, ky, kx));
              }
            }
          }
          out(n, ci, iy, ix) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

MaxPoolResult maxpool(const Tensor& input, Extent2 window, Extent2 stride) {
  const Shape4 is = input.shape();
  if (window.y < 1 || window.x < 1) throw ConfigError("maxpool: window must be >= 1");
  const index_t oh = out_extent("maxpool", "height", is.h, window.y, stride.y, 0);
  const index_t ow = out_extent("maxpool", "width", is.w, window.x, stride.x, 0);

  MaxPoolResult r{Tensor(Shape4{is.n, is.c, oh, ow}), {}};
  r.switches.output_shape = r.output.shape();
  r.switches.input_shape = is;
  r.switches.winner.resize(static_cast<std::size_t>(r.output.size()));

  index_t oi = 0;
  for (index_t n = 0; n < is.n; ++n) {
    for (index_t c = 0; c < is.c; ++c) {
      for (index_t oy = 0; oy < oh; ++oy) {
        for (index_t ox = 0; ox < ow; ++ox) {
          float best = input(n, c, oy * stride.y, ox * stride.x);
          index_t best_idx = input.offset(n, c, oy * stride.y, ox * stride.x);
          for (index_t ky = 0; ky < window.y; ++ky) {
            for (index_t kx = 0; kx < window.x; ++kx) {
              const index_t iy = oy * stride.y + ky;
              const index_t ix = ox * stride.x + kx;
              const float v = input(n, c, iy, ix);
              if (v > best) {  // strict: ties keep the first element scanned
                best = v;
                best_idx = input.offset(n, c, iy, ix);
              }
            }
          }
          r.output(n, c, oy, ox) = best;
          r.switches.winner[static_cast<std::size_t>(oi++)] = best_idx;
        }
      }
    }
  }
  return r;
}

Tensor maxunpool(const Tensor& upstream, const Switches& switches, Shape4 input_shape) {
  if (upstream.shape() != switches.output_shape) {
    throw ShapeError("maxunpool: upstream shape " + to_string(upstream.shape()) +
                     " does not match switches output shape " + to_string(switches.output_shape));
  }
  if (input_shape != switches.input_shape) {
    throw ShapeError("maxunpool: requested shape " + to_string(input_shape) +
                     " does not match switches input shape " + to_string(switches.input_shape));
  }
  if (static_cast<index_t>(switches.winner.size()) != upstream.size()) {
    throw InvariantError("maxunpool: switch count does not match upstream element count");
  }
  Tensor out(input_shape);
  const index_t limit = input_shape.count();
  for (index_t i = 0; i < upstream.size(); ++i) {
    const index_t target = switches.winner[static_cast<std::size_t>(i)];
    if (target < 0 || target >= limit) {
      throw InvariantError("maxunpool: switch index " + std::to_string(target) +
                           " outside input of " + std::to_string(limit) + " elements");
    }
    out[target] += upstream[i];
  }
  return out;
}

Tensor avgpool(const Tensor& input, Extent2 window, Extent2 stride, bool global) {
  const Shape4 is = input.shape();
  if (global) {
    window = {is.h, is.w};
    stride = {1, 1};
  }
  if (window.y < 1 || window.x < 1) throw ConfigError("avgpool: window must be >= 1");
  const index_t oh = out_extent("avgpool", "height", is.h, window.y, stride.y, 0);
  const index_t ow = out_extent("avgpool", "width", is.w, window.x, stride.x, 0);
  const double inv = 1.0 / static_cast<double>(window.y * window.x);

  Tensor out(Shape4{is.n, is.c, oh, ow});
  for (index_t n = 0; n < is.n; ++n) {
    for (index_t c = 0; c < is.c; ++c) {
      for (index_t oy = 0; oy < oh; ++oy) {
        for (index_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (index_t ky = 0; ky < window.y; ++ky) {
            for (index_t kx = 0; kx < window.x; ++kx) {
              acc += input(n, c, oy * stride.y + ky, ox * stride.x + kx);
            }
          }
          out(n, c, oy, ox) = static_cast<float>(acc * inv);
        }
      }
    }
  }
  return out;
}

Tensor avgpool_backward(const Tensor& upstream, Extent2 window, Extent2 stride,
                        Shape4 input_shape, bool global) {
  if (global) {
    window = {input_shape.h, input_shape.w};
    stride = {1, 1};
  }
  if (window.y < 1 || window.x < 1) throw ConfigError("avgpool_backward: window must be >= 1");
  const index_t oh = out_extent("avgpool_backward", "height", input_shape.h, window.y, stride.y, 0);
  const index_t ow = out_extent("avgpool_backward", "width", input_shape.w, window.x, stride.x, 0);
  const Shape4 expect{input_shape.n, input_shape.c, oh, ow};
  if (upstream.shape() != expect) {
    throw ShapeError("avgpool_backward: upstream shape " + to_string(upstream.shape()) +
                     " does not match pooled shape " + to_string(expect));
  }
  const float inv = 1.0f / static_cast<float>(window.y * window.x);

  Tensor out(input_shape);
  for (index_t n = 0; n < input_shape.n; ++n) {
    for (index_t c = 0; c < input_shape.c; ++c) {
      for (index_t oy = 0; oy < oh; ++oy) {
        for (index_t ox = 0; ox < ow; ++ox) {
          const float share = upstream(n, c, oy, ox) * inv;
          for (index_t ky = 0; ky < window.y; ++ky) {
            for (index_t kx = 0; kx < window.x; ++kx) {
              out(n, c, oy * stride.y + ky, ox * stride.x + kx) += share;
            }
          }
        }
      }
    }
  }
  return out;
}

// --- .fvt serialization ----------------------------------------------------

namespace {

constexpr char kFvtMagic[4] = {'F', 'V', 'T', '1'};

void put_u32le(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void write_fvt(const Tensor& t, std::ostream& out) {
  std::string buf;
  buf.reserve(static_cast<std::size_t>(20 + t.size() * 4));
  buf.append(kFvtMagic, 4);
  put_u32le(buf, static_cast<std::uint32_t>(t.shape().n));
  put_u32le(buf, static_cast<std::uint32_t>(t.shape().c));
  put_u32le(buf, static_cast<std::uint32_t>(t.shape().h));
  put_u32le(buf, static_cast<std::uint32_t>(t.shape().w));
  for (float v : t.data()) put_u32le(buf, std::bit_cast<std::uint32_t>(v));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Tensor read_fvt(std::istream& in) {
  unsigned char head[20];
  if (!in.read(reinterpret_cast<char*>(head), sizeof(head))) {
    throw FormatError("fvt: truncated header");
  }
  if (std::memcmp(head, kFvtMagic, 4) != 0) {
    throw FormatError("fvt: bad magic (expected FVT1)");
  }
  Shape4 shape{static_cast<index_t>(get_u32le(head + 4)), static_cast<index_t>(get_u32le(head + 8)),
               static_cast<index_t>(get_u32le(head + 12)),
               static_cast<index_t>(get_u32le(head + 16))};
  // reject implausible extents before multiplying them together
  constexpr index_t kMaxExtent = index_t{1} << 24;
  constexpr index_t kMaxCount = index_t{1} << 28;
  if (shape.n > kMaxExtent || shape.c > kMaxExtent || shape.h > kMaxExtent ||
      shape.w > kMaxExtent) {
    throw FormatError("fvt: implausible extents " + to_string(shape));
  }
  const index_t count = shape.count();
  if (count > kMaxCount) {
    throw FormatError("fvt: tensor of " + std::to_string(count) + " elements exceeds the reader cap");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(count) * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("fvt: truncated payload (expected " + std::to_string(count) + " floats)");
  }
  std::vector<float> values(static_cast<std::size_t>(count));
  for (index_t i = 0; i < count; ++i) {
    values[static_cast<std::size_t>(i)] =
        std::bit_cast<float>(get_u32le(raw.data() + static_cast<std::size_t>(i) * 4));
  }
  return Tensor(shape, std::move(values));
}

void save_fvt(const Tensor& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("fvt: cannot open " + path + " for writing");
  write_fvt(t, f);
  if (!f) throw FormatError("fvt: write failed for " + path);
}

Tensor load_fvt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("fvt: cannot open " + path);
  return read_fvt(f);
}

}  // namespace featviz
