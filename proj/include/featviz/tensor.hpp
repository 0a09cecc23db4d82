#pragma once

#include <cassert>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "featviz/errors.hpp"

namespace featviz {

using index_t = std::int64_t;

// Extents of a 4-D tensor: batch, channels, height, width.
struct Shape4 {
  index_t n = 0, c = 0, h = 0, w = 0;

  [[nodiscard]] index_t count() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

// A (row, column) pair used for windows, strides and paddings.
struct Extent2 {
  index_t y = 1;
  index_t x = 1;
  bool operator==(const Extent2&) const = default;
};

// Dense 4-D float32 tensor, NCHW layout, row-major with w fastest.
// Immutable-by-convention once built: every kernel below returns a fresh
// tensor and never writes through its inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, float value = 0.0f);
  Tensor(Shape4 shape, std::vector<float> data);  // takes ownership; length checked

  [[nodiscard]] const Shape4& shape() const { return shape_; }
  [[nodiscard]] index_t size() const { return static_cast<index_t>(data_.size()); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] index_t offset(index_t n, index_t c, index_t y, index_t x) const {
    assert(n >= 0 && n < shape_.n && c >= 0 && c < shape_.c);
    assert(y >= 0 && y < shape_.h && x >= 0 && x < shape_.w);
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  float& operator()(index_t n, index_t c, index_t y, index_t x) {
    return data_[static_cast<std::size_t>(offset(n, c, y, x))];
  }
  float operator()(index_t n, index_t c, index_t y, index_t x) const {
    return data_[static_cast<std::size_t>(offset(n, c, y, x))];
  }
  float& operator[](index_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](index_t i) const { return data_[static_cast<std::size_t>(i)]; }

  [[nodiscard]] std::span<float> data() { return data_; }
  [[nodiscard]] std::span<const float> data() const { return data_; }

  // Same elements reinterpreted under a new shape with equal count.
  [[nodiscard]] Tensor reshaped(Shape4 s) const;

  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] double sum() const;  // 64-bit accumulation

  bool operator==(const Tensor&) const = default;

 private:
  Shape4 shape_{};
  std::vector<float> data_;
};

// Winning-element record of one max-pool pass. winner[i] is the flat index
// (into the pooled input's data) of the element that produced output i.
struct Switches {
  Shape4 output_shape{};
  Shape4 input_shape{};
  std::vector<index_t> winner;
};

struct MaxPoolResult {
  Tensor output;
  Switches switches;
};

// Cross-correlation with zero padding. kernel is (k_out, c_in, kh, kw),
// bias has one entry per output channel (or is empty for no bias).
// Output extents must divide exactly: (h + 2*pad - kh) % stride == 0.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              Extent2 stride, Extent2 pad);

// Exact adjoint of conv2d with respect to its input; bias plays no role.
Tensor conv2d_input_grad(const Tensor& kernel, const Tensor& upstream, Shape4 input_shape,
                         Extent2 stride, Extent2 pad);

// Per-window maximum. Ties break on the first element in row-major window
// scan so switches are reproducible.
MaxPoolResult maxpool(const Tensor& input, Extent2 window, Extent2 stride);

// Scatters each upstream value to its recorded winner; overlapping windows
// accumulate by summation, everything else stays zero.
Tensor maxunpool(const Tensor& upstream, const Switches& switches, Shape4 input_shape);

// Mean over each window; global=true pools the whole spatial plane per
// channel (window/stride ignored).
Tensor avgpool(const Tensor& input, Extent2 window, Extent2 stride, bool global = false);

// Distributes upstream/|window| uniformly over each window.
Tensor avgpool_backward(const Tensor& upstream, Extent2 window, Extent2 stride,
                        Shape4 input_shape, bool global = false);

// .fvt raw tensor files: magic "FVT1", four little-endian uint32 extents
// (n, c, h, w), then n*c*h*w little-endian float32 values, w fastest.
void write_fvt(const Tensor& t, std::ostream& out);
Tensor read_fvt(std::istream& in);
void save_fvt(const Tensor& t, const std::string& path);
Tensor load_fvt(const std::string& path);

}  // namespace featviz
