#include "tminfer/kernels.hpp"

#include <algorithm>
#include <vector>
#include <cmath>
#include <limits>
#include <string>

#include "tminfer/error.hpp"

namespace tminfer::ops {
namespace {

[[noreturn]] void shape_error(const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, what);
}

void require_hwc(const NdArray& input, const char* op) {
  if (input.rank() != 3) {
    shape_error(std::string(op) + ": expected HWC input, got " +
                shape_to_string(input.shape()));
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct ConvGeometry {
  AxisGeometry y;
  AxisGeometry x;
};

ConvGeometry conv_geometry(const NdArray& input, const ConvParams& p, const char* op) {
  require_hwc(input, op);
  if (p.kernel.rank() != 4) {
    shape_error(std::string(op) + ": kernel must be rank 4, got " +
                shape_to_string(p.kernel.shape()));
  }
  if (p.kernel.dim(2) != input.dim(2)) {
    shape_error(std::string(op) + ": input has " + std::to_string(input.dim(2)) +
                " channels, kernel expects " + std::to_string(p.kernel.dim(2)));
  }
  if (p.strides.h == 0 || p.strides.w == 0) shape_error(std::string(op) + ": zero stride");
  return {axis_geometry(input.dim(0), p.kernel.dim(0), p.strides.h, p.padding),
          axis_geometry(input.dim(1), p.kernel.dim(1), p.strides.w, p.padding)};
}

void check_bias(const std::optional<NdArray>& bias, std::size_t channels, const char* op) {
  if (bias && bias->size() != channels) {
    shape_error(std::string(op) + ": bias has " + std::to_string(bias->size()) +
                " values for " + std::to_string(channels) + " channels");
  }
}

}  // namespace

AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride,
                           Padding padding) {
  if (kernel == 0 || stride == 0) shape_error("zero kernel or stride");
  if (padding == Padding::Valid) {
    if (kernel > in) {
      shape_error("window " + std::to_string(kernel) + " exceeds input " + std::to_string(in));
    }
    return {(in - kernel) / stride + 1, 0};
  }
  const std::size_t out = ceil_div(in, stride);
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t pad_total = needed > in ? needed - in : 0;
  return {out, pad_total / 2};
}

NdArray conv2d(const NdArray& input, const ConvParams& p) {
  const auto g = conv_geometry(input, p, "conv2d");
  const std::size_t in_h = input.dim(0), in_w = input.dim(1), in_c = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), out_c = p.kernel.dim(3);
  check_bias(p.bias, out_c, "conv2d");

  NdArray out({g.y.out, g.x.out, out_c});
  const float* src = input.data();
  const float* wts = p.kernel.data();
  float* dst = out.data();

  for (std::size_t oy = 0; oy < g.y.out; ++oy) {
    for (std::size_t ox = 0; ox < g.x.out; ++ox) {
      float* acc = dst + (oy * g.x.out + ox) * out_c;
      if (p.bias) {
        std::copy_n(p.bias->data(), out_c, acc);
      }
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * p.strides.h + ky) -
                        static_cast<std::ptrdiff_t>(g.y.pad_before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * p.strides.w + kx) -
                          static_cast<std::ptrdiff_t>(g.x.pad_before);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
          const float* px = src + (static_cast<std::size_t>(iy) * in_w +
                                   static_cast<std::size_t>(ix)) * in_c;
          const float* wrow = wts + (ky * kw + kx) * in_c * out_c;
          for (std::size_t ic = 0; ic < in_c; ++ic) {
            const float v = px[ic];
            const float* w = wrow + ic * out_c;
            for (std::size_t oc = 0; oc < out_c; ++oc) acc[oc] += v * w[oc];
          }
        }
      }
    }
  }
  return out;
}

NdArray depthwise_conv2d(const NdArray& input, const ConvParams& p) {
  const auto g = conv_geometry(input, p, "depthwise_conv2d");
  const std::size_t in_h = input.dim(0), in_w = input.dim(1), in_c = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), mult = p.kernel.dim(3);
  const std::size_t out_c = in_c * mult;
  check_bias(p.bias, out_c, "depthwise_conv2d");

  NdArray out({g.y.out, g.x.out, out_c});
  const float* src = input.data();
  const float* wts = p.kernel.data();
  float* dst = out.data();

  for (std::size_t oy = 0; oy < g.y.out; ++oy) {
    for (std::size_t ox = 0; ox < g.x.out; ++ox) {
      float* acc = dst + (oy * g.x.out + ox) * out_c;
      if (p.bias) {
        std::copy_n(p.bias->data(), out_c, acc);
      }
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * p.strides.h + ky) -
                        static_cast<std::ptrdiff_t>(g.y.pad_before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * p.strides.w + kx) -
                          static_cast<std::ptrdiff_t>(g.x.pad_before);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
          const float* px = src + (static_cast<std::size_t>(iy) * in_w +
                                   static_cast<std::size_t>(ix)) * in_c;
          // kernel [ky][kx][c][m] lines up with output channel c * mult + m
          const float* w = wts + (ky * kw + kx) * out_c;
          if (mult == 1) {
            for (std::size_t c = 0; c < in_c; ++c) acc[c] += px[c] * w[c];
          } else {
            for (std::size_t c = 0; c < in_c; ++c) {
              for (std::size_t m = 0; m < mult; ++m) {
                acc[c * mult + m] += px[c] * w[c * mult + m];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

NdArray batch_norm(const NdArray& input, const NdArray& gamma, const NdArray& beta,
                   const NdArray& mean, const NdArray& variance, float epsilon) {
  if (input.rank() == 0) shape_error("batch_norm: scalar input");
  const std::size_t c = input.shape().back();
  for (const NdArray* v : {&gamma, &beta, &mean, &variance}) {
    if (v->size() != c) {
      shape_error("batch_norm: parameter of length " + std::to_string(v->size()) + " for " +
                  std::to_string(c) + " channels");
    }
  }
  std::vector<float> scale(c), shift(c);
  for (std::size_t i = 0; i < c; ++i) {
    scale[i] = gamma[i] / std::sqrt(variance[i] + epsilon);
    shift[i] = beta[i] - mean[i] * scale[i];
  }
  NdArray out(input.shape());
  const float* src = input.data();
  float* dst = out.data();
  for (std::size_t i = 0, n = input.size(); i < n; i += c) {
    for (std::size_t j = 0; j < c; ++j) dst[i + j] = src[i + j] * scale[j] + shift[j];
  }
  return out;
}

NdArray dense(const NdArray& input, const NdArray& kernel, const std::optional<NdArray>& bias,
              Activation activation) {
  if (kernel.rank() != 2) {
    shape_error("dense: kernel must be rank 2, got " + shape_to_string(kernel.shape()));
  }
  const std::size_t n = kernel.dim(0), m = kernel.dim(1);
  if (input.size() != n) {
    shape_error("dense: input has " + std::to_string(input.size()) + " values, kernel expects " +
                std::to_string(n));
  }
  check_bias(bias, m, "dense");
  // Fan-in reaches the thousands after a Flatten; accumulate in double.
  std::vector<double> acc(m, 0.0);
  if (bias) std::copy_n(bias->data(), m, acc.begin());
  const float* w = kernel.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = input[i];
    const float* row = w + i * m;
    for (std::size_t j = 0; j < m; ++j) acc[j] += v * row[j];
  }
  NdArray out({m});
  std::copy(acc.begin(), acc.end(), out.data());
  return activate(out, activation);
}

NdArray relu(const NdArray& input, std::optional<float> max_value) {
  const float hi = max_value.value_or(std::numeric_limits<float>::infinity());
  NdArray out(input.shape());
  std::transform(input.values().begin(), input.values().end(), out.values().begin(),
                 [hi](float v) { return std::min(std::max(v, 0.0f), hi); });
  return out;
}

NdArray softmax(const NdArray& input) {
  if (input.empty()) throw Error(ErrorCode::EmptyInput, "softmax of an empty tensor");
  const auto in = input.values();
  const float peak = *std::max_element(in.begin(), in.end());
  NdArray out(input.shape());
  float sum = 0.0f;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - peak);
    sum += out[i];
  }
  for (auto& v : out.values()) v /= sum;
  return out;
}

NdArray activate(const NdArray& input, Activation activation) {
  switch (activation) {
    case Activation::Linear: return input;
    case Activation::Relu: return relu(input);
    case Activation::Relu6: return relu(input, 6.0f);
    case Activation::Softmax: return softmax(input);
  }
  return input;
}

NdArray pool2d(const NdArray& input, PoolKind kind, Window window, Window strides,
               Padding padding) {
  require_hwc(input, "pool2d");
  const std::size_t in_h = input.dim(0), in_w = input.dim(1), c = input.dim(2);

  if (kind == PoolKind::GlobalAverage) {
    if (in_h == 0 || in_w == 0) throw Error(ErrorCode::EmptyInput, "global pool of empty image");
    NdArray out({c});
    for (std::size_t y = 0; y < in_h; ++y) {
      for (std::size_t x = 0; x < in_w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += input.at(y, x, ch);
      }
    }
    const auto count = static_cast<float>(in_h * in_w);
    for (auto& v : out.values()) v /= count;
    return out;
  }

  const auto gy = axis_geometry(in_h, window.h, strides.h, padding);
  const auto gx = axis_geometry(in_w, window.w, strides.w, padding);
  NdArray out({gy.out, gx.out, c});
  std::vector<float> acc(c);
  for (std::size_t oy = 0; oy < gy.out; ++oy) {
    for (std::size_t ox = 0; ox < gx.out; ++ox) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * strides.h) -
                      static_cast<std::ptrdiff_t>(gy.pad_before);
      const auto x0 = static_cast<std::ptrdiff_t>(ox * strides.w) -
                      static_cast<std::ptrdiff_t>(gx.pad_before);
      const auto ys = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
      const auto xs = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
      const auto ye = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window.h),
                                   static_cast<std::ptrdiff_t>(in_h)));
      const auto xe = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window.w),
                                   static_cast<std::ptrdiff_t>(in_w)));
      std::fill(acc.begin(), acc.end(),
                kind == PoolKind::Max ? -std::numeric_limits<float>::infinity() : 0.0f);
      for (std::size_t y = ys; y < ye; ++y) {
        for (std::size_t x = xs; x < xe; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const float v = input.at(y, x, ch);
            acc[ch] = kind == PoolKind::Max ? std::max(acc[ch], v) : acc[ch] + v;
          }
        }
      }
      // padded cells never enter the divisor
      const auto cells = static_cast<float>((ye - ys) * (xe - xs));
      for (std::size_t ch = 0; ch < c; ++ch) {
        out.at(oy, ox, ch) = kind == PoolKind::Max ? acc[ch] : acc[ch] / cells;
      }
    }
  }
  return out;
}

NdArray zero_pad2d(const NdArray& input, const Pads& pads) {
  require_hwc(input, "zero_pad2d");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t out_w = w + pads.left + pads.right;
  NdArray out({h + pads.top + pads.bottom, out_w, c});
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(input.data() + y * w * c, w * c,
                out.data() + ((y + pads.top) * out_w + pads.left) * c);
  }
  return out;
}

NdArray add(const NdArray& a, const NdArray& b) {
  if (a.shape() != b.shape()) {
    shape_error("add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

NdArray flatten(const NdArray& input) {
  return NdArray({input.size()}, std::vector<float>(input.values().begin(), input.values().end()));
}

NdArray reshape(const NdArray& input, Shape shape) {
  if (element_count(shape) != input.size()) {
    shape_error("reshape " + shape_to_string(input.shape()) + " to " + shape_to_string(shape));
  }
  return NdArray(std::move(shape),
                 std::vector<float>(input.values().begin(), input.values().end()));
}

}  // namespace tminfer::ops
