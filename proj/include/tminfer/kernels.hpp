#pragma once

#include <cstddef>
#include <optional>

#include "tminfer/ndarray.hpp"

// CPU inference kernels over HWC float32 tensors. All functions are pure.
namespace tminfer::ops {

enum class Padding { Same, Valid };

enum class Activation { Linear, Relu, Relu6, Softmax };

enum class PoolKind { Max, Average, GlobalAverage };

struct Window {
  std::size_t h = 1;
  std::size_t w = 1;
};

struct ConvParams {
  Window strides;
  Padding padding = Padding::Valid;
  // [kh, kw, in_c, out_c] for conv2d, [kh, kw, in_c, multiplier] for depthwise.
  NdArray kernel;
  std::optional<NdArray> bias;
};

struct Pads {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;
};

// Output extent and leading pad along one spatial axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride,
                           Padding padding);

NdArray conv2d(const NdArray& input, const ConvParams& p);
NdArray depthwise_conv2d(const NdArray& input, const ConvParams& p);

NdArray batch_norm(const NdArray& input, const NdArray& gamma, const NdArray& beta,
                   const NdArray& mean, const NdArray& variance, float epsilon);

NdArray dense(const NdArray& input, const NdArray& kernel,
              const std::optional<NdArray>& bias, Activation activation);

NdArray relu(const NdArray& input, std::optional<float> max_value = std::nullopt);
NdArray softmax(const NdArray& input);
NdArray activate(const NdArray& input, Activation activation);

NdArray pool2d(const NdArray& input, PoolKind kind, Window window, Window strides,
               Padding padding);

NdArray zero_pad2d(const NdArray& input, const Pads& pads);

NdArray add(const NdArray& a, const NdArray& b);
NdArray flatten(const NdArray& input);
NdArray reshape(const NdArray& input, Shape shape);

}  // namespace tminfer::ops
