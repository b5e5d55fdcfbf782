#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tminfer/bundle.hpp"
#include "tminfer/kernels.hpp"
#include "tminfer/ndarray.hpp"

namespace tminfer {

namespace node {

struct Conv {
  ops::ConvParams params;
};
struct Depthwise {
  ops::ConvParams params;
};
struct BatchNorm {
  NdArray gamma, beta, mean, variance;
  float epsilon = 1e-3f;
};
struct Relu {
  std::optional<float> max_value;
};
// Standalone activation layer; the fused activation field does the work.
struct Activation {};
struct ZeroPad {
  ops::Pads pads;
};
struct Add {};
struct Pool {
  ops::PoolKind kind = ops::PoolKind::Max;
  ops::Window window;
  ops::Window strides;
  ops::Padding padding = ops::Padding::Valid;
  bool keep_dims = false;
};
struct Flatten {};
struct Reshape {
  Shape target;
};
struct Dense {
  NdArray kernel;
  std::optional<NdArray> bias;
};

using Op = std::variant<Conv, Depthwise, BatchNorm, Relu, Activation, ZeroPad, Add, Pool, Flatten,
                        Reshape, Dense>;

}  // namespace node

struct PlanNode {
  std::string name;
  std::string class_name;
  node::Op op;
  ops::Activation activation = ops::Activation::Linear;
  // Value slots: 0 is the plan input, k + 1 is the output of node k.
  std::vector<std::size_t> inputs;
  Shape output_shape;
  std::size_t parameter_count = 0;

  std::string describe() const;
};

// Weight-bound, topologically ordered layer graph. Immutable once built;
// run() allocates its own intermediates so one plan serves concurrent callers.
class ExecutionPlan {
 public:
  static constexpr std::size_t kChannels = 3;

  NdArray run(const NdArray& input) const;

  const std::vector<PlanNode>& nodes() const noexcept { return nodes_; }
  std::size_t image_size() const noexcept { return image_size_; }
  Shape input_shape() const { return {image_size_, image_size_, kChannels}; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  std::size_t parameter_count() const noexcept;

 private:
  friend class PlanBuilder;

  std::vector<PlanNode> nodes_;
  std::size_t output_slot_ = 0;
  // Last node index reading each slot; intermediates are released after it.
  std::vector<std::size_t> last_use_;
  std::size_t image_size_ = 0;
  std::vector<std::string> labels_;
  std::vector<std::string> warnings_;
};

ExecutionPlan build_plan(const ModelBundle& bundle);

std::string summarize(const ExecutionPlan& plan);

}  // namespace tminfer
