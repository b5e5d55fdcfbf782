#include "tminfer/ndarray.hpp"

#include <utility>

#include "tminfer/error.hpp"

namespace tminfer {

std::size_t element_count(std::span<const std::size_t> shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NdArray::NdArray(Shape shape, float fill) : shape_(std::move(shape)) {
  if (shape_.size() > kMaxRank) {
    throw Error(ErrorCode::ShapeMismatch, "rank " + std::to_string(shape_.size()) + " > 4");
  }
  data_.assign(element_count(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > kMaxRank) {
    throw Error(ErrorCode::ShapeMismatch, "rank " + std::to_string(shape_.size()) + " > 4");
  }
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorCode::ShapeMismatch,
                shape_to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                    " values, got " + std::to_string(data_.size()));
  }
}

}  // namespace tminfer
