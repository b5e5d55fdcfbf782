#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tminfer {

using Shape = std::vector<std::size_t>;

std::size_t element_count(std::span<const std::size_t> shape) noexcept;
std::string shape_to_string(std::span<const std::size_t> shape);

// Dense row-major float32 tensor of rank <= 4. Image tensors are HWC.
class NdArray {
 public:
  static constexpr std::size_t kMaxRank = 4;

  NdArray() = default;
  explicit NdArray(Shape shape, float fill = 0.0f);
  NdArray(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }
  const float* data() const noexcept { return data_.data(); }
  float* data() noexcept { return data_.data(); }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // Row-major accessors for HWC image tensors.
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  friend bool operator==(const NdArray&, const NdArray&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace tminfer
