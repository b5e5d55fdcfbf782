#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tminfer/ndarray.hpp"

namespace tminfer {

// Row-major 8-bit RGB image, 3 bytes per pixel.
struct Frame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  std::string source_id;
  std::chrono::steady_clock::time_point captured_at{};

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
};

enum class ImageFormat { Png, Jpeg };

// Sniffs the container from its signature bytes.
std::optional<ImageFormat> detect_format(std::span<const std::uint8_t> bytes);

// Decodes PNG or JPEG (baseline or progressive) into RGB. Alpha is dropped,
// grayscale is expanded.
Frame decode_image(std::span<const std::uint8_t> bytes,
                   std::optional<ImageFormat> format_hint = std::nullopt);
Frame decode_image_file(const std::filesystem::path& path);

Frame center_crop_square(const Frame& frame);

// Bilinear resampling with half-pixel centers and edge clamping:
// src = (dst + 0.5) * in / out - 0.5. Results are rounded to nearest.
Frame resize_bilinear(const Frame& frame, std::size_t width, std::size_t height);
Frame resize_bilinear(const Frame& frame, std::size_t side);

// Maps each byte v to v / 127.5 - 1, producing a [side, side, 3] tensor.
NdArray normalize(const Frame& frame);

NdArray preprocess(const Frame& frame, std::size_t image_size);

}  // namespace tminfer
