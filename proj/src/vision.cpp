#include "tminfer/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "tminfer/bundle.hpp"
#include "tminfer/error.hpp"

namespace tminfer {

// Implemented in image_codec.cpp.
Frame decode_png(std::span<const std::uint8_t> bytes);
Frame decode_jpeg(std::span<const std::uint8_t> bytes);

std::optional<ImageFormat> detect_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= sizeof kPng && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return ImageFormat::Png;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return ImageFormat::Jpeg;
  }
  return std::nullopt;
}

Frame decode_image(std::span<const std::uint8_t> bytes, std::optional<ImageFormat> format_hint) {
  const auto sniffed = detect_format(bytes);
  if (!sniffed) {
    if (format_hint && !bytes.empty()) {
      throw Error(ErrorCode::CorruptImage, "missing image signature");
    }
    throw Error(ErrorCode::UnsupportedFormat, "not a PNG or JPEG stream");
  }
  Frame frame = *sniffed == ImageFormat::Png ? decode_png(bytes) : decode_jpeg(bytes);
  frame.captured_at = std::chrono::steady_clock::now();
  return frame;
}

Frame decode_image_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Frame frame = decode_image(bytes);
  frame.source_id = path.string();
  return frame;
}

Frame center_crop_square(const Frame& frame) {
  const std::size_t side = std::min(frame.width, frame.height);
  if (frame.width == frame.height) return frame;
  const std::size_t x0 = (frame.width - side) / 2;
  const std::size_t y0 = (frame.height - side) / 2;
  Frame out{side, side, std::vector<std::uint8_t>(side * side * 3), frame.source_id,
            frame.captured_at};
  for (std::size_t y = 0; y < side; ++y) {
    const auto* row = frame.pixels.data() + ((y0 + y) * frame.width + x0) * 3;
    std::copy_n(row, side * 3, out.pixels.data() + y * side * 3);
  }
  return out;
}

namespace {

// Source coordinate (lo + frac / den) of one output index. Exact rational
// arithmetic keeps round-half-up well defined.
struct Tap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::uint64_t frac = 0;
};

// src = (d + 0.5) * in / out - 0.5 = ((2d + 1) * in - out) / (2 * out), edge-clamped.
std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> result(out);
  const auto den = static_cast<std::int64_t>(2 * out);
  for (std::size_t d = 0; d < out; ++d) {
    const auto num = static_cast<std::int64_t>((2 * d + 1) * in) - static_cast<std::int64_t>(out);
    if (num <= 0) continue;  // clamps to index 0
    const auto lo = static_cast<std::size_t>(num / den);
    if (lo >= in - 1) {
      result[d] = {in - 1, in - 1, 0};
    } else {
      result[d] = {lo, lo + 1, static_cast<std::uint64_t>(num % den)};
    }
  }
  return result;
}

}  // namespace

Frame resize_bilinear(const Frame& frame, std::size_t width, std::size_t height) {
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidValue, "resize target must be >= 1");
  if (frame.width == 0 || frame.height == 0) throw Error(ErrorCode::InvalidValue, "empty frame");
  if (frame.width == width && frame.height == height) return frame;

  const auto xs = taps(frame.width, width);
  const auto ys = taps(frame.height, height);
  const std::uint64_t dx = 2 * width, dy = 2 * height, denom = dx * dy;
  Frame out{width, height, std::vector<std::uint8_t>(width * height * 3), frame.source_id,
            frame.captured_at};
  for (std::size_t y = 0; y < height; ++y) {
    const Tap& ty = ys[y];
    for (std::size_t x = 0; x < width; ++x) {
      const Tap& tx = xs[x];
      for (std::size_t c = 0; c < 3; ++c) {
        const std::uint64_t top = frame.at(tx.lo, ty.lo, c) * (dx - tx.frac) + frame.at(tx.hi, ty.lo, c) * tx.frac;
        const std::uint64_t bottom =
            frame.at(tx.lo, ty.hi, c) * (dx - tx.frac) + frame.at(tx.hi, ty.hi, c) * tx.frac;
        const std::uint64_t v = top * (dy - ty.frac) + bottom * ty.frac;
        out.pixels[(y * width + x) * 3 + c] = static_cast<std::uint8_t>((2 * v + denom) / (2 * denom));
      }
    }
  }
  return out;
}

Frame resize_bilinear(const Frame& frame, std::size_t side) {
  return resize_bilinear(frame, side, side);
}

NdArray normalize(const Frame& frame) {
  if (frame.width != frame.height) {
    throw Error(ErrorCode::NotSquare, std::to_string(frame.width) + "x" + std::to_string(frame.height));
  }
  NdArray out({frame.height, frame.width, 3});
  for (std::size_t i = 0; i < frame.pixels.size(); ++i) {
    out[i] = static_cast<float>(frame.pixels[i]) / 127.5f - 1.0f;
  }
  return out;
}

NdArray preprocess(const Frame& frame, std::size_t image_size) {
  return normalize(resize_bilinear(center_crop_square(frame), image_size));
}

}  // namespace tminfer
