#include <cmath>
#include <random>

#include "doctest.h"
#include "test_support.hpp"
#include "tminfer/bundle.hpp"
#include "tminfer/error.hpp"
#include "tminfer/vision.hpp"

using namespace tminfer;

namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

std::filesystem::path image(const char* name) { return testing::fixtures_dir() / "images" / name; }

Frame make_frame(std::size_t w, std::size_t h, std::mt19937& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  Frame f{.width = w, .height = h};
  f.pixels.resize(w * h * 3);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(byte(rng));
  return f;
}

Frame solid(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Frame f{.width = w, .height = h};
  for (std::size_t i = 0; i < w * h; ++i) f.pixels.insert(f.pixels.end(), {r, g, b});
  return f;
}

}  // namespace

TEST_CASE("decode: 1x1 white PNG") {
  const auto f = decode_image_file(image("white_1x1.png"));
  CHECK(f.width == 1);
  CHECK(f.height == 1);
  CHECK(f.pixels == std::vector<std::uint8_t>{255, 255, 255});
}

TEST_CASE("decode: 8x8 grid PNG has exact pixels; alpha dropped; gray expanded") {
  const auto grid = decode_image_file(image("grid_8x8.png"));
  const auto rgba = decode_image_file(image("grid_8x8_rgba.png"));
  const auto gray = decode_image_file(image("gray_8x8.png"));
  REQUIRE(grid.width == 8);
  REQUIRE(grid.height == 8);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      CHECK(grid.at(x, y, 0) == x * 32);
      CHECK(grid.at(x, y, 1) == y * 32);
      CHECK(grid.at(x, y, 2) == (x + y) * 16);
      for (std::size_t c = 0; c < 3; ++c) CHECK(gray.at(x, y, c) == y * 32);
    }
  }
  CHECK(rgba.pixels == grid.pixels);
}

TEST_CASE("decode: baseline and progressive JPEG") {
  for (const char* name : {"solid_16x16.jpg", "solid_16x16_progressive.jpg"}) {
    CAPTURE(name);
    const auto bytes = read_file_bytes(image(name));
    CHECK(detect_format(bytes) == ImageFormat::Jpeg);
    const auto f = decode_image(bytes);
    REQUIRE(f.width == 16);
    REQUIRE(f.height == 16);
    const int expected[] = {200, 40, 90};
    for (std::size_t i = 0; i < f.pixels.size(); ++i) {
      CHECK(std::abs(int(f.pixels[i]) - expected[i % 3]) <= 3);
    }
  }
}

TEST_CASE("decode: truncated and unknown inputs") {
  auto jpeg = read_file_bytes(image("solid_16x16.jpg"));
  jpeg.resize(jpeg.size() / 2);
  CHECK(code_of([&] { decode_image(jpeg); }) == ErrorCode::CorruptImage);

  auto progressive = read_file_bytes(image("solid_16x16_progressive.jpg"));
  progressive.resize(progressive.size() / 2);
  CHECK(code_of([&] { decode_image(progressive); }) == ErrorCode::CorruptImage);

  auto png = read_file_bytes(image("grid_8x8.png"));
  png.resize(png.size() - 20);
  CHECK(code_of([&] { decode_image(png); }) == ErrorCode::CorruptImage);

  const Bytes gif{'G', 'I', 'F', '8', '9', 'a', 0, 0};
  CHECK(code_of([&] { decode_image(gif); }) == ErrorCode::UnsupportedFormat);
  CHECK(code_of([&] { decode_image(Bytes{}); }) == ErrorCode::UnsupportedFormat);
  CHECK(code_of([&] { decode_image(gif, ImageFormat::Png); }) == ErrorCode::CorruptImage);
}

TEST_CASE("center_crop_square") {
  std::mt19937 rng(81);
  const auto sq = make_frame(5, 5, rng);
  CHECK(center_crop_square(sq).pixels == sq.pixels);

  const auto wide = make_frame(4, 2, rng);
  const auto c = center_crop_square(wide);
  REQUIRE(c.width == 2);
  REQUIRE(c.height == 2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) CHECK(c.at(x, y, ch) == wide.at(x + 1, y, ch));

  const auto odd = make_frame(5, 3, rng);
  const auto o = center_crop_square(odd);
  CHECK(o.width == 3);
  CHECK(o.at(0, 0, 0) == odd.at(1, 0, 0));

  const auto tall = make_frame(3, 6, rng);
  const auto t = center_crop_square(tall);
  CHECK(t.height == 3);
  CHECK(t.at(2, 0, 2) == tall.at(2, 1, 2));
}

TEST_CASE("resize_bilinear") {
  std::mt19937 rng(83);
  const auto f = make_frame(6, 6, rng);
  CHECK(resize_bilinear(f, 6).pixels == f.pixels);

  Frame checker{.width = 2, .height = 2, .pixels = {0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0}};
  const auto one = resize_bilinear(checker, 1);
  CHECK(one.pixels == std::vector<std::uint8_t>{128, 128, 128});

  CHECK(code_of([&] { resize_bilinear(f, 0); }) == ErrorCode::InvalidValue);

  const auto grid = decode_image_file(image("grid_8x8.png"));
  for (std::size_t side : {1u, 3u, 5u, 8u, 13u, 16u, 31u}) {
    CAPTURE(side);
    const auto out = resize_bilinear(grid, side);
    CHECK(out.pixels == oracle::resize(grid.pixels, 8, 8, int(side), int(side)));
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 20);
    const auto in = make_frame(dim(rng), dim(rng), rng);
    const std::size_t ow = dim(rng), oh = dim(rng);
    CHECK(resize_bilinear(in, ow, oh).pixels ==
          oracle::resize(in.pixels, int(in.width), int(in.height), int(ow), int(oh)));
  }
}

TEST_CASE("normalize") {
  Frame f{.width = 1, .height = 1, .pixels = {255, 0, 127}};
  const auto t = normalize(f);
  CHECK(t.shape() == Shape{1, 1, 3});
  CHECK(t[0] == 1.0f);
  CHECK(t[1] == -1.0f);
  CHECK(std::abs(t[2] - (127.0f / 127.5f - 1.0f)) <= 1e-7f);
  CHECK(std::abs(t[2] + 0.0039215) <= 1e-6);

  std::mt19937 rng(85);
  CHECK(code_of([&] { normalize(make_frame(3, 2, rng)); }) == ErrorCode::NotSquare);
}

TEST_CASE("preprocess properties") {
  std::mt19937 rng(87);
  std::uniform_int_distribution<std::size_t> dim(1, 40), side(1, 24);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = make_frame(dim(rng), dim(rng), rng);
    const auto s = side(rng);
    const auto t = preprocess(f, s);
    CHECK(t.shape() == Shape{s, s, 3});
    for (float v : t.values()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(t == preprocess(f, s));
  }

  // Uniform colour stays exactly uniform through crop and resize.
  const auto uniform = decode_image_file(image("uniform_50x30.png"));
  CHECK(uniform.width == 50);
  CHECK(uniform.height == 30);
  for (std::size_t s : {1u, 7u, 30u, 64u}) {
    const auto t = preprocess(uniform, s);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint8_t v = (i % 3 == 0) ? 10 : (i % 3 == 1) ? 180 : 240;
      CHECK(t[i] == static_cast<float>(v) / 127.5f - 1.0f);
    }
  }
  const auto block = solid(9, 4, 1, 2, 3);
  CHECK(preprocess(block, 4) == normalize(resize_bilinear(center_crop_square(block), 4)));

  // Already square and sized: only normalization applies.
  const auto sq = make_frame(8, 8, rng);
  CHECK(preprocess(sq, 8) == normalize(sq));
}
