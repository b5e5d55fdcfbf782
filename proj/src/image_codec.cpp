#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <span>
#include <string>

#include <jerror.h>
#include <jpeglib.h>
#include <png.h>

#include "tminfer/error.hpp"
#include "tminfer/vision.hpp"

namespace tminfer {

Frame decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::CorruptImage, std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::CorruptImage, "png: " + msg);
  }

  Frame frame;
  frame.width = image.width;
  frame.height = image.height;
  frame.pixels.resize(frame.width * frame.height * 3);
  for (std::size_t i = 0, n = frame.width * frame.height; i < n; ++i) {
    std::memcpy(&frame.pixels[i * 3], &rgba[i * 4], 3);
  }
  return frame;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  bool truncated = false;
  char message[JMSG_LENGTH_MAX] = {};
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_message(j_common_ptr cinfo, int level) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  if (level < 0 && cinfo->err->msg_code == JWRN_JPEG_EOF) err->truncated = true;
}

enum class JpegStatus { Ok, Failed, Cmyk };

// Keeps setjmp in a frame that owns no C++ objects; all output lands in `frame`.
JpegStatus run_jpeg(jpeg_decompress_struct& cinfo, JpegErrorManager& err,
                    std::span<const std::uint8_t> bytes, Frame& frame) {
  if (setjmp(err.jump)) return JpegStatus::Failed;
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.jpeg_color_space == JCS_CMYK || cinfo.jpeg_color_space == JCS_YCCK) {
    return JpegStatus::Cmyk;
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  frame.width = cinfo.output_width;
  frame.height = cinfo.output_height;
  frame.pixels.resize(frame.width * frame.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = frame.pixels.data() + std::size_t{cinfo.output_scanline} * frame.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  return JpegStatus::Ok;
}

}  // namespace

Frame decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_fail;
  err.base.emit_message = jpeg_message;
  jpeg_create_decompress(&cinfo);

  Frame frame;
  const auto status = run_jpeg(cinfo, err, bytes, frame);
  jpeg_destroy_decompress(&cinfo);
  switch (status) {
    case JpegStatus::Failed: throw Error(ErrorCode::CorruptImage, std::string("jpeg: ") + err.message);
    case JpegStatus::Cmyk: throw Error(ErrorCode::UnsupportedFormat, "CMYK JPEG");
    case JpegStatus::Ok: break;
  }
  if (err.truncated) throw Error(ErrorCode::CorruptImage, "jpeg: premature end of data");
  return frame;
}

}  // namespace tminfer
