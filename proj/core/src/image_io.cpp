#include "bdsl/image_io.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

#include "bdsl/archive.hpp"

namespace bdsl {

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw DecodeError(std::string("png: ") + img.message);
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = gray ? 1 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DecodeError("png: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Only trivially destructible state lives across the setjmp boundary.
bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, Image8& out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.message[0] = '\0';
  if (setjmp(err.jump)) {
    std::memcpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = static_cast<std::size_t>(cinfo.output_components);
  out.pixels.resize(out.width * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

Image8 decode_jpeg(std::span<const std::uint8_t> bytes) {
  Image8 out;
  char message[JMSG_LENGTH_MAX] = {};
  if (!decode_jpeg_raw(bytes, out, message)) throw DecodeError(std::string("jpeg: ") + message);
  if (out.channels != 1 && out.channels != 3) throw DecodeError("jpeg: unsupported channel count");
  return out;
}

}  // namespace

Image8 decode_image(std::span<const std::uint8_t> bytes) {
  Image8 img;
  if (is_png(bytes))
    img = decode_png(bytes);
  else if (is_jpeg(bytes))
    img = decode_jpeg(bytes);
  else
    throw DecodeError("not a PNG or JPEG file");
  if (img.width == 0 || img.height == 0) throw DecodeError("image has zero size");
  return img;
}

Image8 decode_image_file(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const IoError& e) {
    throw DecodeError(e.what());
  }
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png_gray(std::size_t width, std::size_t height,
                                          std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw SizeError("png: pixel count mismatch");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

std::vector<float> to_luminance(const Image8& image) {
  const std::size_t n = image.width * image.height;
  std::vector<float> out(n);
  if (image.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = image.pixels[i];
    return out;
  }
  if (image.channels != 3) throw DecodeError("expected 1 or 3 channels");
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = image.pixels.data() + 3 * i;
    const double y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    out[i] = static_cast<float>(std::clamp(y, 0.0, 255.0));
  }
  return out;
}

std::vector<float> resize_bilinear(std::span<const float> src, std::size_t src_w, std::size_t src_h,
                                   std::size_t dst_w, std::size_t dst_h) {
  if (src.size() != src_w * src_h || dst_w == 0 || dst_h == 0)
    throw SizeError("resize_bilinear: bad dimensions");
  std::vector<float> out(dst_w * dst_h);
  const double sx = static_cast<double>(src_w) / static_cast<double>(dst_w);
  const double sy = static_cast<double>(src_h) / static_cast<double>(dst_h);
  auto axis = [](double coord, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    double c = std::clamp(coord, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(c));
    i1 = std::min(i0 + 1, extent - 1);
    frac = c - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < dst_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis((static_cast<double>(y) + 0.5) * sy - 0.5, src_h, y0, y1, fy);
    for (std::size_t x = 0; x < dst_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis((static_cast<double>(x) + 0.5) * sx - 0.5, src_w, x0, x1, fx);
      const double top = src[y0 * src_w + x0] * (1 - fx) + src[y0 * src_w + x1] * fx;
      const double bot = src[y1 * src_w + x0] * (1 - fx) + src[y1 * src_w + x1] * fx;
      out[y * dst_w + x] = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

Tensor preprocess_image(const Image8& image, std::size_t height, std::size_t width) {
  const auto gray = to_luminance(image);
  auto resized = (image.width == width && image.height == height)
                     ? gray
                     : resize_bilinear(gray, image.width, image.height, width, height);
  for (auto& v : resized) v = std::clamp(v / 255.0f, 0.0f, 1.0f);
  return Tensor({1, height, width}, std::move(resized));
}

Tensor load_image(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  return preprocess_image(decode_image_file(path), height, width);
}

}  // namespace bdsl
