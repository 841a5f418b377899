#include "rvsl/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "rvsl/errors.hpp"

namespace rvsl::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int color_type,
               int bit_depth, const std::vector<png_bytep>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  File f = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng error writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  std::size_t width = 0, height = 0, channels = 0;
  int bit_depth = 8;
  std::vector<unsigned char> pixels;
};

Decoded read_png(const std::filesystem::path& path, bool keep16) {
  File f = open(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("not a readable PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (!keep16 && depth == 16) png_set_strip_16(png);
  if (keep16 && depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  Decoded d;
  d.width = png_get_image_width(png, info);
  d.height = png_get_image_height(png, info);
  d.channels = png_get_channels(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  d.pixels.resize(stride * d.height);
  std::vector<png_bytep> rows(d.height);
  for (std::size_t y = 0; y < d.height; ++y) rows[y] = d.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor quantize8(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = to_byte(image[i]) / 255.0;
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_png_rgb: expected 3xHxW, got " + shape_str(image.shape()));
  }
  const std::size_t H = image.dim(1), W = image.dim(2), hw = H * W;
  std::vector<unsigned char> buf(hw * 3);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) buf[p * 3 + c] = to_byte(image[c * hw + p]);
  }
  std::vector<png_bytep> rows(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = buf.data() + y * W * 3;
  write_png(path, W, H, PNG_COLOR_TYPE_RGB, 8, rows);
}

Tensor read_png_rgb(const std::filesystem::path& path) {
  const Decoded d = read_png(path, false);
  const std::size_t hw = d.width * d.height;
  Tensor out({3, d.height, d.width});
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = d.channels >= 3 ? c : 0;
      out[c * hw + p] = d.pixels[p * d.channels + src] / 255.0;
    }
  }
  return out;
}

void write_png_gray16(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_png_gray16: expected HxW, got " + shape_str(map.shape()));
  const std::size_t H = map.dim(0), W = map.dim(1);
  std::vector<std::uint16_t> buf(H * W);
  for (std::size_t i = 0; i < H * W; ++i) {
    buf[i] = static_cast<std::uint16_t>(std::lround(std::clamp(map[i], 0.0, 1.0) * 65535.0));
  }
  std::vector<png_bytep> rows(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = reinterpret_cast<png_bytep>(buf.data() + y * W);
  write_png(path, W, H, PNG_COLOR_TYPE_GRAY, 16, rows);
}

Tensor read_png_gray16(const std::filesystem::path& path) {
  const Decoded d = read_png(path, true);
  if (d.bit_depth != 16 || d.channels != 1) throw FormatError("expected 16-bit gray PNG: " + path.string());
  Tensor out({d.height, d.width});
  const auto* px = reinterpret_cast<const std::uint16_t*>(d.pixels.data());
  for (std::size_t i = 0; i < d.width * d.height; ++i) out[i] = px[i] / 65535.0;
  return out;
}

}  // namespace rvsl::io
