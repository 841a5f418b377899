#pragma once

#include <filesystem>

#include "rvsl/tensor.hpp"

namespace rvsl::io {

/// Rounds every value of a [0,1] tensor to the nearest multiple of 1/255.
Tensor quantize8(const Tensor& image);

/// Writes a 3 x H x W image in [0,1] as 8-bit RGB PNG.
void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
/// Reads an 8-bit PNG (gray, RGB or RGBA) into a 3 x H x W tensor in [0,1].
Tensor read_png_rgb(const std::filesystem::path& path);

/// Writes an H x W map in [0,1] as 16-bit grayscale PNG.
void write_png_gray16(const std::filesystem::path& path, const Tensor& map);
Tensor read_png_gray16(const std::filesystem::path& path);

}  // namespace rvsl::io
