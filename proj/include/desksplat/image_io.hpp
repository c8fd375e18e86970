#pragma once

#include "desksplat/types.hpp"

#include <filesystem>

namespace desksplat {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit PNG with 1 (gray) or 3 (RGB) channels; values clamped to [0,1].
void write_png(const Image& image, const std::filesystem::path& path);
/// Returns values in [0,1] with 1 or 3 channels (alpha dropped, palettes expanded).
Image read_png(const std::filesystem::path& path);

/// Raw little-endian f32 dump: header [u32 H][u32 W][u32 C] then H*W*C floats.
void write_raw(const Image& image, const std::filesystem::path& path);
Image read_raw(const std::filesystem::path& path);

}  // namespace desksplat
