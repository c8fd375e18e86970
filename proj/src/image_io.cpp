#include "desksplat/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace desksplat {

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw ImageIoError("PNG export needs 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(image.data.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<png_byte>(std::lround(255.0f * std::clamp(image.data[i], 0.0f, 1.0f)));
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw ImageIoError("cannot write " + path.string() + ": " + img.message);
}

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ImageIoError("cannot read " + path.string() + ": " + img.message);
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageIoError("cannot decode " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width), gray ? 1 : 3);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = bytes[i] / 255.0f;
  return out;
}

void write_raw(const Image& image, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path.string());
  const uint32_t header[3] = {static_cast<uint32_t>(image.height), static_cast<uint32_t>(image.width),
                              static_cast<uint32_t>(image.channels)};
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  f.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size() * sizeof(float)));
  if (!f) throw ImageIoError("short write to " + path.string());
}

Image read_raw(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path.string());
  uint32_t header[3];
  if (!f.read(reinterpret_cast<char*>(header), sizeof(header))) throw ImageIoError("truncated raw image " + path.string());
  Image out(static_cast<int>(header[0]), static_cast<int>(header[1]), static_cast<int>(header[2]));
  if (!f.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size() * sizeof(float))))
    throw ImageIoError("truncated raw image " + path.string());
  return out;
}

}  // namespace desksplat
