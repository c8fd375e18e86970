#pragma once

#include "desksplat/scene.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace desksplat {

static_assert(std::endian::native == std::endian::little, "scene files are little-endian");

inline constexpr char kSceneMagic[4] = {'D', 'G', 'S', 'C'};
inline constexpr uint32_t kSceneVersion = 1;
inline constexpr size_t kSceneHeaderBytes = 16;

class SceneFormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, TruncatedPayload, FeatureDimMismatch, Io };
  SceneFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Bytes per Gaussian record: mean 3 + covariance 6 + opacity 1 + color 3 + feature D (all f32).
constexpr size_t scene_record_bytes(uint32_t feature_dim) { return 4 * (13 + static_cast<size_t>(feature_dim)); }

namespace detail {
inline void put_u32(std::vector<char>& out, uint32_t v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + 4);
}
inline void put_f32(std::vector<char>& out, float v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + 4);
}
inline uint32_t get_u32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
inline float get_f32(const char* p) {
  float v;
  std::memcpy(&v, p, 4);
  return v;
}
}  // namespace detail

template <typename Scalar>
std::vector<char> encode_scene(const Scene<Scalar>& scene) {
  using detail::put_f32;
  const auto d = static_cast<uint32_t>(scene.feature_dim);
  std::vector<char> out;
  out.reserve(kSceneHeaderBytes + scene.size() * scene_record_bytes(d));
  out.insert(out.end(), kSceneMagic, kSceneMagic + 4);
  detail::put_u32(out, kSceneVersion);
  detail::put_u32(out, static_cast<uint32_t>(scene.size()));
  detail::put_u32(out, d);
  for (const auto& g : scene.gaussians) {
    if (g.feature.size() != scene.feature_dim)
      throw SceneFormatError(SceneFormatError::Kind::FeatureDimMismatch, "gaussian feature length differs from feature_dim");
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(g.mean[k]));
    // Lower triangle, row by row: (0,0) (1,0) (1,1) (2,0) (2,1) (2,2).
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c <= r; ++c) put_f32(out, static_cast<float>(g.covariance(r, c)));
    put_f32(out, static_cast<float>(g.opacity));
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(g.color[k]));
    for (int k = 0; k < scene.feature_dim; ++k) put_f32(out, static_cast<float>(g.feature[k]));
  }
  return out;
}

/// The workspace is not part of the file format; callers restore it from config.
template <typename Scalar = double>
Scene<Scalar> decode_scene(const std::vector<char>& bytes) {
  using Kind = SceneFormatError::Kind;
  using detail::get_f32;
  if (bytes.size() < kSceneHeaderBytes) throw SceneFormatError(Kind::TruncatedPayload, "truncated payload: header incomplete");
  if (std::memcmp(bytes.data(), kSceneMagic, 4) != 0) throw SceneFormatError(Kind::BadMagic, "bad magic: not a DGSC scene file");
  const uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kSceneVersion)
    throw SceneFormatError(Kind::VersionMismatch, "version mismatch: file has " + std::to_string(version));
  const uint32_t count = detail::get_u32(bytes.data() + 8);
  const uint32_t dim = detail::get_u32(bytes.data() + 12);
  const size_t payload = bytes.size() - kSceneHeaderBytes;
  const size_t expected = static_cast<size_t>(count) * scene_record_bytes(dim);
  if (dim == 0) throw SceneFormatError(Kind::FeatureDimMismatch, "feature_dim mismatch: header declares 0");
  if (payload != expected) {
    // A payload whose stride corresponds to another feature dimension is a dim mismatch.
    if (count > 0 && payload % count == 0) {
      const size_t stride = payload / count;
      if (stride > scene_record_bytes(0) && stride % 4 == 0)
        throw SceneFormatError(Kind::FeatureDimMismatch,
                               "feature_dim mismatch: header declares " + std::to_string(dim) + ", payload stride implies " +
                                   std::to_string((stride - scene_record_bytes(0)) / 4));
    }
    throw SceneFormatError(Kind::TruncatedPayload, "truncated payload: expected " + std::to_string(expected) +
                                                       " bytes, found " + std::to_string(payload));
  }
  Scene<Scalar> scene;
  scene.feature_dim = static_cast<int>(dim);
  scene.gaussians.resize(count);
  const char* p = bytes.data() + kSceneHeaderBytes;
  for (auto& g : scene.gaussians) {
    for (int k = 0; k < 3; ++k, p += 4) g.mean[k] = get_f32(p);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c <= r; ++c, p += 4) {
        g.covariance(r, c) = get_f32(p);
        g.covariance(c, r) = g.covariance(r, c);
      }
    g.opacity = get_f32(p);
    p += 4;
    for (int k = 0; k < 3; ++k, p += 4) g.color[k] = get_f32(p);
    g.feature.resize(dim);
    for (uint32_t k = 0; k < dim; ++k, p += 4) g.feature[k] = get_f32(p);
  }
  return scene;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SceneFormatError(SceneFormatError::Kind::Io, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SceneFormatError(SceneFormatError::Kind::Io, "cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Scalar>
void save_scene(const Scene<Scalar>& scene, const std::filesystem::path& path) {
  write_file_bytes(path, encode_scene(scene));
}

template <typename Scalar = double>
Scene<Scalar> load_scene(const std::filesystem::path& path) {
  return decode_scene<Scalar>(read_file_bytes(path));
}

}  // namespace desksplat
