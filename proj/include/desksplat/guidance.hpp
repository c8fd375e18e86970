#pragma once

#include "desksplat/camera.hpp"
#include "desksplat/render.hpp"
#include "desksplat/synth.hpp"

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace desksplat {

enum class GuidanceMode : uint8_t { ViewConditioned = 0, TextConditioned = 1 };

inline constexpr float kViewGuidanceScale = 3.0f;
inline constexpr float kTextGuidanceScale = 10.0f;
inline constexpr uint32_t kMaxTimestep = 1000;

struct GuidanceRequest {
  uint64_t request_id = 0;
  GuidanceMode mode = GuidanceMode::ViewConditioned;
  uint32_t timestep = 1;
  float guidance_scale = kViewGuidanceScale;
  uint64_t noise_seed = 0;
  Image image;  // H x W x 3
  Eigen::Matrix4f pose = Eigen::Matrix4f::Identity();
  /// View mode: encoded reference image. Text mode: UTF-8 prompt.
  std::vector<uint8_t> condition;
  /// In-process only, never serialized: absolute render camera for oracle providers.
  std::optional<CameraD> camera;
};

struct GuidanceResponse {
  uint64_t request_id = 0;
  Image residual;  // H x W x 3
};

class GuidanceError : public std::runtime_error {
 public:
  enum class Kind { InvalidRequest, Connect, Timeout, Malformed, Version, Protocol, Backend };
  GuidanceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string to_string(GuidanceError::Kind kind);

class GuidanceProvider {
 public:
  virtual ~GuidanceProvider() = default;
  virtual GuidanceResponse guide(const GuidanceRequest& request) = 0;
};

/// (1 + s) * cond - s * uncond.
Image cfg_combine(const Image& eps_cond, const Image& eps_uncond, float s);

/// Throws InvalidRequest unless the condition matches the mode and t is in [1, kMaxTimestep].
void validate_request(const GuidanceRequest& request);

std::vector<uint8_t> encode_view_condition(const Image& reference);
Image decode_view_condition(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> text_condition(const std::string& prompt);

/// Relative transform from the reference camera to the sampled one (both world to camera).
Eigen::Matrix4f relative_pose(const CameraD& reference, const CameraD& sampled);

/// Always answers with a zero residual.
class ZeroProvider final : public GuidanceProvider {
 public:
  GuidanceResponse guide(const GuidanceRequest& request) override;
};

/// Residual = request image - ground-truth render at the request camera. Text requests render the
/// ground-truth instance whose label equals the prompt.
class MockOracleProvider final : public GuidanceProvider {
 public:
  /// With `seeded_background` the ground truth is rendered over guidance_background(noise_seed),
  /// matching requests rendered the same way.
  explicit MockOracleProvider(GroundTruthScene truth, RenderOptions options = {}, bool seeded_background = false);
  GuidanceResponse guide(const GuidanceRequest& request) override;
  const GroundTruthScene& truth() const { return truth_; }

 private:
  GroundTruthScene truth_;
  std::vector<std::vector<int>> sets_;
  RenderOptions options_;
  bool seeded_background_ = false;
};

/// Counter-based standard normal: splitmix64 over (seed, index) feeding Box-Muller.
uint64_t splitmix64(uint64_t x);
float standard_normal(uint64_t seed, uint64_t index);
Image noise_image(uint64_t seed, int height, int width);
/// Uniform RGB in [0, 1]^3 drawn from a guidance query's noise seed.
Eigen::Vector3d guidance_background(uint64_t noise_seed);

}  // namespace desksplat
