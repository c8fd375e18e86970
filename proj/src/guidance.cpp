#include "desksplat/guidance.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace desksplat {

std::string to_string(GuidanceError::Kind kind) {
  switch (kind) {
    case GuidanceError::Kind::InvalidRequest: return "invalid request";
    case GuidanceError::Kind::Connect: return "connect failure";
    case GuidanceError::Kind::Timeout: return "timeout";
    case GuidanceError::Kind::Malformed: return "malformed frame";
    case GuidanceError::Kind::Version: return "version mismatch";
    case GuidanceError::Kind::Protocol: return "protocol violation";
    case GuidanceError::Kind::Backend: return "backend error";
  }
  return "unknown";
}

Image cfg_combine(const Image& eps_cond, const Image& eps_uncond, float s) {
  if (!eps_cond.same_shape(eps_uncond)) throw std::invalid_argument("cfg_combine: shape mismatch");
  Image out = eps_cond;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = eps_cond.data[i] + s * (eps_cond.data[i] - eps_uncond.data[i]);
  return out;
}

void validate_request(const GuidanceRequest& r) {
  using K = GuidanceError::Kind;
  if (r.image.channels != 3 || r.image.empty()) throw GuidanceError(K::InvalidRequest, "request image must be H x W x 3");
  if (r.image.height > 0xFFFF || r.image.width > 0xFFFF) throw GuidanceError(K::InvalidRequest, "request image too large");
  if (r.timestep < 1 || r.timestep > kMaxTimestep) throw GuidanceError(K::InvalidRequest, "timestep outside [1, T]");
  if (r.condition.empty()) throw GuidanceError(K::InvalidRequest, "request carries no condition");
  if (r.mode == GuidanceMode::ViewConditioned) {
    try {
      decode_view_condition(r.condition);
    } catch (const std::exception&) {
      throw GuidanceError(K::InvalidRequest, "view request condition is not an encoded reference image");
    }
  } else if (r.mode != GuidanceMode::TextConditioned) {
    throw GuidanceError(K::InvalidRequest, "unknown guidance mode");
  }
}

std::vector<uint8_t> encode_view_condition(const Image& ref) {
  if (ref.channels != 3) throw std::invalid_argument("reference image must have 3 channels");
  std::vector<uint8_t> out(4 + ref.data.size() * 4);
  const uint16_t h = static_cast<uint16_t>(ref.height), w = static_cast<uint16_t>(ref.width);
  std::memcpy(out.data(), &h, 2);
  std::memcpy(out.data() + 2, &w, 2);
  std::memcpy(out.data() + 4, ref.data.data(), ref.data.size() * 4);
  return out;
}

Image decode_view_condition(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4) throw std::invalid_argument("view condition too short");
  uint16_t h, w;
  std::memcpy(&h, bytes.data(), 2);
  std::memcpy(&w, bytes.data() + 2, 2);
  Image img(h, w, 3);
  if (bytes.size() != 4 + img.data.size() * 4) throw std::invalid_argument("view condition size mismatch");
  std::memcpy(img.data.data(), bytes.data() + 4, img.data.size() * 4);
  return img;
}

std::vector<uint8_t> text_condition(const std::string& prompt) { return {prompt.begin(), prompt.end()}; }

Eigen::Matrix4f relative_pose(const CameraD& reference, const CameraD& sampled) {
  const Eigen::Matrix4d rel = sampled.world_to_camera() * reference.world_to_camera().inverse();
  return rel.cast<float>();
}

GuidanceResponse ZeroProvider::guide(const GuidanceRequest& r) {
  validate_request(r);
  return {r.request_id, Image(r.image.height, r.image.width, 3)};
}

MockOracleProvider::MockOracleProvider(GroundTruthScene truth, RenderOptions options, bool seeded_background)
    : truth_(std::move(truth)), sets_(truth_.instance_sets()), options_(options), seeded_background_(seeded_background) {
  options_.feature = false;
  options_.depth = false;
  options_.instance_sets = {};
}

GuidanceResponse MockOracleProvider::guide(const GuidanceRequest& r) {
  validate_request(r);
  if (!r.camera) throw GuidanceError(GuidanceError::Kind::InvalidRequest, "oracle needs the request camera");
  const CameraD& cam = *r.camera;
  if (cam.height != r.image.height || cam.width != r.image.width)
    throw GuidanceError(GuidanceError::Kind::InvalidRequest, "camera resolution differs from request image");
  RenderBuffers<double> target;
  RenderOptions opt = options_;
  if (seeded_background_) opt.background = guidance_background(r.noise_seed);
  if (r.mode == GuidanceMode::ViewConditioned) {
    target = render(truth_.scene, cam, opt);
  } else {
    const std::string prompt(r.condition.begin(), r.condition.end());
    const auto labels = truth_.labels();
    const auto it = std::find(labels.begin(), labels.end(), prompt);
    if (it == labels.end()) throw GuidanceError(GuidanceError::Kind::Backend, "oracle knows no instance labelled '" + prompt + "'");
    target = render_instance(truth_.scene, sets_[static_cast<size_t>(it - labels.begin())], cam, opt);
  }
  GuidanceResponse out{r.request_id, Image(r.image.height, r.image.width, 3)};
  for (size_t i = 0; i < out.residual.data.size(); ++i)
    out.residual.data[i] = r.image.data[i] - static_cast<float>(target.color.data[i]);
  return out;
}

uint64_t splitmix64(uint64_t x) {
  uint64_t z = x + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

float standard_normal(uint64_t seed, uint64_t index) {
  const uint64_t a = splitmix64(seed + 2 * index);
  const uint64_t b = splitmix64(seed + 2 * index + 1);
  const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2));
}

Eigen::Vector3d guidance_background(uint64_t noise_seed) {
  Eigen::Vector3d out;
  for (int c = 0; c < 3; ++c) out[c] = static_cast<double>(splitmix64(noise_seed ^ (0xB6C0ull + static_cast<uint64_t>(c))) >> 11) * 0x1.0p-53;
  return out;
}

Image noise_image(uint64_t seed, int height, int width) {
  Image out(height, width, 3);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = standard_normal(seed, i);
  return out;
}

}  // namespace desksplat
