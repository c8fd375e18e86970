#pragma once

#include "desksplat/guidance.hpp"
#include "desksplat/render.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

namespace desksplat {

/// Per-view binary instance masks, channel k = instance k. At most one channel is set per pixel.
using MaskRaster = Raster<uint8_t>;

struct PosedImage {
  CameraD camera;
  Image image;       // H x W x 3
  MaskRaster masks;  // H x W x N_s, may be empty when unused
};

class LossInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
struct LossResult {
  Scalar value = 0;
  RenderGrads<Scalar> grads;
};

/// Checks the mask invariants; returns the channel count shared by every view.
inline int validate_masks(std::span<const PosedImage> views) {
  int ns = -1;
  for (const auto& v : views) {
    if (v.masks.height != v.camera.height || v.masks.width != v.camera.width)
      throw LossInputError("mask resolution differs from its camera");
    if (ns >= 0 && v.masks.channels != ns) throw LossInputError("views disagree on mask channel count");
    ns = v.masks.channels;
    for (size_t p = 0; p < v.masks.pixels(); ++p) {
      int set = 0;
      for (int k = 0; k < ns; ++k) {
        const uint8_t m = v.masks.pixel(p)[k];
        if (m > 1) throw LossInputError("mask values must be 0 or 1");
        set += m;
      }
      if (set > 1) throw LossInputError("more than one instance claims a pixel");
    }
  }
  return std::max(ns, 0);
}

template <typename Scalar>
void check_image_shape(const Image& image, const Camera<Scalar>& cam) {
  if (image.height != cam.height || image.width != cam.width || image.channels != 3)
    throw LossInputError("image resolution " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " does not match camera " + std::to_string(cam.height) + "x" + std::to_string(cam.width));
}

/// ||rendered - target||^2 over all pixels and channels; writes d/d(rendered) into `upstream` scaled by `weight`.
/// When `mask` is given only pixels with mask channel `channel` set contribute.
template <typename Scalar>
Scalar squared_error(const Raster<Scalar>& rendered, const Image& target, Raster<Scalar>& upstream, Scalar weight = 1,
                     const MaskRaster* mask = nullptr, int channel = 0) {
  if (upstream.empty()) upstream = Raster<Scalar>(rendered.height, rendered.width, 3);
  Scalar loss = 0;
  for (size_t p = 0; p < rendered.pixels(); ++p) {
    if (mask && !mask->pixel(p)[channel]) continue;
    for (int c = 0; c < 3; ++c) {
      const Scalar r = rendered.pixel(p)[c] - Scalar(target.pixel(p)[c]);
      loss += r * r;
      upstream.pixel(p)[c] += weight * Scalar(2) * r;
    }
  }
  return loss;
}

/// Sum over views of the squared color error of the full render.
template <typename Scalar>
LossResult<Scalar> render_loss(const Scene<Scalar>& scene, std::span<const PosedImage> views, const RenderOptions& base = {}) {
  if (views.empty()) throw LossInputError("render_loss needs at least one posed image");
  RenderOptions opt = base;
  opt.color = true;
  opt.depth = false;
  opt.feature = false;
  LossResult<Scalar> out{Scalar(0), RenderGrads<Scalar>(scene.size(), scene.feature_dim)};
  for (const auto& v : views) {
    const auto cam = v.camera.template cast<Scalar>();
    check_image_shape(v.image, cam);
    const auto buf = render(scene, cam, opt);
    RenderUpstream<Scalar> up;
    out.value += squared_error(buf.color, v.image, up.color);
    out.grads += render_backward(scene, cam, up, opt);
  }
  return out;
}

/// Contrastive clustering over one view's rendered feature pixels. Pixels are grouped by mask
/// channel; logits against each present group's mean are divided by that group's temperature.
/// Returns the loss and writes d/d(feature pixel) into `upstream` scaled by `weight`.
template <typename Scalar>
Scalar contrastive_pixels(const Raster<Scalar>& features, const MaskRaster& masks, std::span<const double> psi,
                          Raster<Scalar>& upstream, Scalar weight = 1) {
  const int dim = features.channels, ns = masks.channels;
  if (static_cast<int>(psi.size()) != ns) throw LossInputError("one temperature per mask channel required");
  for (double t : psi)
    if (!(t > 0)) throw LossInputError("temperatures must be positive");
  if (upstream.empty()) upstream = Raster<Scalar>(features.height, features.width, dim);

  std::vector<int> label(features.pixels(), -1);
  std::vector<int> count(static_cast<size_t>(ns), 0);
  MatX<Scalar> mean = MatX<Scalar>::Zero(ns, dim);
  for (size_t p = 0; p < features.pixels(); ++p)
    for (int k = 0; k < ns; ++k)
      if (masks.pixel(p)[k]) {
        label[p] = k;
        ++count[static_cast<size_t>(k)];
        mean.row(k) += Eigen::Map<const VecX<Scalar>>(features.pixel(p), dim).transpose();
      }
  std::vector<int> present;
  for (int k = 0; k < ns; ++k)
    if (count[static_cast<size_t>(k)] > 0) {
      mean.row(k) /= Scalar(count[static_cast<size_t>(k)]);
      present.push_back(k);
    }
  if (present.empty()) return Scalar(0);

  const int m = static_cast<int>(present.size());
  VecX<Scalar> inv_psi(m);
  MatX<Scalar> means(m, dim);
  std::vector<int> slot(static_cast<size_t>(ns), -1);
  for (int a = 0; a < m; ++a) {
    inv_psi[a] = Scalar(1.0 / psi[static_cast<size_t>(present[static_cast<size_t>(a)])]);
    means.row(a) = mean.row(present[static_cast<size_t>(a)]);
    slot[static_cast<size_t>(present[static_cast<size_t>(a)])] = a;
  }

  Scalar loss = 0;
  MatX<Scalar> through_mean = MatX<Scalar>::Zero(m, dim);
  VecX<Scalar> logits(m), soft(m);
  for (size_t p = 0; p < features.pixels(); ++p) {
    if (label[p] < 0) continue;
    const int own = slot[static_cast<size_t>(label[p])];
    Eigen::Map<const VecX<Scalar>> f(features.pixel(p), dim);
    logits = (means * f).cwiseProduct(inv_psi);
    const Scalar top = logits.maxCoeff();
    soft = (logits.array() - top).exp();
    const Scalar z = soft.sum();
    loss += std::log(z) + top - logits[own];
    soft /= z;
    soft[own] -= Scalar(1);
    const VecX<Scalar> a = soft.cwiseProduct(inv_psi);
    Eigen::Map<VecX<Scalar>> g(upstream.pixel(p), dim);
    g += weight * (means.transpose() * a);
    through_mean += a * f.transpose();
  }
  for (size_t p = 0; p < features.pixels(); ++p) {
    if (label[p] < 0) continue;
    const int s = slot[static_cast<size_t>(label[p])];
    Eigen::Map<VecX<Scalar>> g(upstream.pixel(p), dim);
    g += weight * through_mean.row(s).transpose() / Scalar(count[static_cast<size_t>(label[p])]);
  }
  return loss;
}

/// Throws unless every mask channel is nonempty in at least one view.
inline void require_nonempty_channels(std::span<const PosedImage> views, int ns) {
  for (int k = 0; k < ns; ++k) {
    bool any = false;
    for (const auto& v : views)
      for (size_t p = 0; p < v.masks.pixels() && !any; ++p) any = v.masks.pixel(p)[k] != 0;
    if (!any) throw LossInputError("instance " + std::to_string(k) + " is empty in every view");
  }
}

/// Contrastive clustering loss summed over views. Gradients reach only Gaussian features.
template <typename Scalar>
LossResult<Scalar> contrastive_loss(const Scene<Scalar>& scene, std::span<const PosedImage> views, std::span<const double> psi,
                                    const RenderOptions& base = {}) {
  const int ns = validate_masks(views);
  require_nonempty_channels(views, ns);
  RenderOptions opt = base;
  opt.color = false;
  opt.depth = false;
  opt.feature = true;
  BackwardOptions bopt;
  bopt.route_feature_to_geometry = false;
  LossResult<Scalar> out{Scalar(0), RenderGrads<Scalar>(scene.size(), scene.feature_dim)};
  for (const auto& v : views) {
    const auto cam = v.camera.template cast<Scalar>();
    const auto buf = render(scene, cam, opt);
    RenderUpstream<Scalar> up;
    out.value += contrastive_pixels(buf.feature, v.masks, psi, up.feature);
    out.grads += render_backward(scene, cam, up, opt, bopt);
  }
  return out;
}

/// Sum over views and instances of the masked squared error between each instance's own render and the image.
template <typename Scalar>
LossResult<Scalar> instance_render_loss(const Scene<Scalar>& scene, const std::vector<std::vector<int>>& instance_sets,
                                        std::span<const PosedImage> views, const RenderOptions& base = {}) {
  const int ns = validate_masks(views);
  if (static_cast<int>(instance_sets.size()) != ns)
    throw LossInputError(std::to_string(instance_sets.size()) + " instance sets for " + std::to_string(ns) + " mask channels");
  RenderOptions opt = base;
  opt.color = true;
  opt.depth = false;
  opt.feature = false;
  opt.instance_sets = {};
  LossResult<Scalar> out{Scalar(0), RenderGrads<Scalar>(scene.size(), scene.feature_dim)};
  for (const auto& v : views) {
    const auto cam = v.camera.template cast<Scalar>();
    check_image_shape(v.image, cam);
    for (int k = 0; k < ns; ++k) {
      const auto& set = instance_sets[static_cast<size_t>(k)];
      if (set.empty()) continue;
      const auto buf = render_instance(scene, set, cam, opt);
      RenderUpstream<Scalar> up;
      out.value += squared_error(buf.color, v.image, up.color, Scalar(1), &v.masks, k);
      out.grads += render_backward_indices(scene, std::span<const int>(set), cam, up, opt);
    }
  }
  return out;
}

/// One score-distillation query: the camera to render from, the annealed timestep and the noise seed.
struct GuidanceSample {
  CameraD camera;
  uint32_t timestep = kMaxTimestep / 2;
  uint64_t noise_seed = 0;
  /// Render background for this query; the renderer's default when unset.
  std::optional<Eigen::Vector3d> background;
};

/// Multi-view guidance gradient: the render at `sample.camera` is scored once per reference view and
/// the residuals are summed before backpropagation. Gradients are scaled by `weight` (w(t) = 1).
template <typename Scalar>
RenderGrads<Scalar> view_guidance_grad(const Scene<Scalar>& scene, GuidanceProvider& provider,
                                       std::span<const PosedImage> references, const GuidanceSample& sample,
                                       Scalar weight = 1, const RenderOptions& base = {}, Scalar* residual_sq = nullptr) {
  RenderOptions opt = base;
  opt.color = true;
  opt.depth = false;
  opt.feature = false;
  if (sample.background) opt.background = *sample.background;
  const auto cam = sample.camera.template cast<Scalar>();
  const auto buf = render(scene, cam, opt);
  GuidanceRequest req;
  req.mode = GuidanceMode::ViewConditioned;
  req.timestep = sample.timestep;
  req.guidance_scale = kViewGuidanceScale;
  req.noise_seed = sample.noise_seed;
  req.image = buf.color.template cast<float>();
  req.camera = sample.camera;
  RenderUpstream<Scalar> up;
  up.color = Raster<Scalar>(cam.height, cam.width, 3);
  for (size_t j = 0; j < references.size(); ++j) {
    req.request_id = j;
    req.pose = relative_pose(references[j].camera, sample.camera);
    req.condition = encode_view_condition(references[j].image);
    GuidanceResponse resp;
    try {
      resp = provider.guide(req);
    } catch (const GuidanceError& e) {
      throw GuidanceError(e.kind(), "view guidance (reference " + std::to_string(j) + ", t=" + std::to_string(sample.timestep) +
                                        "): " + e.what());
    }
    for (size_t i = 0; i < up.color.data.size(); ++i) {
      const Scalar r = Scalar(resp.residual.data[i]);
      up.color.data[i] += weight * r;
      if (residual_sq) *residual_sq += r * r;
    }
  }
  return render_backward(scene, cam, up, opt);
}

/// Text-conditioned guidance on one instance: only the Gaussians in `subset` are rendered and receive gradients.
template <typename Scalar>
RenderGrads<Scalar> instance_guidance_grad(const Scene<Scalar>& scene, const std::vector<int>& subset, GuidanceProvider& provider,
                                           const std::string& prompt, const GuidanceSample& sample, Scalar weight = 1,
                                           const RenderOptions& base = {}, Scalar* residual_sq = nullptr) {
  RenderOptions opt = base;
  opt.color = true;
  opt.depth = false;
  opt.feature = false;
  opt.instance_sets = {};
  if (sample.background) opt.background = *sample.background;
  const auto cam = sample.camera.template cast<Scalar>();
  const auto buf = render_instance(scene, subset, cam, opt);
  GuidanceRequest req;
  req.mode = GuidanceMode::TextConditioned;
  req.timestep = sample.timestep;
  req.guidance_scale = kTextGuidanceScale;
  req.noise_seed = sample.noise_seed;
  req.image = buf.color.template cast<float>();
  req.camera = sample.camera;
  req.pose = sample.camera.world_to_camera().cast<float>();
  req.condition = text_condition(prompt);
  GuidanceResponse resp;
  try {
    resp = provider.guide(req);
  } catch (const GuidanceError& e) {
    throw GuidanceError(e.kind(), "instance guidance ('" + prompt + "', t=" + std::to_string(sample.timestep) + "): " + e.what());
  }
  RenderUpstream<Scalar> up;
  up.color = Raster<Scalar>(cam.height, cam.width, 3);
  for (size_t i = 0; i < up.color.data.size(); ++i) {
    const Scalar r = Scalar(resp.residual.data[i]);
    up.color.data[i] = weight * r;
    if (residual_sq) *residual_sq += r * r;
  }
  return render_backward_indices(scene, std::span<const int>(subset), cam, up, opt);
}

/// Linear anneal from t_max at iteration 0 to t_min at the last iteration, rounded to the nearest step.
inline uint32_t timestep_schedule(int iter, int total_iters, uint32_t t_max = 980, uint32_t t_min = 20) {
  if (total_iters <= 0 || iter < 0 || iter >= total_iters) throw std::out_of_range("timestep_schedule: iteration outside [0, total)");
  if (total_iters == 1) return t_max;
  const double frac = static_cast<double>(iter) / static_cast<double>(total_iters - 1);
  return static_cast<uint32_t>(std::lround(double(t_max) - (double(t_max) - double(t_min)) * frac));
}

}  // namespace desksplat
