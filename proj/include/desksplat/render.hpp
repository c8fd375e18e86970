#pragma once

#include "desksplat/camera.hpp"
#include "desksplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>

namespace desksplat {

/// Reserved depth value for pixels with no surface.
inline constexpr double kEmptyDepth = 1.0e10;

inline bool is_empty_depth(double d) { return !(d < 0.5 * kEmptyDepth); }

struct RenderOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  bool color = true;
  bool depth = true;
  bool feature = false;
  double empty_depth = kEmptyDepth;
  /// Depth is reported only where accumulated alpha reaches this value.
  double depth_alpha_threshold = 0.5;
  /// Contributions below this alpha are dropped.
  double min_alpha = 1.0 / 255.0;
  /// Pixels stop accumulating once transmittance falls below this.
  double min_transmittance = 1e-4;
  /// Screen-space dilation added to every projected covariance (pixels^2).
  double dilation = 0.3;
  double near_plane = 0.01;
  /// Optional instance index sets; when non-empty an instance_mask channel per set is produced.
  std::span<const std::vector<int>> instance_sets = {};
};

/// Settings for gradient-accuracy work: nothing truncated.
inline RenderOptions exact_render_options() {
  RenderOptions o;
  o.min_alpha = 1e-14;
  o.min_transmittance = 0.0;
  return o;
}

template <typename Scalar>
struct RenderBuffers {
  Raster<Scalar> color;          // H x W x 3
  Raster<Scalar> depth;          // H x W x 1
  Raster<Scalar> alpha;          // H x W x 1
  Raster<Scalar> feature;        // H x W x D, unit-norm where alpha > 0
  Raster<Scalar> instance_mask;  // H x W x N_s
};

/// Per-pixel loss gradients flowing into a render. Empty rasters mean "no gradient on this channel".
template <typename Scalar>
struct RenderUpstream {
  Raster<Scalar> color;
  Raster<Scalar> alpha;
  Raster<Scalar> feature;
  Raster<Scalar> instance_mask;
};

struct BackwardOptions {
  /// When false, feature-channel gradients reach only the Gaussian features.
  bool route_feature_to_geometry = true;
  bool covariance = false;
};

template <typename Scalar>
struct RenderGrads {
  MatX3<Scalar> mean;
  VecX<Scalar> opacity;
  MatX3<Scalar> color;
  MatX<Scalar> feature;               // N x D
  std::vector<Mat3<Scalar>> covariance;  // filled only when requested

  RenderGrads() = default;
  RenderGrads(size_t n, int feature_dim, bool with_covariance = false)
      : mean(MatX3<Scalar>::Zero(n, 3)),
        opacity(VecX<Scalar>::Zero(n)),
        color(MatX3<Scalar>::Zero(n, 3)),
        feature(MatX<Scalar>::Zero(n, feature_dim)) {
    if (with_covariance) covariance.assign(n, Mat3<Scalar>::Zero());
  }

  size_t size() const { return static_cast<size_t>(opacity.size()); }

  RenderGrads& operator+=(const RenderGrads& o) {
    mean += o.mean;
    opacity += o.opacity;
    color += o.color;
    feature += o.feature;
    if (!o.covariance.empty()) {
      if (covariance.empty()) covariance.assign(size(), Mat3<Scalar>::Zero());
      for (size_t i = 0; i < covariance.size(); ++i) covariance[i] += o.covariance[i];
    }
    return *this;
  }

  RenderGrads& operator*=(Scalar s) {
    mean *= s;
    opacity *= s;
    color *= s;
    feature *= s;
    for (auto& c : covariance) c *= s;
    return *this;
  }

  bool all_finite() const {
    bool ok = mean.allFinite() && opacity.allFinite() && color.allFinite() && feature.allFinite();
    for (const auto& c : covariance) ok = ok && c.allFinite();
    return ok;
  }
};

class RenderShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// Row bands processed independently; fixed count keeps reductions thread-count independent.
inline constexpr int kRenderBands = 8;

template <typename Scalar>
struct Splat {
  int index = 0;  // scene index
  Scalar depth = 0;
  Vec3<Scalar> mean_cam;
  Vec2<Scalar> mean2d;
  Mat2<Scalar> conic;  // inverse projected covariance
  Eigen::Matrix<Scalar, 2, 3> jacobian;
  Mat3<Scalar> cov_cam;
  Scalar max_m2 = 0;  // squared Mahalanobis cutoff from min_alpha
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

template <typename Scalar>
std::vector<Splat<Scalar>> project_splats(const Scene<Scalar>& scene, std::span<const int> indices,
                                          const Camera<Scalar>& cam, const RenderOptions& opt) {
  std::vector<Splat<Scalar>> out;
  out.reserve(indices.size());
  const auto& k = cam.intrinsics;
  for (int idx : indices) {
    if (idx < 0 || static_cast<size_t>(idx) >= scene.size()) throw std::out_of_range("gaussian index out of range");
    const auto& g = scene.gaussians[static_cast<size_t>(idx)];
    if (!(g.opacity > Scalar(opt.min_alpha))) continue;
    Splat<Scalar> s;
    s.index = idx;
    s.mean_cam = cam.to_camera(g.mean);
    const Scalar z = s.mean_cam.z();
    if (!(z > Scalar(opt.near_plane))) continue;
    const Scalar x = s.mean_cam.x(), y = s.mean_cam.y();
    s.depth = z;
    s.mean2d = Vec2<Scalar>(k.fx * x / z + k.cx, k.fy * y / z + k.cy);
    s.jacobian << k.fx / z, 0, -k.fx * x / (z * z), 0, k.fy / z, -k.fy * y / (z * z);
    s.cov_cam = cam.rotation * g.covariance * cam.rotation.transpose();
    Mat2<Scalar> cov2d = s.jacobian * s.cov_cam * s.jacobian.transpose();
    cov2d(0, 0) += Scalar(opt.dilation);
    cov2d(1, 1) += Scalar(opt.dilation);
    const Scalar det = cov2d.determinant();
    if (!(det > Scalar(0))) continue;
    s.conic << cov2d(1, 1) / det, -cov2d(0, 1) / det, -cov2d(1, 0) / det, cov2d(0, 0) / det;
    s.max_m2 = Scalar(2) * std::log(g.opacity / Scalar(opt.min_alpha));
    const Scalar rx = std::sqrt(s.max_m2 * cov2d(0, 0)), ry = std::sqrt(s.max_m2 * cov2d(1, 1));
    const double fx0 = std::ceil(double(s.mean2d.x() - rx)), fx1 = std::floor(double(s.mean2d.x() + rx));
    const double fy0 = std::ceil(double(s.mean2d.y() - ry)), fy1 = std::floor(double(s.mean2d.y() + ry));
    if (fx1 < 0 || fy1 < 0 || fx0 > cam.width - 1 || fy0 > cam.height - 1) continue;
    s.x0 = static_cast<int>(std::max(0.0, fx0));
    s.x1 = static_cast<int>(std::min(double(cam.width - 1), fx1));
    s.y0 = static_cast<int>(std::max(0.0, fy0));
    s.y1 = static_cast<int>(std::min(double(cam.height - 1), fy1));
    out.push_back(s);
  }
  // Front-to-back; ties keep the caller's index order.
  std::stable_sort(out.begin(), out.end(), [](const Splat<Scalar>& a, const Splat<Scalar>& b) { return a.depth < b.depth; });
  return out;
}

/// Membership of each scene index in the instance sets (for mask channels).
inline std::vector<std::vector<int>> instance_membership(size_t n, std::span<const std::vector<int>> sets) {
  std::vector<std::vector<int>> member(sets.empty() ? 0 : n);
  for (size_t k = 0; k < sets.size(); ++k)
    for (int i : sets[k])
      if (i >= 0 && static_cast<size_t>(i) < n) member[static_cast<size_t>(i)].push_back(static_cast<int>(k));
  return member;
}

template <typename Scalar>
struct Contribution {
  int splat;
  int pixel;
  Scalar alpha;
  Scalar transmittance;
  Scalar kernel;
};

/// Front-to-back compositing over rows [row0, row1). `visit` sees every accepted contribution.
template <typename Scalar, typename Visit>
void composite_band(const std::vector<Splat<Scalar>>& splats, const Scene<Scalar>& scene, const Camera<Scalar>& cam,
                    const RenderOptions& opt, int row0, int row1, std::vector<Scalar>& transmittance, Visit&& visit) {
  const int w = cam.width;
  for (size_t si = 0; si < splats.size(); ++si) {
    const auto& s = splats[si];
    const int ya = std::max(s.y0, row0), yb = std::min(s.y1, row1 - 1);
    if (ya > yb) continue;
    const Scalar opacity = scene.gaussians[static_cast<size_t>(s.index)].opacity;
    const Scalar a = s.conic(0, 0), b = s.conic(0, 1), c = s.conic(1, 1);
    for (int row = ya; row <= yb; ++row) {
      const Scalar dy = Scalar(row) - s.mean2d.y();
      for (int col = s.x0; col <= s.x1; ++col) {
        const Scalar dx = Scalar(col) - s.mean2d.x();
        const Scalar m2 = a * dx * dx + Scalar(2) * b * dx * dy + c * dy * dy;
        if (m2 > s.max_m2) continue;
        const Scalar kernel = std::exp(Scalar(-0.5) * m2);
        const Scalar alpha = opacity * kernel;
        if (alpha < Scalar(opt.min_alpha)) continue;
        const int p = row * w + col;
        Scalar& t = transmittance[static_cast<size_t>(p)];
        if (t < Scalar(opt.min_transmittance) || t <= Scalar(0)) continue;
        visit(Contribution<Scalar>{static_cast<int>(si), p, alpha, t, kernel});
        t *= (Scalar(1) - alpha);
      }
    }
  }
}

inline std::pair<int, int> band_rows(int band, int height) {
  const int per = (height + kRenderBands - 1) / kRenderBands;
  return {std::min(height, band * per), std::min(height, (band + 1) * per)};
}

}  // namespace detail

/// Renders the Gaussians listed in `indices` (in that order for tie-breaking) as if they formed a scene.
template <typename Scalar>
RenderBuffers<Scalar> render_indices(const Scene<Scalar>& scene, std::span<const int> indices, const Camera<Scalar>& cam,
                                     const RenderOptions& opt = {}) {
  const int h = cam.height, w = cam.width, dim = scene.feature_dim;
  const auto splats = detail::project_splats(scene, indices, cam, opt);
  const auto member = detail::instance_membership(scene.size(), opt.instance_sets);
  const int ns = static_cast<int>(opt.instance_sets.size());

  RenderBuffers<Scalar> out;
  out.alpha = Raster<Scalar>(h, w, 1);
  if (opt.color) out.color = Raster<Scalar>(h, w, 3);
  if (opt.depth) out.depth = Raster<Scalar>(h, w, 1);
  if (opt.feature) out.feature = Raster<Scalar>(h, w, dim);
  if (ns > 0) out.instance_mask = Raster<Scalar>(h, w, ns);
  std::vector<Scalar> trans(static_cast<size_t>(h) * w, Scalar(1));
  std::vector<Scalar> depth_acc(opt.depth ? trans.size() : 0, Scalar(0));

#pragma omp parallel for schedule(static)
  for (int band = 0; band < detail::kRenderBands; ++band) {
    const auto [r0, r1] = detail::band_rows(band, h);
    detail::composite_band(splats, scene, cam, opt, r0, r1, trans, [&](const detail::Contribution<Scalar>& c) {
      const auto& s = splats[static_cast<size_t>(c.splat)];
      const auto& g = scene.gaussians[static_cast<size_t>(s.index)];
      const Scalar wgt = c.alpha * c.transmittance;
      const auto p = static_cast<size_t>(c.pixel);
      if (opt.color) {
        Scalar* px = out.color.pixel(p);
        for (int k = 0; k < 3; ++k) px[k] += wgt * g.color[k];
      }
      if (opt.feature) {
        Scalar* px = out.feature.pixel(p);
        for (int k = 0; k < dim; ++k) px[k] += wgt * g.feature[k];
      }
      if (opt.depth) depth_acc[p] += wgt * s.depth;
      if (ns > 0)
        for (int k : member[static_cast<size_t>(s.index)]) out.instance_mask.pixel(p)[k] += wgt;
    });
  }

  for (size_t p = 0; p < trans.size(); ++p) {
    const Scalar a = Scalar(1) - trans[p];
    out.alpha.data[p] = a;
    if (opt.color)
      for (int k = 0; k < 3; ++k) out.color.pixel(p)[k] += trans[p] * Scalar(opt.background[k]);
    if (opt.depth)
      out.depth.data[p] = (a >= Scalar(opt.depth_alpha_threshold) && a > Scalar(0)) ? depth_acc[p] / a : Scalar(opt.empty_depth);
    if (opt.feature) {
      Eigen::Map<VecX<Scalar>> f(out.feature.pixel(p), dim);
      const Scalar n = f.norm();
      if (n > Scalar(1e-12)) f /= n;
      else f.setZero();
    }
  }
  return out;
}

template <typename Scalar>
RenderBuffers<Scalar> render(const Scene<Scalar>& scene, const Camera<Scalar>& cam, const RenderOptions& opt = {}) {
  std::vector<int> all(scene.size());
  std::iota(all.begin(), all.end(), 0);
  return render_indices(scene, std::span<const int>(all), cam, opt);
}

/// Renders only the Gaussians in `subset`; identical to rendering the sub-scene formed by it.
template <typename Scalar>
RenderBuffers<Scalar> render_instance(const Scene<Scalar>& scene, const std::vector<int>& subset,
                                      const Camera<Scalar>& cam, const RenderOptions& opt = {}) {
  return render_indices(scene, std::span<const int>(subset), cam, opt);
}

/// Gradients of a scalar loss with respect to Gaussian parameters given per-pixel gradients of the
/// rendered color / alpha / feature / instance-mask channels. Gradients are indexed by scene index.
template <typename Scalar>
RenderGrads<Scalar> render_backward_indices(const Scene<Scalar>& scene, std::span<const int> indices,
                                            const Camera<Scalar>& cam, const RenderUpstream<Scalar>& up,
                                            const RenderOptions& opt = {}, const BackwardOptions& bopt = {}) {
  const int h = cam.height, w = cam.width, dim = scene.feature_dim;
  const int ns = static_cast<int>(opt.instance_sets.size());
  auto check = [&](const Raster<Scalar>& r, int channels, const char* name) {
    if (!r.empty() && (r.height != h || r.width != w || r.channels != channels))
      throw RenderShapeError(std::string("upstream ") + name + " shape does not match render");
  };
  check(up.color, 3, "color");
  check(up.alpha, 1, "alpha");
  check(up.feature, dim, "feature");
  check(up.instance_mask, ns, "instance_mask");
  const bool g_color = !up.color.empty(), g_alpha = !up.alpha.empty(), g_feat = !up.feature.empty(),
             g_mask = !up.instance_mask.empty() && ns > 0;

  RenderGrads<Scalar> grads(scene.size(), dim, bopt.covariance);
  if (!g_color && !g_alpha && !g_feat && !g_mask) return grads;

  const auto splats = detail::project_splats(scene, indices, cam, opt);
  const auto member = detail::instance_membership(scene.size(), opt.instance_sets);
  const size_t npix = static_cast<size_t>(h) * w;
  const size_t nsplat = splats.size();

  // Per-band partial sums over splats, reduced in band order.
  struct Partial {
    MatX3<Scalar> color;
    MatX<Scalar> feature;
    VecX<Scalar> opacity;
    MatX<Scalar> mean2d;  // nsplat x 2
    MatX<Scalar> conic;   // nsplat x 3 (d/dQ00, d/dQ01 + d/dQ10 combined as symmetric, d/dQ11)
  };
  std::vector<Partial> partial(detail::kRenderBands);
  std::vector<Scalar> trans(npix, Scalar(1));

#pragma omp parallel for schedule(static)
  for (int band = 0; band < detail::kRenderBands; ++band) {
    const auto [r0, r1] = detail::band_rows(band, h);
    Partial& pt = partial[static_cast<size_t>(band)];
    pt.color = MatX3<Scalar>::Zero(static_cast<Eigen::Index>(nsplat), 3);
    pt.feature = MatX<Scalar>::Zero(static_cast<Eigen::Index>(nsplat), g_feat ? dim : 0);
    pt.opacity = VecX<Scalar>::Zero(static_cast<Eigen::Index>(nsplat));
    pt.mean2d = MatX<Scalar>::Zero(static_cast<Eigen::Index>(nsplat), 2);
    pt.conic = MatX<Scalar>::Zero(static_cast<Eigen::Index>(nsplat), 3);
    if (r0 >= r1) continue;

    std::vector<detail::Contribution<Scalar>> contribs;
    detail::composite_band(splats, scene, cam, opt, r0, r1, trans,
                           [&](const detail::Contribution<Scalar>& c) { contribs.push_back(c); });

    const size_t band_first = static_cast<size_t>(r0) * w;
    const size_t band_pixels = static_cast<size_t>(r1 - r0) * w;
    // Gradient on the unnormalized feature sum: (I - F F^T) g / |F*|.
    std::vector<Scalar> feat_sum(g_feat ? band_pixels * dim : 0, Scalar(0));
    if (g_feat) {
      for (const auto& c : contribs) {
        const auto& g = scene.gaussians[static_cast<size_t>(splats[static_cast<size_t>(c.splat)].index)];
        Scalar* fs = feat_sum.data() + (static_cast<size_t>(c.pixel) - band_first) * dim;
        const Scalar wgt = c.alpha * c.transmittance;
        for (int k = 0; k < dim; ++k) fs[k] += wgt * g.feature[k];
      }
      for (size_t q = 0; q < band_pixels; ++q) {
        Eigen::Map<VecX<Scalar>> fs(feat_sum.data() + q * dim, dim);
        Eigen::Map<const VecX<Scalar>> gf(up.feature.pixel(band_first + q), dim);
        const Scalar n = fs.norm();
        if (n > Scalar(1e-12)) {
          const VecX<Scalar> unit = fs / n;
          fs = (gf - unit * unit.dot(gf)) / n;
        } else {
          fs.setZero();
        }
      }
    }

    // Back-to-front accumulated "what lies behind" value per pixel, seeded with the background.
    std::vector<Scalar> behind(band_pixels, Scalar(0));
    if (g_color)
      for (size_t q = 0; q < band_pixels; ++q) {
        const Scalar* gc = up.color.pixel(band_first + q);
        behind[q] = gc[0] * Scalar(opt.background[0]) + gc[1] * Scalar(opt.background[1]) + gc[2] * Scalar(opt.background[2]);
      }

    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
      const auto& c = *it;
      const size_t si = static_cast<size_t>(c.splat);
      const auto& s = splats[si];
      const auto& g = scene.gaussians[static_cast<size_t>(s.index)];
      const size_t p = static_cast<size_t>(c.pixel);
      const size_t q = p - band_first;
      const Scalar wgt = c.alpha * c.transmittance;

      Scalar y = Scalar(0);
      if (g_color) {
        const Scalar* gc = up.color.pixel(p);
        y += gc[0] * g.color[0] + gc[1] * g.color[1] + gc[2] * g.color[2];
        for (int k = 0; k < 3; ++k) pt.color(static_cast<Eigen::Index>(si), k) += gc[k] * wgt;
      }
      if (g_alpha) y += up.alpha.data[p];
      if (g_mask)
        for (int k : member[static_cast<size_t>(s.index)]) y += up.instance_mask.pixel(p)[k];
      if (g_feat) {
        const Scalar* gf = feat_sum.data() + q * dim;
        Scalar fy = Scalar(0);
        for (int k = 0; k < dim; ++k) {
          pt.feature(static_cast<Eigen::Index>(si), k) += gf[k] * wgt;
          fy += gf[k] * g.feature[k];
        }
        if (bopt.route_feature_to_geometry) y += fy;
      }

      const Scalar d_alpha = c.transmittance * (y - behind[q]);
      behind[q] = c.alpha * y + (Scalar(1) - c.alpha) * behind[q];

      pt.opacity(static_cast<Eigen::Index>(si)) += d_alpha * c.kernel;
      // alpha = o * exp(-m2/2), m2 = d^T Q d with d = pixel - mean2d.
      const int row = c.pixel / w, col = c.pixel % w;
      const Scalar dx = Scalar(col) - s.mean2d.x(), dy = Scalar(row) - s.mean2d.y();
      const Scalar da = d_alpha * c.alpha;
      pt.mean2d(static_cast<Eigen::Index>(si), 0) += da * (s.conic(0, 0) * dx + s.conic(0, 1) * dy);
      pt.mean2d(static_cast<Eigen::Index>(si), 1) += da * (s.conic(1, 0) * dx + s.conic(1, 1) * dy);
      pt.conic(static_cast<Eigen::Index>(si), 0) += Scalar(-0.5) * da * dx * dx;
      pt.conic(static_cast<Eigen::Index>(si), 1) += Scalar(-0.5) * da * dx * dy;
      pt.conic(static_cast<Eigen::Index>(si), 2) += Scalar(-0.5) * da * dy * dy;
    }
  }

  for (size_t band = 1; band < partial.size(); ++band) {
    partial[0].color += partial[band].color;
    if (g_feat) partial[0].feature += partial[band].feature;
    partial[0].opacity += partial[band].opacity;
    partial[0].mean2d += partial[band].mean2d;
    partial[0].conic += partial[band].conic;
  }
  const Partial& sum = partial[0];
  const auto& k = cam.intrinsics;

  for (size_t si = 0; si < nsplat; ++si) {
    const auto& s = splats[si];
    const auto i = static_cast<Eigen::Index>(s.index);
    const auto e = static_cast<Eigen::Index>(si);
    grads.color.row(i) += sum.color.row(e);
    if (g_feat) grads.feature.row(i) += sum.feature.row(e);
    grads.opacity[i] += sum.opacity[e];

    // dL/dQ as a symmetric matrix (off-diagonal entry holds half of the combined derivative each).
    Mat2<Scalar> dq;
    dq << sum.conic(e, 0), sum.conic(e, 1), sum.conic(e, 1), sum.conic(e, 2);
    const Mat2<Scalar> dcov2d = -s.conic * dq * s.conic;
    const Eigen::Matrix<Scalar, 2, 3> dj = Scalar(2) * dcov2d * s.jacobian * s.cov_cam;

    const Scalar x = s.mean_cam.x(), y = s.mean_cam.y(), z = s.mean_cam.z();
    const Scalar z2 = z * z, z3 = z2 * z;
    const Scalar gu = sum.mean2d(e, 0), gv = sum.mean2d(e, 1);
    Vec3<Scalar> dmc;
    dmc.x() = gu * k.fx / z + dj(0, 2) * (-k.fx / z2);
    dmc.y() = gv * k.fy / z + dj(1, 2) * (-k.fy / z2);
    dmc.z() = -gu * k.fx * x / z2 - gv * k.fy * y / z2 + dj(0, 0) * (-k.fx / z2) + dj(0, 2) * (Scalar(2) * k.fx * x / z3) +
              dj(1, 1) * (-k.fy / z2) + dj(1, 2) * (Scalar(2) * k.fy * y / z3);
    grads.mean.row(i) += (cam.rotation.transpose() * dmc).transpose();

    if (bopt.covariance) {
      const Mat3<Scalar> dcov_cam = s.jacobian.transpose() * dcov2d * s.jacobian;
      grads.covariance[static_cast<size_t>(s.index)] += cam.rotation.transpose() * dcov_cam * cam.rotation;
    }
  }
  return grads;
}

template <typename Scalar>
RenderGrads<Scalar> render_backward(const Scene<Scalar>& scene, const Camera<Scalar>& cam, const RenderUpstream<Scalar>& up,
                                    const RenderOptions& opt = {}, const BackwardOptions& bopt = {}) {
  std::vector<int> all(scene.size());
  std::iota(all.begin(), all.end(), 0);
  return render_backward_indices(scene, std::span<const int>(all), cam, up, opt, bopt);
}

}  // namespace desksplat
