#pragma once

#include "desksplat/types.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace desksplat {

template <typename Scalar>
struct Intrinsics {
  Scalar fx = 1, fy = 1, cx = 0, cy = 0;

  template <typename T>
  Intrinsics<T> cast() const {
    return {static_cast<T>(fx), static_cast<T>(fy), static_cast<T>(cx), static_cast<T>(cy)};
  }
};

/// Pinhole camera. `rotation`/`translation` map world to camera: x_c = R x_w + t.
/// Camera frame: +z forward, +x right, +y down. Pixel (row i, col j) sits at (u=j, v=i).
template <typename Scalar>
struct Camera {
  Intrinsics<Scalar> intrinsics;
  int width = 0;
  int height = 0;
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();

  Vec3<Scalar> position() const { return -rotation.transpose() * translation; }
  Vec3<Scalar> forward() const { return rotation.row(2).transpose(); }
  Vec3<Scalar> to_camera(const Vec3<Scalar>& x) const { return rotation * x + translation; }

  Mat4<Scalar> world_to_camera() const {
    Mat4<Scalar> m = Mat4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = rotation;
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }

  template <typename T>
  Camera<T> cast() const {
    return {intrinsics.template cast<T>(), width, height, rotation.template cast<T>(), translation.template cast<T>()};
  }
};

using CameraD = Camera<double>;

class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename Scalar>
struct Projection {
  Scalar u = 0, v = 0, depth = 0;
};

template <typename Scalar>
Projection<Scalar> project_camera_point(const Intrinsics<Scalar>& k, const Vec3<Scalar>& pc) {
  if (!(pc.z() > Scalar(1e-9))) throw BehindCameraError("point behind camera");
  return {k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy, pc.z()};
}

template <typename Scalar>
Projection<Scalar> project(const Camera<Scalar>& cam, const Vec3<Scalar>& world_point) {
  return project_camera_point(cam.intrinsics, cam.to_camera(world_point));
}

/// Intrinsics with the given horizontal/vertical field of view (degrees), principal point centred.
template <typename Scalar = double>
Intrinsics<Scalar> intrinsics_from_fov(int width, int height, Scalar fov_deg) {
  const Scalar half = fov_deg * Scalar(std::numbers::pi / 360.0);
  const Scalar f = Scalar(0.5) * Scalar(std::max(width, height)) / std::tan(half);
  return {f, f, Scalar(0.5) * Scalar(width - 1), Scalar(0.5) * Scalar(height - 1)};
}

/// World-to-camera rotation/translation looking from `eye` at `target`, world +z up.
template <typename Scalar>
Camera<Scalar> look_at(const Intrinsics<Scalar>& k, int width, int height, const Vec3<Scalar>& eye,
                       const Vec3<Scalar>& target) {
  const Vec3<Scalar> fwd = (target - eye).normalized();
  Vec3<Scalar> up(0, 0, 1);
  if (std::abs(fwd.dot(up)) > Scalar(1) - Scalar(1e-9)) up = Vec3<Scalar>(0, 1, 0);
  const Vec3<Scalar> right = fwd.cross(up).normalized();
  const Vec3<Scalar> down = fwd.cross(right);
  Camera<Scalar> cam;
  cam.intrinsics = k;
  cam.width = width;
  cam.height = height;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = fwd.transpose();
  cam.translation = -cam.rotation * eye;
  return cam;
}

struct PoseDistribution {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.5;
  double elevation_min_deg = 0.0;
  double elevation_max_deg = 60.0;
  int elevation_steps = 4;
  int azimuth_steps = 20;
};

inline Eigen::Vector3d hemisphere_point(const PoseDistribution& dist, double elevation_deg, double azimuth_deg) {
  const double e = elevation_deg * std::numbers::pi / 180.0;
  const double a = azimuth_deg * std::numbers::pi / 180.0;
  return dist.center + dist.radius * Eigen::Vector3d(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
}

/// elevation_steps x azimuth_steps look-at poses. Elevations start at the lower bound and
/// exclude the upper bound unless there is a single step; azimuths cover [0, 360).
inline std::vector<CameraD> sample_hemisphere_poses(const PoseDistribution& dist, const Intrinsics<double>& k,
                                                    int width, int height) {
  if (!(dist.radius > 0.0) || dist.elevation_steps < 1 || dist.azimuth_steps < 1)
    throw std::invalid_argument("pose distribution needs radius > 0 and steps >= 1");
  std::vector<CameraD> out;
  out.reserve(static_cast<size_t>(dist.elevation_steps) * dist.azimuth_steps);
  const double de = (dist.elevation_max_deg - dist.elevation_min_deg) / dist.elevation_steps;
  for (int e = 0; e < dist.elevation_steps; ++e) {
    for (int a = 0; a < dist.azimuth_steps; ++a) {
      const Eigen::Vector3d eye = hemisphere_point(dist, dist.elevation_min_deg + e * de, 360.0 * a / dist.azimuth_steps);
      out.push_back(look_at<double>(k, width, height, eye, dist.center));
    }
  }
  return out;
}

/// Continuous uniform draw over the distribution's elevation band and full azimuth.
template <typename Rng>
CameraD sample_random_pose(const PoseDistribution& dist, const Intrinsics<double>& k, int width, int height, Rng& rng) {
  std::uniform_real_distribution<double> az(0.0, 360.0);
  std::uniform_real_distribution<double> el(dist.elevation_min_deg, dist.elevation_max_deg);
  const double e = el(rng);
  const double a = az(rng);
  return look_at<double>(k, width, height, hemisphere_point(dist, e, a), dist.center);
}

/// Radius at which a sphere of `bound_radius` fits the narrower half field of view with margin.
inline double framing_radius(double bound_radius, const Intrinsics<double>& k, int width, int height,
                             double margin = 1.1) {
  const double half = std::min(std::atan2(0.5 * width, k.fx), std::atan2(0.5 * height, k.fy));
  return margin * bound_radius / std::sin(half);
}

enum class Interpolation { Bilinear, Nearest };

class FieldOfViewError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Resamples `image` taken with `src` intrinsics into a camera with `dst` intrinsics sharing the
/// same pose: dst(i, j) = src((i - cy') fy / fy' + cy, (j - cx') fx / fx' + cx).
template <typename Scalar>
Raster<Scalar> intrinsics_crop(const Raster<Scalar>& image, const Intrinsics<double>& src, const Intrinsics<double>& dst,
                               int dst_height, int dst_width, Interpolation interp = Interpolation::Bilinear) {
  auto src_row = [&](double i) { return (i - dst.cy) * src.fy / dst.fy + src.cy; };
  auto src_col = [&](double j) { return (j - dst.cx) * src.fx / dst.fx + src.cx; };
  constexpr double tol = 1e-9;
  const double r0 = src_row(0), r1 = src_row(dst_height - 1);
  const double c0 = src_col(0), c1 = src_col(dst_width - 1);
  if (std::min(r0, r1) < -tol || std::max(r0, r1) > image.height - 1 + tol || std::min(c0, c1) < -tol ||
      std::max(c0, c1) > image.width - 1 + tol)
    throw FieldOfViewError("destination field of view exceeds the source field of view");

  Raster<Scalar> out(dst_height, dst_width, image.channels);
  for (int i = 0; i < dst_height; ++i) {
    const double y = std::clamp(src_row(i), 0.0, double(image.height - 1));
    for (int j = 0; j < dst_width; ++j) {
      const double x = std::clamp(src_col(j), 0.0, double(image.width - 1));
      if (interp == Interpolation::Nearest) {
        const int yi = static_cast<int>(std::lround(y)), xi = static_cast<int>(std::lround(x));
        for (int c = 0; c < image.channels; ++c) out(i, j, c) = image(yi, xi, c);
        continue;
      }
      const int y0 = std::min(static_cast<int>(std::floor(y)), image.height - 1);
      const int x0 = std::min(static_cast<int>(std::floor(x)), image.width - 1);
      const int y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
      const double fy = y - y0, fx = x - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double v = (1 - fy) * ((1 - fx) * image(y0, x0, c) + fx * image(y0, x1, c)) +
                         fy * ((1 - fx) * image(y1, x0, c) + fx * image(y1, x1, c));
        out(i, j, c) = static_cast<Scalar>(v);
      }
    }
  }
  return out;
}

}  // namespace desksplat
