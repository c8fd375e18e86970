#pragma once

#include "desksplat/camera.hpp"
#include "desksplat/render.hpp"

namespace testing_support {

using namespace desksplat;

/// Analytic z-depth of a sphere through every pixel center.
inline Raster<double> sphere_depth(const CameraD& cam, const Eigen::Vector3d& center, double radius) {
  Raster<double> out(cam.height, cam.width, 1, kEmptyDepth);
  const Eigen::Vector3d eye = cam.position(), fwd = cam.rotation.row(2).transpose();
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const Eigen::Vector3d dc((c - cam.intrinsics.cx) / cam.intrinsics.fx, (r - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
      const Eigen::Vector3d d = (cam.rotation.transpose() * dc).normalized();
      const Eigen::Vector3d oc = eye - center;
      const double b = oc.dot(d), q = oc.squaredNorm() - radius * radius, disc = b * b - q;
      if (disc < 0) continue;
      const double t = -b - std::sqrt(disc);
      if (t > 0) out(r, c, 0) = t * d.dot(fwd);
    }
  return out;
}

}  // namespace testing_support
