#pragma once

#include "desksplat/camera.hpp"
#include "desksplat/scene.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing_support {

using namespace desksplat;

inline Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int k = 0; k < dim; ++k) v[k] = nd(rng);
  return v.normalized();
}

inline Eigen::Matrix3d random_covariance(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const Eigen::Matrix3d q = Eigen::Quaterniond(random_unit(rng, 4).data()).normalized().toRotationMatrix();
  const Eigen::Vector3d s(u(rng), u(rng), u(rng));
  Eigen::Matrix3d c = q * s.cwiseAbs2().asDiagonal() * q.transpose();
  return 0.5 * (c + c.transpose());
}

/// Gaussians scattered in a ball of `spread` around `center`.
inline SceneD random_scene(std::mt19937_64& rng, int n, int dim, const Eigen::Vector3d& center, double spread,
                           double std_lo, double std_hi) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  SceneD s;
  s.feature_dim = dim;
  s.workspace = {center - Eigen::Vector3d::Constant(1.0), center + Eigen::Vector3d::Constant(1.0)};
  for (int i = 0; i < n; ++i) {
    Gaussian<double> g;
    g.mean = center + spread * Eigen::Vector3d(u(rng), u(rng), u(rng));
    g.covariance = random_covariance(rng, std_lo, std_hi);
    g.opacity = 0.2 + 0.75 * u01(rng);
    g.color = Eigen::Vector3d(u01(rng), u01(rng), u01(rng));
    g.feature = random_unit(rng, dim);
    s.gaussians.push_back(g);
  }
  return s;
}

/// Small camera looking down +z from the origin.
inline CameraD small_camera(int h = 24, int w = 24, double f = 40.0) {
  CameraD cam;
  cam.intrinsics = {f, f, 0.5 * (w - 1), 0.5 * (h - 1)};
  cam.width = w;
  cam.height = h;
  return cam;
}

inline std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "desksplat_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

/// Vector relative error with an absolute floor for near-zero references.
inline double rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor) {
  return (analytic - numeric).norm() / std::max(numeric.norm(), floor);
}

}  // namespace testing_support
