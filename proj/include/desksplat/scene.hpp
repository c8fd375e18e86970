#pragma once

#include "desksplat/types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace desksplat {

inline constexpr int kDefaultFeatureDim = 16;

template <typename Scalar>
struct Gaussian {
  Vec3<Scalar> mean = Vec3<Scalar>::Zero();
  Mat3<Scalar> covariance = Mat3<Scalar>::Identity();
  Scalar opacity = Scalar(1);
  Vec3<Scalar> color = Vec3<Scalar>::Zero();
  VecX<Scalar> feature;

  template <typename T>
  Gaussian<T> cast() const {
    return {mean.template cast<T>(), covariance.template cast<T>(), static_cast<T>(opacity),
            color.template cast<T>(), feature.template cast<T>()};
  }
};

template <typename Scalar>
struct Scene {
  std::vector<Gaussian<Scalar>> gaussians;
  int feature_dim = kDefaultFeatureDim;
  Aabb workspace;

  size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }

  template <typename T>
  Scene<T> cast() const {
    Scene<T> out;
    out.feature_dim = feature_dim;
    out.workspace = workspace;
    out.gaussians.reserve(gaussians.size());
    for (const auto& g : gaussians) out.gaussians.push_back(g.template cast<T>());
    return out;
  }

  /// Sub-scene in the order given by `indices`.
  Scene subset(const std::vector<int>& indices) const {
    Scene out;
    out.feature_dim = feature_dim;
    out.workspace = workspace;
    out.gaussians.reserve(indices.size());
    for (int i : indices) out.gaussians.push_back(gaussians.at(static_cast<size_t>(i)));
    return out;
  }
};

using SceneD = Scene<double>;
using SceneF = Scene<float>;

struct Violation {
  long index = -1;  // -1 for scene-level violations
  std::string what;
};

template <typename Scalar>
Mat3<Scalar> isotropic_covariance(Scalar stddev) {
  return Mat3<Scalar>::Identity() * (stddev * stddev);
}

/// Checks every Gaussian and Scene invariant. Never throws.
template <typename Scalar>
std::vector<Violation> validate_scene(const Scene<Scalar>& scene) {
  std::vector<Violation> out;
  if (scene.feature_dim <= 0) out.push_back({-1, "feature_dim must be positive"});
  const Eigen::Vector3d ext = scene.workspace.extent();
  if (!(ext.array() > 0.0).all()) out.push_back({-1, "workspace extent not positive"});

  for (size_t i = 0; i < scene.gaussians.size(); ++i) {
    const auto& g = scene.gaussians[i];
    const long idx = static_cast<long>(i);
    if (!g.mean.allFinite()) out.push_back({idx, "mean not finite"});
    const Mat3<Scalar>& c = g.covariance;
    if (!c.allFinite()) {
      out.push_back({idx, "covariance not finite"});
    } else {
      if (((c - c.transpose()).cwiseAbs().array() > Scalar(1e-9)).any())
        out.push_back({idx, "covariance not symmetric"});
      Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> es(Scalar(0.5) * (c + c.transpose()),
                                                     Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > Scalar(1e-12)))
        out.push_back({idx, "covariance not positive-definite"});
    }
    if (!(g.opacity >= Scalar(0) && g.opacity <= Scalar(1)))
      out.push_back({idx, "opacity out of [0,1]"});
    if (!((g.color.array() >= Scalar(0)).all() && (g.color.array() <= Scalar(1)).all()))
      out.push_back({idx, "color out of [0,1]"});
    if (g.feature.size() != scene.feature_dim) {
      out.push_back({idx, "feature length differs from feature_dim"});
    } else if (!(std::abs(g.feature.norm() - Scalar(1)) <= Scalar(1e-6))) {
      out.push_back({idx, "feature not unit-norm"});
    }
  }
  return out;
}

inline std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (const auto& v : violations) {
    if (v.index >= 0) os << "gaussian " << v.index << ": ";
    os << v.what << '\n';
  }
  return os.str();
}

}  // namespace desksplat
