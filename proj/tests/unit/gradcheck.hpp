#pragma once

#include "desksplat/render.hpp"
#include "support.hpp"

namespace testing_support {

inline Raster<double> random_raster(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Raster<double> r(h, w, c);
  for (auto& v : r.data) v = u(rng);
  return r;
}

inline double dot(const Raster<double>& a, const Raster<double>& b) {
  if (a.empty() || b.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

/// Linear probe L = <up, render(scene)> over every channel with an upstream weight.
inline double probe(const SceneD& scene, const CameraD& cam, const RenderUpstream<double>& up, const RenderOptions& opt) {
  const auto b = render(scene, cam, opt);
  return dot(up.color, b.color) + dot(up.alpha, b.alpha) + dot(up.feature, b.feature) + dot(up.instance_mask, b.instance_mask);
}

struct RenderGradError {
  double mean = 0, opacity = 0, color = 0, feature = 0;
  double worst() const { return std::max({mean, opacity, color, feature}); }
};

/// Central differences of the linear probe against render_backward, per Gaussian and parameter group.
inline RenderGradError compare_render_gradients(SceneD scene, const CameraD& cam, const RenderUpstream<double>& up,
                                                const RenderOptions& opt, double h = 1e-5) {
  const auto g = render_backward(scene, cam, up, opt);
  RenderGradError err;
  auto fd = [&](double& param) {
    const double keep = param;
    param = keep + h;
    const double lp = probe(scene, cam, up, opt);
    param = keep - h;
    const double lm = probe(scene, cam, up, opt);
    param = keep;
    return (lp - lm) / (2 * h);
  };
  // Floors keep relative error meaningful for parameters with negligible influence.
  double scale = 0.0;
  for (size_t i = 0; i < scene.size(); ++i)
    scale = std::max({scale, g.mean.row(static_cast<Eigen::Index>(i)).norm(), std::abs(g.opacity[static_cast<Eigen::Index>(i)]),
                      g.color.row(static_cast<Eigen::Index>(i)).norm(), g.feature.row(static_cast<Eigen::Index>(i)).norm()});
  const double floor = std::max(1e-9, 1e-6 * scale);
  for (size_t i = 0; i < scene.size(); ++i) {
    auto& gs = scene.gaussians[i];
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::VectorXd n_mean(3), n_color(3), n_feat(scene.feature_dim), n_op(1);
    for (int k = 0; k < 3; ++k) n_mean[k] = fd(gs.mean[k]);
    for (int k = 0; k < 3; ++k) n_color[k] = fd(gs.color[k]);
    for (int k = 0; k < scene.feature_dim; ++k) n_feat[k] = fd(gs.feature[k]);
    n_op[0] = fd(gs.opacity);
    err.mean = std::max(err.mean, rel_error(g.mean.row(row).transpose(), n_mean, floor));
    err.color = std::max(err.color, rel_error(g.color.row(row).transpose(), n_color, floor));
    err.feature = std::max(err.feature, rel_error(g.feature.row(row).transpose(), n_feat, floor));
    err.opacity = std::max(err.opacity, rel_error(Eigen::VectorXd::Constant(1, g.opacity[row]), n_op, floor));
  }
  return err;
}

/// Random scene of `n` Gaussians in front of the small camera with well-separated depths.
inline SceneD render_test_scene(std::mt19937_64& rng, int n, int dim) {
  for (;;) {
    auto s = random_scene(rng, n, dim, Eigen::Vector3d(0, 0, 1.0), 0.12, 0.02, 0.06);
    bool separated = true;
    for (size_t i = 0; i < s.size(); ++i)
      for (size_t j = i + 1; j < s.size(); ++j)
        if (std::abs(s.gaussians[i].mean.z() - s.gaussians[j].mean.z()) < 1e-3) separated = false;
    if (separated) return s;
  }
}

}  // namespace testing_support
