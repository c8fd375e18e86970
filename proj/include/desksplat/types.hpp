#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace desksplat {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar> using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar> using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar> using MatX3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

/// Axis-aligned box in world coordinates (meters).
struct Aabb {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();

  Eigen::Vector3d extent() const { return max - min; }
  Eigen::Vector3d center() const { return 0.5 * (min + max); }
  bool contains(const Eigen::Vector3d& p, double tol = 0.0) const {
    return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
  }
  void expand(const Eigen::Vector3d& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  static Aabb empty() {
    Aabb b;
    b.min.setConstant(std::numeric_limits<double>::infinity());
    b.max.setConstant(-std::numeric_limits<double>::infinity());
    return b;
  }
};

/// Row-major, channels-last dense buffer. `Image` is the f32 interchange form.
template <typename Scalar>
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<Scalar> data;

  Raster() = default;
  Raster(int h, int w, int c, Scalar fill = Scalar(0))
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  bool empty() const { return data.empty(); }
  bool same_shape(const Raster& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
  size_t index(int row, int col, int ch = 0) const {
    return (static_cast<size_t>(row) * width + col) * channels + ch;
  }
  Scalar& operator()(int row, int col, int ch = 0) { return data[index(row, col, ch)]; }
  const Scalar& operator()(int row, int col, int ch = 0) const { return data[index(row, col, ch)]; }
  Scalar* pixel(size_t p) { return data.data() + p * channels; }
  const Scalar* pixel(size_t p) const { return data.data() + p * channels; }

  template <typename T>
  Raster<T> cast() const {
    Raster<T> out;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using Image = Raster<float>;

}  // namespace desksplat
