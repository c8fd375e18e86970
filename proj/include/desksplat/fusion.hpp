#pragma once

#include "desksplat/camera.hpp"
#include "desksplat/mesh.hpp"
#include "desksplat/render.hpp"

#include <array>
#include <unordered_map>

namespace desksplat {

/// Dense truncated signed distance volume. tsdf is normalized by the truncation distance and starts
/// at +1 with zero weight. Voxel (i, j, k) has its center at origin + voxel_size * (i, j, k).
template <typename Scalar>
struct TsdfVolume {
  Vec3<Scalar> origin = Vec3<Scalar>::Zero();
  Scalar voxel_size = Scalar(0.004);
  Eigen::Vector3i dims = Eigen::Vector3i::Zero();
  Scalar truncation = Scalar(0.016);
  std::vector<Scalar> tsdf;
  std::vector<Scalar> weight;

  TsdfVolume() = default;
  TsdfVolume(const Vec3<Scalar>& origin_, Scalar voxel, const Eigen::Vector3i& dims_, Scalar truncation_voxels = Scalar(4))
      : origin(origin_), voxel_size(voxel), dims(dims_), truncation(truncation_voxels * voxel) {
    if (!(voxel > Scalar(0))) throw std::invalid_argument("voxel size must be positive");
    if ((dims.array() < 1).any()) throw std::invalid_argument("volume dimensions must be positive");
    tsdf.assign(size(), Scalar(1));
    weight.assign(size(), Scalar(0));
  }

  /// Volume covering `box` (grown by the truncation band) at the given voxel size.
  static TsdfVolume covering(const Aabb& box, Scalar voxel, Scalar truncation_voxels = Scalar(4)) {
    const Eigen::Vector3d pad = Eigen::Vector3d::Constant(double(truncation_voxels * voxel) + double(voxel));
    const Eigen::Vector3d lo = box.min - pad, ext = box.extent() + 2 * pad;
    const Eigen::Vector3i d = (ext / double(voxel)).array().ceil().template cast<int>() + 1;
    return TsdfVolume(lo.template cast<Scalar>(), voxel, d, truncation_voxels);
  }

  size_t size() const { return static_cast<size_t>(dims.x()) * dims.y() * dims.z(); }
  size_t index(int i, int j, int k) const { return (static_cast<size_t>(k) * dims.y() + j) * dims.x() + i; }
  Vec3<Scalar> position(int i, int j, int k) const { return origin + voxel_size * Vec3<Scalar>(Scalar(i), Scalar(j), Scalar(k)); }
};

/// Weighted running-average TSDF update from one depth image (z-depth, renderer sentinel for empty
/// pixels). Voxels further than the truncation band behind the observed surface are left alone.
template <typename Scalar>
void tsdf_integrate(TsdfVolume<Scalar>& vol, const Raster<Scalar>& depth, const Camera<Scalar>& cam) {
  if (depth.height != cam.height || depth.width != cam.width || depth.channels != 1)
    throw std::invalid_argument("depth image does not match camera");
  const auto& kk = cam.intrinsics;
  const Scalar tau = vol.truncation;
#pragma omp parallel for schedule(static)
  for (int k = 0; k < vol.dims.z(); ++k)
    for (int j = 0; j < vol.dims.y(); ++j)
      for (int i = 0; i < vol.dims.x(); ++i) {
        const Vec3<Scalar> pc = cam.to_camera(vol.position(i, j, k));
        if (pc.z() <= Scalar(1e-6)) continue;
        const long col = std::lround(double(kk.fx * pc.x() / pc.z() + kk.cx));
        const long row = std::lround(double(kk.fy * pc.y() / pc.z() + kk.cy));
        if (col < 0 || row < 0 || col >= cam.width || row >= cam.height) continue;
        const Scalar d = depth(static_cast<int>(row), static_cast<int>(col), 0);
        if (is_empty_depth(double(d))) continue;
        const Scalar sdf = d - pc.z();
        if (sdf < -tau) continue;
        const Scalar obs = std::min(Scalar(1), sdf / tau);
        const size_t v = vol.index(i, j, k);
        const Scalar w = vol.weight[v];
        vol.tsdf[v] = (vol.tsdf[v] * w + obs) / (w + Scalar(1));
        vol.weight[v] = w + Scalar(1);
      }
}

namespace detail {

/// Triangles (as cube-edge triples) per corner-sign configuration. Corner c sits at bits (x, y, z) of c;
/// bit c of the configuration is set when that corner is inside (tsdf < 0). Built once by walking the
/// six cube faces: each face contributes iso-line segments between sign-changing edges, ambiguous faces
/// separate their inside corners, and the closed segment loops are fan-triangulated.
const std::vector<std::vector<std::array<int, 3>>>& marching_cubes_table();
/// Corner pair of each of the 12 cube edges; edges 4a..4a+3 run along axis a.
const std::array<std::array<int, 2>, 12>& cube_edges();

}  // namespace detail

/// Marching-cubes surface at tsdf = 0 over cells whose eight corners have all been observed. Faces
/// are oriented with normals toward increasing tsdf (free space). Vertices are shared between cells.
template <typename Scalar>
TriangleMesh extract_mesh(const TsdfVolume<Scalar>& vol) {
  TriangleMesh mesh;
  const auto& table = detail::marching_cubes_table();
  const auto& edges = detail::cube_edges();
  std::unordered_map<int64_t, int> cache;
  auto corner = [](int c) { return Eigen::Vector3i(c & 1, (c >> 1) & 1, (c >> 2) & 1); };
  for (int k = 0; k + 1 < vol.dims.z(); ++k)
    for (int j = 0; j + 1 < vol.dims.y(); ++j)
      for (int i = 0; i + 1 < vol.dims.x(); ++i) {
        std::array<Scalar, 8> val;
        int config = 0;
        bool observed = true;
        for (int c = 0; c < 8 && observed; ++c) {
          const Eigen::Vector3i o = corner(c);
          const size_t v = vol.index(i + o.x(), j + o.y(), k + o.z());
          observed = vol.weight[v] > Scalar(0);
          val[static_cast<size_t>(c)] = vol.tsdf[v];
          if (vol.tsdf[v] < Scalar(0)) config |= 1 << c;
        }
        if (!observed || config == 0 || config == 255) continue;
        Eigen::Vector3d grad = Eigen::Vector3d::Zero();
        for (int c = 0; c < 8; ++c) {
          const Eigen::Vector3i o = corner(c);
          for (int a = 0; a < 3; ++a) grad[a] += (o[a] ? 0.25 : -0.25) * double(val[static_cast<size_t>(c)]);
        }
        auto vertex = [&](int e) {
          const int c0 = edges[static_cast<size_t>(e)][0], c1 = edges[static_cast<size_t>(e)][1];
          const Eigen::Vector3i p0 = Eigen::Vector3i(i, j, k) + corner(c0);
          const int64_t key = (static_cast<int64_t>(vol.index(p0.x(), p0.y(), p0.z())) << 2) | (e / 4);
          const auto it = cache.find(key);
          if (it != cache.end()) return it->second;
          const double v0 = double(val[static_cast<size_t>(c0)]), v1 = double(val[static_cast<size_t>(c1)]);
          const double t = v0 / (v0 - v1);
          const Eigen::Vector3d a = vol.position(p0.x(), p0.y(), p0.z()).template cast<double>();
          Eigen::Vector3d b = a;
          b[e / 4] += double(vol.voxel_size);
          mesh.vertices.push_back(a + t * (b - a));
          const int id = static_cast<int>(mesh.vertices.size()) - 1;
          cache.emplace(key, id);
          return id;
        };
        for (const auto& tri : table[static_cast<size_t>(config)]) {
          Eigen::Vector3i f(vertex(tri[0]), vertex(tri[1]), vertex(tri[2]));
          const Eigen::Vector3d n = (mesh.vertices[static_cast<size_t>(f[1])] - mesh.vertices[static_cast<size_t>(f[0])])
                                        .cross(mesh.vertices[static_cast<size_t>(f[2])] - mesh.vertices[static_cast<size_t>(f[0])]);
          if (n.dot(grad) < 0) std::swap(f[1], f[2]);
          mesh.faces.push_back(f);
        }
      }
  return mesh;
}

template <typename Scalar>
std::vector<Eigen::Vector3d> extract_pointcloud(const TsdfVolume<Scalar>& vol) {
  return extract_mesh(vol).vertices;
}

/// z-depth of the nearest mesh hit through each pixel center, sentinel where the ray misses.
inline Raster<double> raycast_depth(const TriangleMesh& mesh, const CameraD& cam, double empty_depth = kEmptyDepth) {
  Raster<double> out(cam.height, cam.width, 1, empty_depth);
  const Eigen::Matrix3d rt = cam.rotation.transpose();
  const Eigen::Vector3d eye = cam.position();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const Eigen::Vector3d dc((c - cam.intrinsics.cx) / cam.intrinsics.fx, (r - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
      const auto hit = intersect_ray(mesh, eye, rt * dc.normalized());
      if (hit) out(r, c, 0) = hit->distance / dc.norm();
    }
  return out;
}

}  // namespace desksplat
