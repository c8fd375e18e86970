#pragma once

#include "desksplat/types.hpp"

#include <filesystem>
#include <optional>

namespace desksplat {

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3i> faces;  // counter-clockwise seen from outside

  bool empty() const { return faces.empty(); }
  Aabb bounds() const;
  double area() const;
  Eigen::Vector3d face_normal(size_t f) const;
  /// Area-weighted vertex normals.
  std::vector<Eigen::Vector3d> vertex_normals() const;
  void append(const TriangleMesh& other);
  TriangleMesh transformed(const Eigen::Isometry3d& pose) const;
};

TriangleMesh make_box_mesh(const Eigen::Vector3d& half_extents);
TriangleMesh make_uv_sphere(double radius, int slices = 48, int stacks = 24);
TriangleMesh make_cylinder_mesh(double radius, double half_height, int slices = 48);

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_obj(const std::filesystem::path& path);
/// Reads every `o`/`g` group of an OBJ file as a separate mesh.
std::vector<TriangleMesh> read_obj_groups(const std::filesystem::path& path);
void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_stl(const std::filesystem::path& path);

struct RayHit {
  double distance = 0.0;
  size_t face = 0;
  Eigen::Vector3d barycentric = Eigen::Vector3d::Zero();
};

/// Nearest hit with distance > min_distance (Moller-Trumbore, both facings).
std::optional<RayHit> intersect_ray(const TriangleMesh& mesh, const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& direction, double min_distance = 1e-9);

}  // namespace desksplat
