#pragma once

#include "desksplat/mesh.hpp"

#include <span>

namespace desksplat {

class HullError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed convex polytope kept as its hull vertices and outward triangles.
struct ConvexHull {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3i> faces;
  Aabb bounds = Aabb::empty();

  bool empty() const { return vertices.empty(); }
  Eigen::Vector3d support(const Eigen::Vector3d& dir) const;
  Eigen::Vector3d centroid() const;
  ConvexHull transformed(const Eigen::Isometry3d& pose) const;
  bool contains(const Eigen::Vector3d& p, double tol = 1e-9) const;
  /// Largest signed distance of any vertex above any face plane (<= 0 for a valid hull).
  double max_face_violation() const;
  TriangleMesh mesh() const;
};

/// Incremental 3D hull. Throws HullError for fewer than four affinely independent points.
ConvexHull convex_hull(std::span<const Eigen::Vector3d> points);
inline ConvexHull convex_hull(const TriangleMesh& mesh) { return convex_hull(std::span<const Eigen::Vector3d>(mesh.vertices)); }
ConvexHull box_hull(const Eigen::Vector3d& min, const Eigen::Vector3d& max);

struct GjkResult {
  bool intersect = false;
  double distance = 0;  // 0 when intersecting
  int iterations = 0;
};

/// GJK distance on the Minkowski difference a - b. Stops when the closest-point estimate improves by
/// less than `tolerance`; closed sets within `tolerance` of each other count as intersecting.
GjkResult gjk(const ConvexHull& a, const ConvexHull& b, double tolerance = 1e-9);
/// Box overlap test, then GJK stopping at the first separating plane.
bool intersects(const ConvexHull& a, const ConvexHull& b, double tolerance = 1e-9);

}  // namespace desksplat
