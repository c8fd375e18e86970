#pragma once

#include "desksplat/mesh.hpp"
#include "desksplat/scene.hpp"

#include <cstdint>
#include <string>

namespace desksplat {

enum class PrimitiveKind { Sphere, Box, Cylinder };

std::string to_string(PrimitiveKind kind);
PrimitiveKind primitive_kind_from_string(const std::string& name);

struct PrimitiveSpec {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  /// Sphere: (radius, -, -). Box: half extents. Cylinder: (radius, half height, -).
  Eigen::Vector3d size = Eigen::Vector3d(0.04, 0.04, 0.04);
  Eigen::Vector3d color = Eigen::Vector3d(0.8, 0.2, 0.2);
  std::string label;
};

struct SynthSpec {
  std::vector<PrimitiveSpec> objects;
  Aabb workspace{Eigen::Vector3d(-0.15, -0.15, 0.0), Eigen::Vector3d(0.15, 0.15, 0.15)};
  int gaussians_per_object = 1500;
  /// Isotropic std of each surface Gaussian as a fraction of the object's bounding radius.
  double stddev_fraction = 1.0 / 20.0;
  double opacity = 0.9;
  int feature_dim = kDefaultFeatureDim;
  /// Minimum clearance between object footprints.
  double min_gap = 0.02;
  /// Keep objects within this distance of the workspace center when positive (cluttered layouts).
  double cluster_radius = 0.0;
  int max_attempts = 1000;
};

/// Placed primitive resting on the z = workspace.min.z plane.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Eigen::Vector3d size = Eigen::Vector3d::Zero();
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  std::string label;

  double bounding_radius() const;
  /// Horizontal radius of the footprint's circumscribed circle.
  double footprint_radius() const;
  TriangleMesh mesh() const;
  /// Unsigned distance from a world point to the primitive surface.
  double surface_distance(const Eigen::Vector3d& p) const;
  bool contains(const Eigen::Vector3d& p) const;
};

struct GroundTruthScene {
  SceneD scene;
  std::vector<int> instance_of;
  std::vector<TriangleMesh> meshes;
  std::vector<Primitive> primitives;

  int num_instances() const { return static_cast<int>(primitives.size()); }
  std::vector<std::vector<int>> instance_sets() const;
  std::vector<std::string> labels() const;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic for a fixed seed. Gaussian means lie on the primitive surfaces.
GroundTruthScene synth_scene(const SynthSpec& spec, uint64_t seed);

/// Default desk layout: `count` objects cycling sphere / box / cylinder with distinct colors.
SynthSpec default_synth_spec(int count);

/// Unit feature for instance k of the ground truth (standard basis vector).
Eigen::VectorXd instance_feature(int k, int feature_dim);

}  // namespace desksplat
