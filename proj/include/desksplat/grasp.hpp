#pragma once

#include "desksplat/camera.hpp"
#include "desksplat/hull.hpp"
#include "desksplat/render.hpp"

#include <functional>
#include <optional>

namespace desksplat {

/// Parallel-jaw gripper in its own frame: z is the approach direction, x the closing direction and the
/// origin sits midway between the fingertips' contact patches. The jaws are modelled fully open.
struct GripperGeometry {
  double max_opening = 0.08;
  double finger_thickness = 0.01;  // along x
  double finger_width = 0.02;      // along y
  double finger_length = 0.06;
  double tip_extension = 0.02;  // fingertip beyond the origin along +z
  double palm_thickness = 0.02;

  /// Two fingers and the palm as convex parts.
  std::vector<ConvexHull> parts() const;
};

struct GraspCandidate {
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  double score = 0;  // in [0, 1]
  int instance = -1;
  double width = 0;  // contact separation along the closing axis
};

enum class TrajectoryPhase { Approach, Retrieval };

struct Trajectory {
  std::vector<Eigen::Isometry3d> waypoints;
  TrajectoryPhase phase = TrajectoryPhase::Approach;
};

/// Straight line ending at `grasp`, starting `distance` back along the approach axis, with at most
/// `spacing` between consecutive waypoints.
Trajectory approach_trajectory(const Eigen::Isometry3d& grasp, double distance = 0.10, double spacing = 0.005);
/// The approach waypoints in reverse order.
Trajectory retrieval_of(const Trajectory& approach);

struct AntipodalParams {
  int samples = 300;
  int approach_angles = 12;
  /// World direction the approach axis is additionally aligned with, when set.
  std::optional<Eigen::Vector3d> approach_hint;
  double min_width = 0.005;
  /// Width fit falls linearly from 1 at (1 - margin) * max_opening to 0 at max_opening.
  double width_margin = 0.1;
  double crease_deg = 45.0;
  uint64_t seed = 0;
  GripperGeometry gripper;
};

using GraspSampler = std::function<std::vector<GraspCandidate>(const TriangleMesh& mesh, int instance)>;

/// Antipodal heuristic: rays shot inward along interpolated surface normals pair each sample with the
/// opposite surface; score = normal anti-alignment times width fit.
std::vector<GraspCandidate> antipodal_grasps(const TriangleMesh& mesh, int instance, const AntipodalParams& params = {});
GraspSampler antipodal_sampler(const AntipodalParams& params = {});

/// Candidates from `sampler` with score >= threshold, in sampler order.
std::vector<GraspCandidate> sample_grasps(const TriangleMesh& mesh, const GraspSampler& sampler, double score_threshold = 0.9,
                                          int instance = 0);

/// Per face corner, the mean normal of neighboring faces within `crease_deg` of the face.
std::vector<std::array<Eigen::Vector3d, 3>> corner_normals(const TriangleMesh& mesh, double crease_deg = 45.0);

struct AdaptedDepth {
  Raster<double> depth;
  CameraD camera;
};

/// Slides the camera along its viewing axis until the farthest mesh vertex sits at depth d_far, then
/// renders the mesh depth with background pixels at d_far.
AdaptedDepth adapt_depth_for_grasp(const TriangleMesh& mesh, const CameraD& camera, double d_far);

}  // namespace desksplat
