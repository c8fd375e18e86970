#pragma once

#include "desksplat/grasp.hpp"
#include "desksplat/synth.hpp"

#include <compare>
#include <span>

namespace desksplat {

/// Stand-in for inverse kinematics: the grasp point lies in the workspace box and the approach axis is
/// within `cone_deg` of `approach_axis`.
struct Feasibility {
  Aabb workspace{Eigen::Vector3d(-0.8, -0.6, -0.05), Eigen::Vector3d(0.8, 0.6, 0.6)};
  Eigen::Vector3d approach_axis = Eigen::Vector3d::UnitY();
  double cone_deg = 30.0;

  bool operator()(const Eigen::Isometry3d& grasp) const;
};

enum class EntityKind { Shelf, Object };

struct EntityId {
  EntityKind kind = EntityKind::Object;
  int index = 0;
  auto operator<=>(const EntityId&) const = default;
};

std::string to_string(const EntityId& id);

struct WorldModel {
  std::vector<ConvexHull> shelf;  // one hull per convex shelf region
  std::vector<std::optional<ConvexHull>> objects;  // indexed by instance; empty once removed
  std::vector<ConvexHull> gripper = GripperGeometry{}.parts();
  Feasibility feasibility;

  int entity_count() const;
  void remove(int instance) { objects.at(static_cast<size_t>(instance)).reset(); }
  bool present(int instance) const { return objects.at(static_cast<size_t>(instance)).has_value(); }
};

struct CollisionReport {
  int count = 0;
  std::vector<EntityId> ids;  // sorted, distinct
};

/// Hull fixed to the gripper: `hull` is in world coordinates while the gripper sits at `grasp`.
ConvexHull attach(const ConvexHull& hull, const Eigen::Isometry3d& grasp);

/// Distinct shelf regions and non-excluded object hulls hit by the gripper parts (and the attached
/// hull, given in the gripper frame) at any waypoint. Throws when consecutive waypoints are more than
/// `max_spacing` apart.
CollisionReport collision_count(const WorldModel& world, const Trajectory& traj, const ConvexHull* attached = nullptr,
                                std::span<const int> exclude = {}, double max_spacing = 0.005);

struct PlannerParams {
  double approach_distance = 0.10;
  double waypoint_spacing = 0.005;
  /// Feasible candidates kept per instance, best score first.
  int max_grasps = 48;
  int retrieval_samples = 64;
  int backtrack_depth = 3;
  uint64_t seed = 0;
};

/// Combined collisions of the approach (target hull present) and the retrieval (target attached and
/// excluded) for one grasp on `target`.
CollisionReport grasp_collisions(const WorldModel& world, const GraspCandidate& grasp, int target, const PlannerParams& params = {});

/// Feasible candidates of one instance, best score first (stable), capped at params.max_grasps.
std::vector<GraspCandidate> feasible_grasps(const WorldModel& world, const std::vector<GraspCandidate>& grasps, const PlannerParams& params = {});

/// Indices into `grasps` of feasible candidates whose approach and retrieval are collision-free.
std::vector<int> free_grasps(const WorldModel& world, const std::vector<GraspCandidate>& grasps, int target, const PlannerParams& params = {});

/// max over feasible grasps of minus the collision count; -(entity_count() + 1) when none is feasible.
int graspability(const WorldModel& world, const std::vector<GraspCandidate>& grasps, int target, const PlannerParams& params = {});

struct PickStep {
  int instance = -1;
  GraspCandidate grasp;
};

struct DeclutterPlan {
  std::vector<PickStep> steps;
  bool success = true;
  std::vector<int> stuck;  // remaining instances at the deepest dead end
  int backtracks = 0;
};

/// Picks instances one at a time, each chosen at random (seeded) among those with a collision-free
/// feasible grasp in the current world, removing each from the world once picked. On a dead end the
/// search revisits at most `backtrack_depth` earlier decisions.
DeclutterPlan plan_declutter(const WorldModel& world, const std::vector<std::vector<GraspCandidate>>& grasps, const PlannerParams& params = {});

struct PlaceAction {
  int instance = -1;
  GraspCandidate grasp;
  Eigen::Isometry3d place = Eigen::Isometry3d::Identity();  // rigid motion applied to the object
  int graspability_after = 0;
};

struct RetrievalPlan {
  int target = -1;
  int initial_graspability = 0;
  int graspability = 0;
  std::vector<PlaceAction> actions;
  bool exhausted = false;  // budget or actions ran out before the target became collision-free
  GraspCandidate final_grasp;
};

/// Greedy horizon-one search over pick-and-place actions on obstacles: each step scores up to
/// params.retrieval_samples collision-free feasible actions by the target's resulting graspability and
/// applies the best one if it does not lower graspability.
RetrievalPlan plan_retrieval(const WorldModel& world, const std::vector<std::vector<GraspCandidate>>& grasps, int target, int budget,
                             const std::vector<Eigen::Vector3d>& placements, const PlannerParams& params = {});

/// World state after applying the first `upto` actions of a retrieval plan (all when negative).
WorldModel replay(const WorldModel& world, const RetrievalPlan& plan, int upto = -1);
std::vector<std::vector<GraspCandidate>> replay_grasps(const std::vector<std::vector<GraspCandidate>>& grasps, const RetrievalPlan& plan,
                                                       int upto = -1);

std::string to_json_lines(const DeclutterPlan& plan);
std::string to_json_lines(const RetrievalPlan& plan);

/// Open-front shelf; the interior is [min, max] and the front face (y = min.y) is open.
struct ShelfSpec {
  Eigen::Vector3d interior_min = Eigen::Vector3d(-0.3, 0.0, 0.0);
  Eigen::Vector3d interior_max = Eigen::Vector3d(0.3, 0.3, 0.3);
  double board = 0.02;
};

/// Bottom, top, left, right and back boards as five convex regions.
std::vector<ConvexHull> shelf_regions(const ShelfSpec& spec = {});
TriangleMesh shelf_mesh(const ShelfSpec& spec = {});

struct ShelfScene {
  WorldModel world;
  std::vector<Primitive> objects;
  std::vector<TriangleMesh> meshes;
  std::vector<std::vector<GraspCandidate>> grasps;
  std::vector<Eigen::Vector3d> placements;
};

struct ShelfSceneSpec {
  ShelfSpec shelf;
  int min_objects = 3;
  int max_objects = 4;
  double min_gap = 0.06;
  /// Objects rest this far above the board.
  double lift = 0.002;
  AntipodalParams sampler;
  double score_threshold = 0.9;
};

/// Placement grid on a side table to the right of the shelf.
std::vector<Eigen::Vector3d> side_placements(const ShelfSpec& spec = {}, int nx = 3, int ny = 3, double step = 0.15);

/// Random boxes and upright cylinders inside the shelf; deterministic for a seed.
ShelfScene make_shelf_scene(uint64_t seed, const ShelfSceneSpec& spec = {});
/// A graspable box right in front of a box at the back of the shelf (target instance 1).
ShelfScene make_blocking_scene(const ShelfSceneSpec& spec = {});
/// Builds hulls and antipodal grasps for the given primitives.
ShelfScene shelf_scene_from(std::vector<Primitive> objects, const ShelfSceneSpec& spec);

}  // namespace desksplat
