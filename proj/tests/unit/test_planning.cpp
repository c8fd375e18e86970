#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "desksplat/fusion.hpp"
#include "desksplat/planning.hpp"

#include <json.hpp>

#include "sat_oracle.hpp"

#include <random>

using namespace desksplat;
using testing_support::sat_separated;

namespace {

std::vector<Eigen::Vector3d> random_cloud(std::mt19937_64& rng, int n, const Eigen::Vector3d& center, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < n; ++i) pts.push_back(center + Eigen::Vector3d(g(rng), g(rng), g(rng)));
  return pts;
}

/// Dense point-containment oracle: samples points inside every gripper part along the trajectory.
std::set<int> containment_hits(const WorldModel& world, const Trajectory& traj, double step = 0.002) {
  std::set<int> out;
  for (const auto& w : traj.waypoints)
    for (const auto& part : world.gripper) {
      const Aabb& b = part.bounds;
      for (double x = b.min.x(); x <= b.max.x() + 1e-12; x += step)
        for (double y = b.min.y(); y <= b.max.y() + 1e-12; y += step)
          for (double z = b.min.z(); z <= b.max.z() + 1e-12; z += step)
            for (size_t o = 0; o < world.objects.size(); ++o)
              if (world.objects[o] && world.objects[o]->contains(w * Eigen::Vector3d(x, y, z), 1e-9)) out.insert(static_cast<int>(o));
    }
  return out;
}

Eigen::Isometry3d approach_pose(const Eigen::Vector3d& at, const Eigen::Vector3d& dir) {
  Eigen::Isometry3d p = Eigen::Isometry3d::Identity();
  const Eigen::Vector3d z = dir.normalized();
  const Eigen::Vector3d x = (std::abs(z.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitZ());
  const Eigen::Vector3d xo = (x - x.dot(z) * z).normalized();
  p.linear().col(0) = xo;
  p.linear().col(1) = z.cross(xo);
  p.linear().col(2) = z;
  p.translation() = at;
  return p;
}

/// Every step of a declutter plan is feasible and collision-free in the world it runs in.
void verify_declutter(const WorldModel& world, const DeclutterPlan& plan) {
  WorldModel w = world;
  for (const auto& s : plan.steps) {
    CHECK(w.feasibility(s.grasp.pose));
    const auto approach = approach_trajectory(s.grasp.pose);
    CHECK(collision_count(w, approach).count == 0);
    const ConvexHull held = attach(*w.objects[static_cast<size_t>(s.instance)], s.grasp.pose);
    const int ex[] = {s.instance};
    CHECK(collision_count(w, retrieval_of(approach), &held, ex).count == 0);
    w.remove(s.instance);
  }
}

}  // namespace

TEST_CASE("hull of random clouds supports every point") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_cloud(rng, 50 + 40 * trial, Eigen::Vector3d::Random(), 0.05);
    const auto hull = convex_hull(pts);
    CHECK(hull.max_face_violation() <= 1e-6);
    for (const auto& p : pts) CHECK(hull.contains(p, 1e-9));
    // Euler characteristic of a closed triangulated sphere.
    CHECK(int(hull.vertices.size()) - int(hull.faces.size()) / 2 == 2);
  }
  const auto cube = box_hull(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones());
  CHECK(cube.vertices.size() == 8);
  CHECK(cube.faces.size() == 12);
  CHECK(cube.contains(Eigen::Vector3d::Constant(0.5)));
  CHECK(!cube.contains(Eigen::Vector3d(0.5, 0.5, 1.01)));
  const std::vector<Eigen::Vector3d> flat{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  CHECK_THROWS_AS(convex_hull(flat), HullError);
  CHECK_THROWS_AS(convex_hull(std::vector<Eigen::Vector3d>(3, Eigen::Vector3d::Zero())), HullError);
}

TEST_CASE("gjk agrees with the separating axis oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.12, 0.12);
  int overlapping = 0, separated = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = convex_hull(random_cloud(rng, 12, Eigen::Vector3d::Zero(), 0.04));
    const auto b = convex_hull(random_cloud(rng, 12, Eigen::Vector3d(u(rng), u(rng), u(rng)), 0.04));
    const bool sep = sat_separated(a, b);
    const auto r = gjk(a, b);
    CHECK(r.intersect == !sep);
    CHECK(intersects(a, b) == !sep);
    if (sep) {
      double closest = 1e300;
      for (const auto& p : a.vertices)
        for (const auto& q : b.vertices) closest = std::min(closest, (p - q).norm());
      CHECK(r.distance <= closest + 1e-9);
      CHECK(r.distance > 0);
    }
    (sep ? separated : overlapping)++;
  }
  CHECK(overlapping > 30);
  CHECK(separated > 30);

  // Unit cubes: face contact counts, a gap of 1e-6 does not.
  const auto c0 = box_hull(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones());
  CHECK(intersects(c0, box_hull(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(2, 1, 1))));
  const auto far = gjk(c0, box_hull(Eigen::Vector3d(1.5, 0.2, 0.3), Eigen::Vector3d(2, 1, 1)));
  CHECK(!far.intersect);
  CHECK(far.distance == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(!intersects(c0, box_hull(Eigen::Vector3d(1 + 1e-6, 0, 0), Eigen::Vector3d(2, 1, 1))));
}

TEST_CASE("gripper parts and straight approaches") {
  const auto parts = GripperGeometry{}.parts();
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].bounds.min.x() == doctest::Approx(0.04));
  CHECK(parts[1].bounds.max.x() == doctest::Approx(-0.04));
  CHECK(parts[2].bounds.min.z() == doctest::Approx(-0.06));
  CHECK(parts[0].bounds.max.z() == doctest::Approx(0.02));

  const auto grasp = approach_pose(Eigen::Vector3d(0.1, 0.2, 0.05), Eigen::Vector3d(0.3, 1, -0.2));
  const auto t = approach_trajectory(grasp);
  REQUIRE(t.waypoints.size() >= 2);
  CHECK(t.phase == TrajectoryPhase::Approach);
  CHECK((t.waypoints.back().matrix() - grasp.matrix()).norm() == 0.0);
  CHECK((t.waypoints.front().translation() - grasp.translation()).norm() == doctest::Approx(0.10));
  for (size_t w = 1; w < t.waypoints.size(); ++w) {
    CHECK((t.waypoints[w].translation() - t.waypoints[w - 1].translation()).norm() <= 0.005 + 1e-12);
    CHECK((t.waypoints[w].linear() - grasp.linear()).norm() == 0.0);
  }
  const auto r = retrieval_of(t);
  CHECK(r.phase == TrajectoryPhase::Retrieval);
  REQUIRE(r.waypoints.size() == t.waypoints.size());
  for (size_t w = 0; w < t.waypoints.size(); ++w) CHECK(r.waypoints[w].matrix() == t.waypoints[t.waypoints.size() - 1 - w].matrix());
}

TEST_CASE("antipodal grasps on a small sphere pass through its center") {
  const Eigen::Vector3d c(0.02, -0.01, 0.05);
  Eigen::Isometry3d at = Eigen::Isometry3d::Identity();
  at.translation() = c;
  const auto mesh = make_uv_sphere(0.03).transformed(at);
  AntipodalParams params;
  params.samples = 100;
  params.seed = 3;
  const auto grasps = sample_grasps(mesh, antipodal_sampler(params));
  REQUIRE(!grasps.empty());
  for (const auto& g : grasps) {
    const Eigen::Vector3d x = g.pose.linear().col(0), o = g.pose.translation();
    // Distance from the center to the closing axis line.
    CHECK(((c - o) - (c - o).dot(x) * x).norm() < 1e-3);
    CHECK(g.score >= 0.9);
    CHECK(g.score <= 1.0);
    CHECK(g.width == doctest::Approx(0.06).epsilon(0.01));
    CHECK((g.pose.linear().transpose() * g.pose.linear() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(g.pose.linear().determinant() == doctest::Approx(1.0));
  }
  CHECK(sample_grasps(mesh, antipodal_sampler(params), 1.0 + 1e-9).empty());
  for (const auto& g : antipodal_grasps(mesh, 0, params)) {
    CHECK(g.score >= 0.0);
    CHECK(g.score <= 1.0);
  }

  // A sphere wider than the jaws has no candidates.
  CHECK(sample_grasps(make_uv_sphere(0.05), antipodal_sampler(params)).empty());
  // Box faces are found through crease-aware normals.
  const auto box = sample_grasps(make_box_mesh(Eigen::Vector3d(0.02, 0.025, 0.05)), antipodal_sampler(params));
  REQUIRE(!box.empty());
  for (const auto& g : box) CHECK(g.score == doctest::Approx(1.0));
}

TEST_CASE("depth adaptation slides the camera along its axis") {
  // A fronto-parallel square with a center vertex and a box in front of it.
  TriangleMesh mesh;
  mesh.vertices = {{-0.1, -0.1, 0}, {0.1, -0.1, 0}, {0.1, 0.1, 0}, {-0.1, 0.1, 0}, {0, 0, 0}};
  mesh.faces = {{4, 0, 1}, {4, 1, 2}, {4, 2, 3}, {4, 3, 0}};
  Eigen::Isometry3d lift = Eigen::Isometry3d::Identity();
  lift.translation() = Eigen::Vector3d(0.03, 0, 0.05);
  mesh.append(make_box_mesh(Eigen::Vector3d::Constant(0.02)).transformed(lift));
  const auto k = intrinsics_from_fov(33, 33, 40.0);
  const auto cam = look_at<double>(k, 33, 33, Eigen::Vector3d(0, 0, 1.3), Eigen::Vector3d::Zero());
  const double d_far = 0.7;
  const auto out = adapt_depth_for_grasp(mesh, cam, d_far);
  CHECK(out.camera.rotation == cam.rotation);
  CHECK(*std::max_element(out.depth.data.begin(), out.depth.data.end()) == d_far);
  // The center vertex projects onto the middle pixel.
  const Eigen::Vector3d pc = out.camera.to_camera(Eigen::Vector3d::Zero());
  const int col = static_cast<int>(std::lround(k.fx * pc.x() / pc.z() + k.cx)), row = static_cast<int>(std::lround(k.fy * pc.y() / pc.z() + k.cy));
  CHECK(std::abs(out.depth(row, col, 0) - d_far) < 1e-6);
  CHECK(out.depth(16, 16, 0) == doctest::Approx(d_far));
  double nearest = 1e9;
  for (double d : out.depth.data) nearest = std::min(nearest, d);
  CHECK(nearest == doctest::Approx(d_far - 0.07).epsilon(1e-6));
  CHECK((out.camera.forward() - cam.forward()).norm() < 1e-12);
  CHECK(((out.camera.position() - cam.position()).cross(cam.forward())).norm() < 1e-12);
  CHECK_THROWS_AS(adapt_depth_for_grasp(mesh, cam, 0.05), std::domain_error);
  CHECK_THROWS(adapt_depth_for_grasp(TriangleMesh{}, cam, 0.5));
}

TEST_CASE("collision counting against a point-containment oracle") {
  WorldModel world;
  CHECK(collision_count(world, approach_trajectory(approach_pose(Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY()))).count == 0);

  world.objects.emplace_back(box_hull(Eigen::Vector3d(-0.02, 0.05, 0.0), Eigen::Vector3d(0.02, 0.09, 0.06)));
  world.objects.emplace_back(box_hull(Eigen::Vector3d(0.3, 0.05, 0.0), Eigen::Vector3d(0.34, 0.09, 0.06)));
  // Straight through the first box.
  const auto through = approach_trajectory(approach_pose(Eigen::Vector3d(0, 0.12, 0.03), Eigen::Vector3d::UnitY()), 0.1);
  const auto r = collision_count(world, through);
  CHECK(r.count == 1);
  REQUIRE(r.ids.size() == 1);
  CHECK(r.ids[0] == EntityId{EntityKind::Object, 0});
  CHECK(containment_hits(world, through) == std::set<int>{0});
  // Same path shifted clear of it.
  const auto clear = approach_trajectory(approach_pose(Eigen::Vector3d(0.15, 0.12, 0.03), Eigen::Vector3d::UnitY()), 0.1);
  CHECK(collision_count(world, clear).count == 0);
  CHECK(containment_hits(world, clear).empty());
  // Excluding the hit instance.
  const int ex[] = {0};
  CHECK(collision_count(world, through, nullptr, ex).count == 0);

  // Random paths: oracle hits are always reported; growing the world never lowers the count.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.1, 0.4);
  for (int trial = 0; trial < 40; ++trial) {
    const auto t = approach_trajectory(approach_pose(Eigen::Vector3d(u(rng), 0.07 + 0.2 * u(rng), 0.03), Eigen::Vector3d(u(rng), 1, 0.3 * u(rng))), 0.1);
    WorldModel small = world;
    small.objects.pop_back();
    const auto big = collision_count(world, t);
    const auto little = collision_count(small, t);
    CHECK(big.count >= little.count);
    for (int hit : containment_hits(world, t))
      CHECK(std::find(big.ids.begin(), big.ids.end(), EntityId{EntityKind::Object, hit}) != big.ids.end());
  }

  // An attached hull is carried along.
  const auto held = box_hull(Eigen::Vector3d(-0.02, -0.02, -0.02), Eigen::Vector3d(0.02, 0.02, 0.02));
  const auto side = approach_trajectory(approach_pose(Eigen::Vector3d(0.32, 0.04, 0.03), Eigen::Vector3d::UnitY()), 0.1);
  CHECK(collision_count(world, side).count == 0);
  CHECK(collision_count(world, retrieval_of(side), &held).count == 1);

  Trajectory coarse{{approach_pose(Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY()), approach_pose(Eigen::Vector3d(0, 0.01, 0), Eigen::Vector3d::UnitY())}};
  CHECK_THROWS_AS(collision_count(world, coarse), std::invalid_argument);
}

TEST_CASE("shelf regions and scenes") {
  const auto regions = shelf_regions();
  CHECK(regions.size() == 5);
  const auto interior = box_hull(Eigen::Vector3d(-0.299, 0.0, 0.001), Eigen::Vector3d(0.299, 0.299, 0.299));
  for (size_t i = 0; i < regions.size(); ++i) {
    CHECK(!intersects(interior, regions[i]));
    int touching = 0;
    for (size_t j = 0; j < regions.size(); ++j) touching += j != i && gjk(regions[i], regions[j]).distance == 0.0;
    CHECK(touching >= 2);
  }
  CHECK(shelf_mesh().faces.size() == 60);
  const auto a = make_shelf_scene(4), b = make_shelf_scene(4);
  REQUIRE(a.objects.size() >= 3);
  CHECK(a.objects.size() == b.objects.size());
  for (size_t k = 0; k < a.objects.size(); ++k) {
    CHECK(a.objects[k].pose.matrix() == b.objects[k].pose.matrix());
    CHECK(a.grasps[k].size() == b.grasps[k].size());
    CHECK(!a.grasps[k].empty());
    CHECK(a.world.objects[k]->max_face_violation() <= 1e-6);
    for (const auto& s : a.world.shelf) CHECK(!intersects(*a.world.objects[k], s));
  }
}

TEST_CASE("declutter plans") {
  CHECK(plan_declutter(WorldModel{}, {}).steps.empty());

  std::vector<Primitive> two(2);
  for (int k = 0; k < 2; ++k) {
    two[static_cast<size_t>(k)].kind = PrimitiveKind::Box;
    two[static_cast<size_t>(k)].size = Eigen::Vector3d(0.02, 0.02, 0.04);
    two[static_cast<size_t>(k)].pose.translation() = Eigen::Vector3d(k ? 0.15 : -0.15, 0.15, 0.042);
  }
  const auto sep = shelf_scene_from(two, {});
  const auto plan = plan_declutter(sep.world, sep.grasps);
  CHECK(plan.success);
  REQUIRE(plan.steps.size() == 2);
  CHECK(plan.steps[0].instance != plan.steps[1].instance);
  verify_declutter(sep.world, plan);

  const auto blocking = make_blocking_scene();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    PlannerParams params;
    params.seed = seed;
    const auto p = plan_declutter(blocking.world, blocking.grasps, params);
    REQUIRE(p.success);
    REQUIRE(p.steps.size() == 2);
    CHECK(p.steps[0].instance == 0);
    CHECK(p.steps[1].instance == 1);
    verify_declutter(blocking.world, p);
    const auto again = plan_declutter(blocking.world, blocking.grasps, params);
    CHECK(to_json_lines(again) == to_json_lines(p));
  }

  // Walled in: the object is surrounded on every approachable side.
  auto boxed = sep;
  boxed.world.shelf.push_back(box_hull(Eigen::Vector3d(-0.3, 0.0, 0.0), Eigen::Vector3d(-0.25, 0.3, 0.3)));
  boxed.world.shelf.push_back(box_hull(Eigen::Vector3d(-0.3, 0.0, 0.0), Eigen::Vector3d(0.0, 0.02, 0.3)));
  const auto stuck = plan_declutter(boxed.world, boxed.grasps);
  CHECK(!stuck.success);
  CHECK(stuck.stuck == std::vector<int>{0});

  auto missing = sep.grasps;
  missing[1].clear();
  CHECK_THROWS_AS(plan_declutter(sep.world, missing), std::invalid_argument);
}

TEST_CASE("retrieval plans") {
  const auto blocking = make_blocking_scene();
  CHECK(graspability(blocking.world, feasible_grasps(blocking.world, blocking.grasps[1]), 1) < 0);
  const auto plan = plan_retrieval(blocking.world, blocking.grasps, 1, 5, blocking.placements);
  CHECK(plan.initial_graspability < 0);
  REQUIRE(plan.actions.size() == 1);
  CHECK(plan.actions[0].instance == 0);
  CHECK(plan.graspability == 0);
  CHECK(!plan.exhausted);
  // Re-verify the pick in the original world and the target's grasp after the place.
  CHECK(grasp_collisions(blocking.world, plan.actions[0].grasp, 0).count == 0);
  const auto after = replay(blocking.world, plan);
  CHECK(grasp_collisions(after, plan.final_grasp, 1).count == 0);
  CHECK(after.feasibility(plan.final_grasp.pose));
  const auto lines = to_json_lines(plan);
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 2);
  CHECK(nlohmann::json::parse(lines.substr(0, lines.find('\n')))["type"] == "pick_place");

  // Unobstructed target.
  const auto free = plan_retrieval(blocking.world, blocking.grasps, 0, 5, blocking.placements);
  CHECK(free.actions.empty());
  CHECK(free.graspability == 0);

  for (uint64_t seed = 0; seed < 4; ++seed) {
    const auto scene = make_shelf_scene(100 + seed);
    for (int target = 0; target < static_cast<int>(scene.objects.size()); ++target) {
      const auto p = plan_retrieval(scene.world, scene.grasps, target, 3, scene.placements);
      int prev = p.initial_graspability;
      for (size_t a = 0; a < p.actions.size(); ++a) {
        CHECK(p.actions[a].graspability_after >= prev);
        prev = p.actions[a].graspability_after;
        const auto w = replay(scene.world, p, static_cast<int>(a));
        CHECK(grasp_collisions(w, p.actions[a].grasp, p.actions[a].instance).count == 0);
      }
    }
  }
}
