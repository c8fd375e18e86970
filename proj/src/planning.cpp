#include "desksplat/planning.hpp"

#include <json.hpp>

#include <algorithm>
#include <numbers>
#include <random>

namespace desksplat {

bool Feasibility::operator()(const Eigen::Isometry3d& grasp) const {
  if (!workspace.contains(grasp.translation())) return false;
  const double c = grasp.linear().col(2).normalized().dot(approach_axis.normalized());
  return c >= std::cos(cone_deg * std::numbers::pi / 180.0) - 1e-12;
}

std::string to_string(const EntityId& id) { return (id.kind == EntityKind::Shelf ? "shelf:" : "object:") + std::to_string(id.index); }

int WorldModel::entity_count() const {
  int n = static_cast<int>(shelf.size());
  for (const auto& o : objects) n += o.has_value();
  return n;
}

ConvexHull attach(const ConvexHull& hull, const Eigen::Isometry3d& grasp) { return hull.transformed(grasp.inverse()); }

CollisionReport collision_count(const WorldModel& world, const Trajectory& traj, const ConvexHull* attached, std::span<const int> exclude,
                                double max_spacing) {
  for (size_t w = 1; w < traj.waypoints.size(); ++w)
    if ((traj.waypoints[w].translation() - traj.waypoints[w - 1].translation()).norm() > max_spacing + 1e-12)
      throw std::invalid_argument("trajectory waypoints are further apart than " + std::to_string(max_spacing) + " m");

  std::vector<EntityId> ids;
  std::vector<const ConvexHull*> hulls;
  for (size_t i = 0; i < world.shelf.size(); ++i) {
    ids.push_back({EntityKind::Shelf, static_cast<int>(i)});
    hulls.push_back(&world.shelf[i]);
  }
  for (size_t i = 0; i < world.objects.size(); ++i) {
    if (!world.objects[i] || std::find(exclude.begin(), exclude.end(), static_cast<int>(i)) != exclude.end()) continue;
    ids.push_back({EntityKind::Object, static_cast<int>(i)});
    hulls.push_back(&*world.objects[i]);
  }
  const int nw = static_cast<int>(traj.waypoints.size()), ne = static_cast<int>(ids.size());
  std::vector<char> hit(static_cast<size_t>(nw) * static_cast<size_t>(ne), 0);
#pragma omp parallel for schedule(dynamic)
  for (int w = 0; w < nw; ++w) {
    std::vector<ConvexHull> moving;
    for (const auto& part : world.gripper) moving.push_back(part.transformed(traj.waypoints[static_cast<size_t>(w)]));
    if (attached) moving.push_back(attached->transformed(traj.waypoints[static_cast<size_t>(w)]));
    for (int e = 0; e < ne; ++e)
      for (const auto& m : moving)
        if (intersects(m, *hulls[static_cast<size_t>(e)])) {
          hit[static_cast<size_t>(w) * static_cast<size_t>(ne) + static_cast<size_t>(e)] = 1;
          break;
        }
  }
  CollisionReport out;
  for (int e = 0; e < ne; ++e)
    for (int w = 0; w < nw; ++w)
      if (hit[static_cast<size_t>(w) * static_cast<size_t>(ne) + static_cast<size_t>(e)]) {
        out.ids.push_back(ids[static_cast<size_t>(e)]);
        break;
      }
  std::sort(out.ids.begin(), out.ids.end());
  out.count = static_cast<int>(out.ids.size());
  return out;
}

CollisionReport grasp_collisions(const WorldModel& world, const GraspCandidate& grasp, int target, const PlannerParams& params) {
  if (!world.present(target)) throw std::invalid_argument("instance " + std::to_string(target) + " is not in the world");
  const auto approach = approach_trajectory(grasp.pose, params.approach_distance, params.waypoint_spacing);
  auto report = collision_count(world, approach, nullptr, {}, params.waypoint_spacing);
  const ConvexHull held = attach(*world.objects[static_cast<size_t>(target)], grasp.pose);
  const int excluded[] = {target};
  const auto back = collision_count(world, retrieval_of(approach), &held, excluded, params.waypoint_spacing);
  report.ids.insert(report.ids.end(), back.ids.begin(), back.ids.end());
  std::sort(report.ids.begin(), report.ids.end());
  report.ids.erase(std::unique(report.ids.begin(), report.ids.end()), report.ids.end());
  report.count = static_cast<int>(report.ids.size());
  return report;
}

std::vector<GraspCandidate> feasible_grasps(const WorldModel& world, const std::vector<GraspCandidate>& grasps, const PlannerParams& params) {
  std::vector<GraspCandidate> out;
  for (const auto& g : grasps)
    if (world.feasibility(g.pose)) out.push_back(g);
  std::stable_sort(out.begin(), out.end(), [](const GraspCandidate& a, const GraspCandidate& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > params.max_grasps) out.resize(static_cast<size_t>(params.max_grasps));
  return out;
}

std::vector<int> free_grasps(const WorldModel& world, const std::vector<GraspCandidate>& grasps, int target, const PlannerParams& params) {
  std::vector<int> out;
  for (size_t i = 0; i < grasps.size(); ++i)
    if (world.feasibility(grasps[i].pose) && grasp_collisions(world, grasps[i], target, params).count == 0) out.push_back(static_cast<int>(i));
  return out;
}

namespace {

/// Best feasible grasp by collision count, first one wins ties; -1 when none is feasible.
std::pair<int, int> best_grasp(const WorldModel& world, const std::vector<GraspCandidate>& grasps, int target, const PlannerParams& params) {
  int best = -1, best_count = world.entity_count() + 1;
  for (size_t i = 0; i < grasps.size() && best_count > 0; ++i) {
    if (!world.feasibility(grasps[i].pose)) continue;
    const int c = grasp_collisions(world, grasps[i], target, params).count;
    if (c < best_count) best_count = c, best = static_cast<int>(i);
  }
  return {best, -best_count};
}

int first_free(const WorldModel& world, const std::vector<GraspCandidate>& grasps, int target, const PlannerParams& params) {
  for (size_t i = 0; i < grasps.size(); ++i)
    if (world.feasibility(grasps[i].pose) && grasp_collisions(world, grasps[i], target, params).count == 0) return static_cast<int>(i);
  return -1;
}

struct DeclutterSearch {
  const std::vector<std::vector<GraspCandidate>>& cands;
  const PlannerParams& params;
  std::mt19937_64 rng;
  DeclutterPlan plan;
  int deepest = -1;

  bool run(const WorldModel& world, std::vector<int> remaining, int level) {
    if (remaining.empty()) return true;
    std::vector<std::pair<int, int>> pickable;
    for (int i : remaining) {
      const int g = first_free(world, cands[static_cast<size_t>(i)], i, params);
      if (g >= 0) pickable.emplace_back(i, g);
    }
    std::shuffle(pickable.begin(), pickable.end(), rng);
    if (pickable.empty()) {
      if (level > deepest) {
        deepest = level;
        plan.stuck = remaining;
      }
      return false;
    }
    for (size_t k = 0; k < pickable.size(); ++k) {
      if (k > 0) {
        if (deepest - level > params.backtrack_depth) return false;
        ++plan.backtracks;
      }
      const auto [inst, g] = pickable[k];
      plan.steps.push_back({inst, cands[static_cast<size_t>(inst)][static_cast<size_t>(g)]});
      WorldModel next = world;
      next.remove(inst);
      std::vector<int> rest;
      for (int r : remaining)
        if (r != inst) rest.push_back(r);
      if (run(next, rest, level + 1)) return true;
      plan.steps.pop_back();
    }
    return false;
  }
};

}  // namespace

int graspability(const WorldModel& world, const std::vector<GraspCandidate>& grasps, int target, const PlannerParams& params) {
  return best_grasp(world, grasps, target, params).second;
}

DeclutterPlan plan_declutter(const WorldModel& world, const std::vector<std::vector<GraspCandidate>>& grasps, const PlannerParams& params) {
  if (grasps.size() != world.objects.size()) throw std::invalid_argument("one grasp list per instance is required");
  std::vector<std::vector<GraspCandidate>> cands(grasps.size());
  std::vector<int> remaining;
  for (size_t i = 0; i < world.objects.size(); ++i) {
    if (!world.objects[i]) continue;
    if (grasps[i].empty()) throw std::invalid_argument("instance " + std::to_string(i) + " has no grasp candidates");
    cands[i] = feasible_grasps(world, grasps[i], params);
    remaining.push_back(static_cast<int>(i));
  }
  DeclutterSearch search{cands, params, std::mt19937_64(params.seed), {}, -1};
  search.plan.success = search.run(world, remaining, 0);
  if (search.plan.success) search.plan.stuck.clear();
  return search.plan;
}

namespace {

Eigen::Isometry3d placement_motion(const ConvexHull& hull, const Eigen::Vector3d& spot) {
  Eigen::Isometry3d m = Eigen::Isometry3d::Identity();
  const Eigen::Vector3d base(hull.bounds.center().x(), hull.bounds.center().y(), hull.bounds.min.z());
  m.translation() = spot - base;
  return m;
}

bool placement_free(const WorldModel& world, const ConvexHull& placed, int moving) {
  for (const auto& s : world.shelf)
    if (intersects(placed, s)) return false;
  for (size_t j = 0; j < world.objects.size(); ++j)
    if (static_cast<int>(j) != moving && world.objects[j] && intersects(placed, *world.objects[j])) return false;
  return true;
}

std::vector<GraspCandidate> moved(const std::vector<GraspCandidate>& grasps, const Eigen::Isometry3d& motion) {
  auto out = grasps;
  for (auto& g : out) g.pose = motion * g.pose;
  return out;
}

}  // namespace

RetrievalPlan plan_retrieval(const WorldModel& world, const std::vector<std::vector<GraspCandidate>>& grasps, int target, int budget,
                             const std::vector<Eigen::Vector3d>& placements, const PlannerParams& params) {
  if (grasps.size() != world.objects.size()) throw std::invalid_argument("one grasp list per instance is required");
  if (!world.present(target)) throw std::invalid_argument("target instance is not in the world");
  if (budget < 0) throw std::invalid_argument("action budget must be nonnegative");
  RetrievalPlan plan;
  plan.target = target;
  WorldModel w = world;
  auto g = grasps;
  const auto target_grasps = feasible_grasps(w, g[static_cast<size_t>(target)], params);
  int current = graspability(w, target_grasps, target, params);
  plan.initial_graspability = current;
  std::mt19937_64 rng(params.seed);

  struct Candidate {
    int instance;
    GraspCandidate grasp;
    Eigen::Isometry3d motion;
  };
  while (current < 0 && static_cast<int>(plan.actions.size()) < budget) {
    std::vector<Candidate> actions;
    for (size_t i = 0; i < w.objects.size(); ++i) {
      if (static_cast<int>(i) == target || !w.objects[i]) continue;
      const auto cands = feasible_grasps(w, g[i], params);
      const int pick = first_free(w, cands, static_cast<int>(i), params);
      if (pick < 0) continue;
      for (const auto& spot : placements) {
        const auto motion = placement_motion(*w.objects[i], spot);
        if (placement_free(w, w.objects[i]->transformed(motion), static_cast<int>(i)))
          actions.push_back({static_cast<int>(i), cands[static_cast<size_t>(pick)], motion});
      }
    }
    if (static_cast<int>(actions.size()) > params.retrieval_samples) {
      std::shuffle(actions.begin(), actions.end(), rng);
      actions.resize(static_cast<size_t>(params.retrieval_samples));
    }
    int best = -1, best_value = std::numeric_limits<int>::min();
    for (size_t a = 0; a < actions.size(); ++a) {
      WorldModel next = w;
      auto& obj = next.objects[static_cast<size_t>(actions[a].instance)];
      obj = obj->transformed(actions[a].motion);
      const int value = graspability(next, target_grasps, target, params);
      if (value > best_value) best_value = value, best = static_cast<int>(a);
    }
    if (best < 0 || best_value < current) break;
    const auto& chosen = actions[static_cast<size_t>(best)];
    auto& obj = w.objects[static_cast<size_t>(chosen.instance)];
    obj = obj->transformed(chosen.motion);
    g[static_cast<size_t>(chosen.instance)] = moved(g[static_cast<size_t>(chosen.instance)], chosen.motion);
    plan.actions.push_back({chosen.instance, chosen.grasp, chosen.motion, best_value});
    current = best_value;
  }
  plan.graspability = current;
  plan.exhausted = current < 0;
  const int fg = best_grasp(w, target_grasps, target, params).first;
  if (fg >= 0) plan.final_grasp = target_grasps[static_cast<size_t>(fg)];
  return plan;
}

WorldModel replay(const WorldModel& world, const RetrievalPlan& plan, int upto) {
  WorldModel w = world;
  const size_t n = upto < 0 ? plan.actions.size() : std::min(plan.actions.size(), static_cast<size_t>(upto));
  for (size_t a = 0; a < n; ++a) {
    auto& obj = w.objects.at(static_cast<size_t>(plan.actions[a].instance));
    obj = obj->transformed(plan.actions[a].place);
  }
  return w;
}

std::vector<std::vector<GraspCandidate>> replay_grasps(const std::vector<std::vector<GraspCandidate>>& grasps, const RetrievalPlan& plan,
                                                       int upto) {
  auto g = grasps;
  const size_t n = upto < 0 ? plan.actions.size() : std::min(plan.actions.size(), static_cast<size_t>(upto));
  for (size_t a = 0; a < n; ++a) {
    auto& list = g.at(static_cast<size_t>(plan.actions[a].instance));
    list = moved(list, plan.actions[a].place);
  }
  return g;
}

namespace {

nlohmann::json pose_json(const Eigen::Isometry3d& pose) {
  nlohmann::json m = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(pose.matrix()(r, c));
  return m;
}

}  // namespace

std::string to_json_lines(const DeclutterPlan& plan) {
  std::string out;
  for (size_t s = 0; s < plan.steps.size(); ++s) {
    const auto& st = plan.steps[s];
    nlohmann::json j{{"type", "pick"}, {"step", s}, {"instance", st.instance}, {"score", st.grasp.score}, {"grasp", pose_json(st.grasp.pose)}};
    out += j.dump() + "\n";
  }
  out += nlohmann::json{{"type", "summary"}, {"success", plan.success}, {"stuck", plan.stuck}, {"backtracks", plan.backtracks}}.dump() + "\n";
  return out;
}

std::string to_json_lines(const RetrievalPlan& plan) {
  std::string out;
  for (size_t s = 0; s < plan.actions.size(); ++s) {
    const auto& a = plan.actions[s];
    nlohmann::json j{{"type", "pick_place"},           {"step", s},
                     {"instance", a.instance},         {"grasp", pose_json(a.grasp.pose)},
                     {"place", pose_json(a.place)},    {"graspability_after", a.graspability_after}};
    out += j.dump() + "\n";
  }
  nlohmann::json last{{"type", "retrieve"},
                      {"instance", plan.target},
                      {"initial_graspability", plan.initial_graspability},
                      {"graspability", plan.graspability},
                      {"exhausted", plan.exhausted}};
  if (plan.final_grasp.instance >= 0) last["grasp"] = pose_json(plan.final_grasp.pose);
  out += last.dump() + "\n";
  return out;
}

std::vector<ConvexHull> shelf_regions(const ShelfSpec& spec) {
  const Eigen::Vector3d& a = spec.interior_min;
  const Eigen::Vector3d& b = spec.interior_max;
  const double t = spec.board;
  return {box_hull({a.x() - t, a.y(), a.z() - t}, {b.x() + t, b.y() + t, a.z()}),
          box_hull({a.x() - t, a.y(), b.z()}, {b.x() + t, b.y() + t, b.z() + t}),
          box_hull({a.x() - t, a.y(), a.z()}, {a.x(), b.y() + t, b.z()}),
          box_hull({b.x(), a.y(), a.z()}, {b.x() + t, b.y() + t, b.z()}),
          box_hull({a.x(), b.y(), a.z()}, {b.x(), b.y() + t, b.z()})};
}

TriangleMesh shelf_mesh(const ShelfSpec& spec) {
  TriangleMesh m;
  for (const auto& r : shelf_regions(spec)) {
    auto box = make_box_mesh(0.5 * r.bounds.extent());
    Eigen::Isometry3d at = Eigen::Isometry3d::Identity();
    at.translation() = r.bounds.center();
    m.append(box.transformed(at));
  }
  return m;
}

std::vector<Eigen::Vector3d> side_placements(const ShelfSpec& spec, int nx, int ny, double step) {
  std::vector<Eigen::Vector3d> out;
  const Eigen::Vector3d origin(spec.interior_max.x() + spec.board + 0.15, spec.interior_min.y() - 0.3, spec.interior_min.z() + 0.002);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) out.push_back(origin + Eigen::Vector3d(i * step, j * step, 0));
  return out;
}

ShelfScene shelf_scene_from(std::vector<Primitive> objects, const ShelfSceneSpec& spec) {
  ShelfScene scene;
  scene.world.shelf = shelf_regions(spec.shelf);
  scene.placements = side_placements(spec.shelf);
  for (size_t k = 0; k < objects.size(); ++k) {
    const TriangleMesh mesh = objects[k].mesh();
    scene.world.objects.emplace_back(convex_hull(mesh));
    AntipodalParams sampler = spec.sampler;
    sampler.seed = spec.sampler.seed + k;
    if (!sampler.approach_hint) sampler.approach_hint = scene.world.feasibility.approach_axis;
    scene.grasps.push_back(sample_grasps(mesh, antipodal_sampler(sampler), spec.score_threshold, static_cast<int>(k)));
    scene.meshes.push_back(mesh);
  }
  scene.objects = std::move(objects);
  return scene;
}

ShelfScene make_shelf_scene(uint64_t seed, const ShelfSceneSpec& spec) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const int count = spec.min_objects + static_cast<int>(rng() % static_cast<uint64_t>(spec.max_objects - spec.min_objects + 1));
  const auto& a = spec.shelf.interior_min;
  const auto& b = spec.shelf.interior_max;
  std::vector<Primitive> objects;
  for (int k = 0; k < count; ++k) {
    Primitive p;
    p.kind = u(rng) < 0.5 ? PrimitiveKind::Box : PrimitiveKind::Cylinder;
    double hh;
    if (p.kind == PrimitiveKind::Box) {
      p.size = Eigen::Vector3d(range(0.015, 0.03), range(0.015, 0.03), range(0.03, 0.06));
      hh = p.size.z();
    } else {
      p.size = Eigen::Vector3d(range(0.015, 0.03), range(0.03, 0.06), 0.0);
      hh = p.size.y();
    }
    p.label = (p.kind == PrimitiveKind::Box ? "box_" : "cylinder_") + std::to_string(k);
    p.color = Eigen::Vector3d(range(0.2, 0.9), range(0.2, 0.9), range(0.2, 0.9));
    const double yaw = p.kind == PrimitiveKind::Box ? range(-0.35, 0.35) : 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const Eigen::Vector2d c(range(a.x() + 0.08, b.x() - 0.08), range(a.y() + 0.05, b.y() - 0.05));
      bool clear = true;
      for (const auto& o : objects)
        clear &= (c - o.pose.translation().head<2>()).norm() >= p.footprint_radius() + o.footprint_radius() + spec.min_gap;
      if (!clear) continue;
      p.pose = Eigen::Isometry3d::Identity();
      p.pose.linear() = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
      p.pose.translation() = Eigen::Vector3d(c.x(), c.y(), a.z() + spec.lift + hh);
      placed = true;
    }
    if (placed) objects.push_back(p);
  }
  return shelf_scene_from(std::move(objects), spec);
}

ShelfScene make_blocking_scene(const ShelfSceneSpec& spec) {
  const auto& a = spec.shelf.interior_min;
  Primitive front, back;
  front.kind = back.kind = PrimitiveKind::Box;
  front.size = Eigen::Vector3d(0.03, 0.02, 0.06);
  front.pose.translation() = Eigen::Vector3d(0.0, a.y() + 0.08, a.z() + spec.lift + 0.06);
  front.label = "blocker";
  front.color = Eigen::Vector3d(0.2, 0.4, 0.8);
  back.size = Eigen::Vector3d(0.02, 0.02, 0.03);
  back.pose.translation() = Eigen::Vector3d(0.0, a.y() + 0.22, a.z() + spec.lift + 0.03);
  back.label = "target";
  back.color = Eigen::Vector3d(0.8, 0.3, 0.2);
  return shelf_scene_from({front, back}, spec);
}

}  // namespace desksplat
