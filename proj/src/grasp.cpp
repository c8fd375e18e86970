#include "desksplat/grasp.hpp"

#include "desksplat/fusion.hpp"

#include <map>
#include <numbers>
#include <random>

namespace desksplat {

std::vector<ConvexHull> GripperGeometry::parts() const {
  const double inner = 0.5 * max_opening, outer = inner + finger_thickness, hw = 0.5 * finger_width;
  const double base = tip_extension - finger_length;
  return {box_hull({inner, -hw, base}, {outer, hw, tip_extension}), box_hull({-outer, -hw, base}, {-inner, hw, tip_extension}),
          box_hull({-outer, -hw, base - palm_thickness}, {outer, hw, base})};
}

Trajectory approach_trajectory(const Eigen::Isometry3d& grasp, double distance, double spacing) {
  if (!(spacing > 0) || distance < 0) throw std::invalid_argument("approach needs positive spacing and nonnegative distance");
  const int steps = std::max(1, static_cast<int>(std::ceil(distance / spacing - 1e-12)));
  const Eigen::Vector3d axis = grasp.linear().col(2);
  Trajectory t;
  for (int s = 0; s <= steps; ++s) {
    Eigen::Isometry3d w = grasp;
    w.translation() -= distance * double(steps - s) / steps * axis;
    t.waypoints.push_back(w);
  }
  return t;
}

Trajectory retrieval_of(const Trajectory& approach) {
  Trajectory t{std::vector<Eigen::Isometry3d>(approach.waypoints.rbegin(), approach.waypoints.rend()), TrajectoryPhase::Retrieval};
  return t;
}

std::vector<std::array<Eigen::Vector3d, 3>> corner_normals(const TriangleMesh& mesh, double crease_deg) {
  const size_t nf = mesh.faces.size();
  std::vector<Eigen::Vector3d> fn(nf);
  std::vector<double> area(nf);
  std::vector<std::vector<int>> around(mesh.vertices.size());
  for (size_t f = 0; f < nf; ++f) {
    const auto& t = mesh.faces[f];
    const Eigen::Vector3d c = (mesh.vertices[static_cast<size_t>(t[1])] - mesh.vertices[static_cast<size_t>(t[0])])
                                  .cross(mesh.vertices[static_cast<size_t>(t[2])] - mesh.vertices[static_cast<size_t>(t[0])]);
    area[f] = c.norm();
    fn[f] = area[f] > 0 ? Eigen::Vector3d(c / area[f]) : Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k) around[static_cast<size_t>(t[k])].push_back(static_cast<int>(f));
  }
  const double cos_crease = std::cos(crease_deg * std::numbers::pi / 180.0);
  std::vector<std::array<Eigen::Vector3d, 3>> out(nf);
  for (size_t f = 0; f < nf; ++f)
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d n = Eigen::Vector3d::Zero();
      for (int g : around[static_cast<size_t>(mesh.faces[f][k])])
        if (fn[static_cast<size_t>(g)].dot(fn[f]) >= cos_crease) n += area[static_cast<size_t>(g)] * fn[static_cast<size_t>(g)];
      out[f][static_cast<size_t>(k)] = n.norm() > 0 ? Eigen::Vector3d(n.normalized()) : fn[f];
    }
  return out;
}

namespace {

Eigen::Vector3d blend(const std::array<Eigen::Vector3d, 3>& n, const Eigen::Vector3d& bary) {
  const Eigen::Vector3d v = bary[0] * n[0] + bary[1] * n[1] + bary[2] * n[2];
  return v.normalized();
}

}  // namespace

std::vector<GraspCandidate> antipodal_grasps(const TriangleMesh& mesh, int instance, const AntipodalParams& params) {
  std::vector<GraspCandidate> out;
  if (mesh.empty()) return out;
  const auto normals = corner_normals(mesh, params.crease_deg);
  std::vector<double> cumulative;
  double total = 0;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    total += 0.5 * (mesh.vertices[static_cast<size_t>(mesh.faces[f][1])] - mesh.vertices[static_cast<size_t>(mesh.faces[f][0])])
                       .cross(mesh.vertices[static_cast<size_t>(mesh.faces[f][2])] - mesh.vertices[static_cast<size_t>(mesh.faces[f][0])])
                       .norm();
    cumulative.push_back(total);
  }
  if (!(total > 0)) return out;
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double max_open = params.gripper.max_opening, full_fit = (1.0 - params.width_margin) * max_open;

  for (int s = 0; s < params.samples; ++s) {
    const size_t f = std::min(mesh.faces.size() - 1,
                              static_cast<size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), u(rng) * total) - cumulative.begin()));
    double b1 = u(rng), b2 = u(rng);
    if (b1 + b2 > 1) b1 = 1 - b1, b2 = 1 - b2;
    const Eigen::Vector3d bary(1 - b1 - b2, b1, b2);
    const auto& t = mesh.faces[f];
    const Eigen::Vector3d p = bary[0] * mesh.vertices[static_cast<size_t>(t[0])] + bary[1] * mesh.vertices[static_cast<size_t>(t[1])] +
                              bary[2] * mesh.vertices[static_cast<size_t>(t[2])];
    const Eigen::Vector3d np = blend(normals[f], bary);
    const auto hit = intersect_ray(mesh, p, -np, 1e-7);
    if (!hit) continue;
    const double width = hit->distance;
    if (width < params.min_width || width >= max_open) continue;
    const Eigen::Vector3d nq = blend(normals[hit->face], hit->barycentric);
    const double anti = std::max(0.0, -np.dot(nq));
    const double fit = width <= full_fit ? 1.0 : (max_open - width) / (max_open - full_fit);
    const double score = std::clamp(anti * fit, 0.0, 1.0);

    const Eigen::Vector3d x = -np, center = p + 0.5 * width * x;
    const Eigen::Vector3d ref = std::abs(x.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
    const Eigen::Vector3d u0 = (ref - ref.dot(x) * x).normalized(), u1 = x.cross(u0);
    std::vector<Eigen::Vector3d> approaches;
    if (params.approach_hint) {
      const Eigen::Vector3d h = *params.approach_hint - params.approach_hint->dot(x) * x;
      if (h.norm() > 1e-6) approaches.push_back(h.normalized());
    }
    for (int a = 0; a < params.approach_angles; ++a) {
      const double th = 2 * std::numbers::pi * a / params.approach_angles;
      approaches.push_back(std::cos(th) * u0 + std::sin(th) * u1);
    }
    for (const auto& z : approaches) {
      GraspCandidate g;
      g.pose.linear().col(0) = x;
      g.pose.linear().col(1) = z.cross(x);
      g.pose.linear().col(2) = z;
      g.pose.translation() = center;
      g.score = score;
      g.instance = instance;
      g.width = width;
      out.push_back(g);
    }
  }
  return out;
}

GraspSampler antipodal_sampler(const AntipodalParams& params) {
  return [params](const TriangleMesh& mesh, int instance) { return antipodal_grasps(mesh, instance, params); };
}

std::vector<GraspCandidate> sample_grasps(const TriangleMesh& mesh, const GraspSampler& sampler, double score_threshold, int instance) {
  if (mesh.empty()) throw std::invalid_argument("grasp sampling needs a nonempty mesh");
  std::vector<GraspCandidate> out;
  for (auto& g : sampler(mesh, instance))
    if (g.score >= score_threshold) out.push_back(std::move(g));
  return out;
}

AdaptedDepth adapt_depth_for_grasp(const TriangleMesh& mesh, const CameraD& camera, double d_far) {
  if (mesh.vertices.empty()) throw std::invalid_argument("depth adaptation needs a nonempty mesh");
  double zmax = -std::numeric_limits<double>::infinity(), zmin = std::numeric_limits<double>::infinity();
  for (const auto& v : mesh.vertices) {
    const double z = camera.to_camera(v).z();
    zmax = std::max(zmax, z);
    zmin = std::min(zmin, z);
  }
  AdaptedDepth out{{}, camera};
  // x_c = R x + t, so shifting t along the optical axis shifts every depth by the same amount.
  out.camera.translation.z() += d_far - zmax;
  if (zmin + d_far - zmax <= 0) throw std::domain_error("mesh extends behind the repositioned camera");
  out.depth = raycast_depth(mesh, out.camera, d_far);
  for (auto& d : out.depth.data) d = std::min(d, d_far);
  return out;
}

}  // namespace desksplat
