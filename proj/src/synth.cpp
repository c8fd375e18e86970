#include "desksplat/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace desksplat {

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Sphere: return "sphere";
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Cylinder: return "cylinder";
  }
  return "unknown";
}

PrimitiveKind primitive_kind_from_string(const std::string& name) {
  if (name == "sphere") return PrimitiveKind::Sphere;
  if (name == "box") return PrimitiveKind::Box;
  if (name == "cylinder") return PrimitiveKind::Cylinder;
  throw std::invalid_argument("unknown primitive kind: " + name);
}

double Primitive::bounding_radius() const {
  switch (kind) {
    case PrimitiveKind::Sphere: return size.x();
    case PrimitiveKind::Box: return size.norm();
    case PrimitiveKind::Cylinder: return std::hypot(size.x(), size.y());
  }
  return 0.0;
}

double Primitive::footprint_radius() const {
  switch (kind) {
    case PrimitiveKind::Sphere:
    case PrimitiveKind::Cylinder: return size.x();
    case PrimitiveKind::Box: return std::hypot(size.x(), size.y());
  }
  return 0.0;
}

TriangleMesh Primitive::mesh() const {
  TriangleMesh m;
  switch (kind) {
    case PrimitiveKind::Sphere: m = make_uv_sphere(size.x()); break;
    case PrimitiveKind::Box: m = make_box_mesh(size); break;
    case PrimitiveKind::Cylinder: m = make_cylinder_mesh(size.x(), size.y()); break;
  }
  return m.transformed(pose);
}

double Primitive::surface_distance(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = pose.inverse() * p;
  switch (kind) {
    case PrimitiveKind::Sphere: return std::abs(q.norm() - size.x());
    case PrimitiveKind::Box: {
      const Eigen::Vector3d d = q.cwiseAbs() - size;
      const double outside = d.cwiseMax(0.0).norm();
      const double inside = std::min(d.maxCoeff(), 0.0);
      return std::abs(outside + inside);
    }
    case PrimitiveKind::Cylinder: {
      const double dr = std::hypot(q.x(), q.y()) - size.x();
      const double dz = std::abs(q.z()) - size.y();
      const double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
      return std::abs(outside + std::min(std::max(dr, dz), 0.0));
    }
  }
  return 0.0;
}

bool Primitive::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = pose.inverse() * p;
  switch (kind) {
    case PrimitiveKind::Sphere: return q.norm() <= size.x();
    case PrimitiveKind::Box: return (q.cwiseAbs().array() <= size.array()).all();
    case PrimitiveKind::Cylinder: return std::hypot(q.x(), q.y()) <= size.x() && std::abs(q.z()) <= size.y();
  }
  return false;
}

std::vector<std::vector<int>> GroundTruthScene::instance_sets() const {
  std::vector<std::vector<int>> sets(primitives.size());
  for (size_t i = 0; i < instance_of.size(); ++i) sets[static_cast<size_t>(instance_of[i])].push_back(static_cast<int>(i));
  return sets;
}

std::vector<std::string> GroundTruthScene::labels() const {
  std::vector<std::string> out;
  for (const auto& p : primitives) out.push_back(p.label);
  return out;
}

Eigen::VectorXd instance_feature(int k, int feature_dim) {
  if (k < 0 || k >= feature_dim) throw std::out_of_range("instance index exceeds feature dimension");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_dim);
  f[k] = 1.0;
  return f;
}

SynthSpec default_synth_spec(int count) {
  static const Eigen::Vector3d palette[] = {{0.85, 0.25, 0.2}, {0.2, 0.6, 0.85}, {0.3, 0.8, 0.3}, {0.9, 0.8, 0.2},
                                            {0.7, 0.3, 0.8},   {0.9, 0.5, 0.1},  {0.4, 0.4, 0.9}, {0.6, 0.6, 0.6}};
  SynthSpec spec;
  for (int i = 0; i < count; ++i) {
    PrimitiveSpec p;
    p.color = palette[i % 8];
    switch (i % 3) {
      case 0:
        p.kind = PrimitiveKind::Sphere;
        p.size = Eigen::Vector3d(0.045, 0.0, 0.0);
        break;
      case 1:
        p.kind = PrimitiveKind::Box;
        p.size = Eigen::Vector3d(0.04, 0.03, 0.035);
        break;
      default:
        p.kind = PrimitiveKind::Cylinder;
        p.size = Eigen::Vector3d(0.035, 0.045, 0.0);
        break;
    }
    p.label = to_string(p.kind) + " " + std::to_string(i);
    spec.objects.push_back(p);
  }
  return spec;
}

namespace {

double half_height(const PrimitiveSpec& p) {
  switch (p.kind) {
    case PrimitiveKind::Sphere: return p.size.x();
    case PrimitiveKind::Box: return p.size.z();
    case PrimitiveKind::Cylinder: return p.size.y();
  }
  return 0.0;
}

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

/// Area-uniform point on the primitive surface in its local frame.
Eigen::Vector3d sample_surface(const Primitive& prim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d& s = prim.size;
  switch (prim.kind) {
    case PrimitiveKind::Sphere: return s.x() * random_unit(rng);
    case PrimitiveKind::Box: {
      const double ax = s.y() * s.z(), ay = s.x() * s.z(), az = s.x() * s.y();
      const double pick = u(rng) * (ax + ay + az);
      const int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
      Eigen::Vector3d p(s.x() * (2 * u(rng) - 1), s.y() * (2 * u(rng) - 1), s.z() * (2 * u(rng) - 1));
      p[axis] = u(rng) < 0.5 ? -s[axis] : s[axis];
      return p;
    }
    case PrimitiveKind::Cylinder: {
      const double r = s.x(), h = s.y();
      const double side = 2 * std::numbers::pi * r * 2 * h, cap = std::numbers::pi * r * r;
      const double theta = 2 * std::numbers::pi * u(rng);
      const double pick = u(rng) * (side + 2 * cap);
      if (pick < side) return {r * std::cos(theta), r * std::sin(theta), h * (2 * u(rng) - 1)};
      const double rr = r * std::sqrt(u(rng));
      return {rr * std::cos(theta), rr * std::sin(theta), pick < side + cap ? h : -h};
    }
  }
  return Eigen::Vector3d::Zero();
}

}  // namespace

GroundTruthScene synth_scene(const SynthSpec& spec, uint64_t seed) {
  if (spec.objects.empty() || spec.objects.size() > 8) throw std::invalid_argument("synth_scene needs 1 to 8 objects");
  if (static_cast<int>(spec.objects.size()) > spec.feature_dim)
    throw std::invalid_argument("more objects than feature dimensions");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Aabb& ws = spec.workspace;

  GroundTruthScene gt;
  gt.scene.feature_dim = spec.feature_dim;
  gt.scene.workspace = ws;

  for (size_t k = 0; k < spec.objects.size(); ++k) {
    const PrimitiveSpec& ps = spec.objects[k];
    Primitive prim;
    prim.kind = ps.kind;
    prim.size = ps.size;
    prim.color = ps.color;
    prim.label = ps.label.empty() ? to_string(ps.kind) + " " + std::to_string(k) : ps.label;
    const double fr = prim.footprint_radius();
    const double hh = half_height(ps);
    if (2 * hh > ws.extent().z()) throw PlacementError("object taller than workspace: " + prim.label);

    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      const double lo_x = ws.min.x() + fr, hi_x = ws.max.x() - fr;
      const double lo_y = ws.min.y() + fr, hi_y = ws.max.y() - fr;
      const double yaw = 2 * std::numbers::pi * u(rng);
      const double x = lo_x + (hi_x - lo_x) * u(rng), y = lo_y + (hi_y - lo_y) * u(rng);
      if (hi_x < lo_x || hi_y < lo_y) continue;
      const Eigen::Vector2d c(x, y);
      if (spec.cluster_radius > 0.0 && (c - ws.center().head<2>()).norm() > spec.cluster_radius) continue;
      bool clear = true;
      for (const auto& other : gt.primitives)
        if ((c - other.pose.translation().head<2>()).norm() < fr + other.footprint_radius() + spec.min_gap) clear = false;
      if (!clear) continue;
      prim.pose = Eigen::Isometry3d::Identity();
      prim.pose.linear() = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
      prim.pose.translation() = Eigen::Vector3d(x, y, ws.min.z() + hh);
      placed = true;
    }
    if (!placed) throw PlacementError("could not place " + prim.label + " after " + std::to_string(spec.max_attempts) + " attempts");

    const double stddev = spec.stddev_fraction * prim.bounding_radius();
    const Eigen::VectorXd feature = instance_feature(static_cast<int>(k), spec.feature_dim);
    for (int i = 0; i < spec.gaussians_per_object; ++i) {
      Gaussian<double> g;
      g.mean = prim.pose * sample_surface(prim, rng);
      g.covariance = isotropic_covariance(stddev);
      g.opacity = spec.opacity;
      g.color = prim.color;
      g.feature = feature;
      gt.scene.gaussians.push_back(g);
      gt.instance_of.push_back(static_cast<int>(k));
    }
    gt.meshes.push_back(prim.mesh());
    gt.primitives.push_back(prim);
  }
  return gt;
}

}  // namespace desksplat
