#include "desksplat/hull.hpp"

#include <array>
#include <map>
#include <numeric>

namespace desksplat {

Eigen::Vector3d ConvexHull::support(const Eigen::Vector3d& dir) const {
  size_t best = 0;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < vertices.size(); ++i) {
    const double d = vertices[i].dot(dir);
    if (d > best_dot) {
      best_dot = d;
      best = i;
    }
  }
  return vertices[best];
}

Eigen::Vector3d ConvexHull::centroid() const {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& v : vertices) c += v;
  return vertices.empty() ? c : Eigen::Vector3d(c / double(vertices.size()));
}

ConvexHull ConvexHull::transformed(const Eigen::Isometry3d& pose) const {
  ConvexHull out;
  out.faces = faces;
  out.vertices.reserve(vertices.size());
  for (const auto& v : vertices) {
    out.vertices.push_back(pose * v);
    out.bounds.expand(out.vertices.back());
  }
  return out;
}

bool ConvexHull::contains(const Eigen::Vector3d& p, double tol) const {
  for (const auto& f : faces) {
    const Eigen::Vector3d& a = vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d n = (vertices[static_cast<size_t>(f[1])] - a).cross(vertices[static_cast<size_t>(f[2])] - a).normalized();
    if (n.dot(p - a) > tol) return false;
  }
  return !faces.empty();
}

double ConvexHull::max_face_violation() const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& f : faces) {
    const Eigen::Vector3d& a = vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d n = (vertices[static_cast<size_t>(f[1])] - a).cross(vertices[static_cast<size_t>(f[2])] - a).normalized();
    for (const auto& v : vertices) worst = std::max(worst, n.dot(v - a));
  }
  return worst;
}

TriangleMesh ConvexHull::mesh() const {
  TriangleMesh m;
  m.vertices = vertices;
  m.faces = faces;
  return m;
}

namespace {

struct Face {
  std::array<int, 3> v;
  Eigen::Vector3d normal;
  double offset;
  bool alive = true;
};

Face make_face(const std::vector<Eigen::Vector3d>& pts, int a, int b, int c) {
  Face f{{a, b, c}, Eigen::Vector3d::Zero(), 0.0};
  f.normal = (pts[static_cast<size_t>(b)] - pts[static_cast<size_t>(a)]).cross(pts[static_cast<size_t>(c)] - pts[static_cast<size_t>(a)]).normalized();
  f.offset = f.normal.dot(pts[static_cast<size_t>(a)]);
  return f;
}

}  // namespace

ConvexHull convex_hull(std::span<const Eigen::Vector3d> points) {
  const std::vector<Eigen::Vector3d> pts(points.begin(), points.end());
  const int n = static_cast<int>(pts.size());
  if (n < 4) throw HullError("convex hull needs at least four points");
  Aabb box = Aabb::empty();
  for (const auto& p : pts) box.expand(p);
  const double scale = std::max(box.extent().maxCoeff(), 1e-300);
  const double eps = 1e-10 * scale;

  // Initial tetrahedron from extreme points.
  int i0 = 0, i1 = 0;
  for (int i = 1; i < n; ++i) {
    if (pts[static_cast<size_t>(i)].x() < pts[static_cast<size_t>(i0)].x()) i0 = i;
    if (pts[static_cast<size_t>(i)].x() > pts[static_cast<size_t>(i1)].x()) i1 = i;
  }
  if (i0 == i1) {
    double best = -1;
    for (int i = 0; i < n; ++i) {
      const double d = (pts[static_cast<size_t>(i)] - pts[static_cast<size_t>(i0)]).squaredNorm();
      if (d > best) best = d, i1 = i;
    }
  }
  const Eigen::Vector3d p0 = pts[static_cast<size_t>(i0)], axis = pts[static_cast<size_t>(i1)] - p0;
  if (axis.norm() <= eps) throw HullError("points are coincident");
  int i2 = -1;
  double best = eps;
  for (int i = 0; i < n; ++i) {
    const double d = axis.cross(pts[static_cast<size_t>(i)] - p0).norm() / axis.norm();
    if (d > best) best = d, i2 = i;
  }
  if (i2 < 0) throw HullError("points are collinear");
  const Eigen::Vector3d nrm = axis.cross(pts[static_cast<size_t>(i2)] - p0).normalized();
  int i3 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(nrm.dot(pts[static_cast<size_t>(i)] - p0));
    if (d > best) best = d, i3 = i;
  }
  if (i3 < 0) throw HullError("points are coplanar");

  std::vector<Face> faces;
  const Eigen::Vector3d inner = 0.25 * (pts[static_cast<size_t>(i0)] + pts[static_cast<size_t>(i1)] + pts[static_cast<size_t>(i2)] + pts[static_cast<size_t>(i3)]);
  for (const auto& t : std::array<std::array<int, 3>, 4>{{{i0, i1, i2}, {i0, i1, i3}, {i0, i2, i3}, {i1, i2, i3}}}) {
    Face f = make_face(pts, t[0], t[1], t[2]);
    if (f.normal.dot(inner) - f.offset > 0) f = make_face(pts, t[0], t[2], t[1]);
    faces.push_back(f);
  }

  // Farthest-first insertion keeps the intermediate hulls large.
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return (pts[static_cast<size_t>(a)] - inner).squaredNorm() > (pts[static_cast<size_t>(b)] - inner).squaredNorm();
  });
  std::vector<int> visible;
  std::map<std::pair<int, int>, int> edge_count;
  for (int p : order) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    const Eigen::Vector3d& x = pts[static_cast<size_t>(p)];
    visible.clear();
    for (size_t f = 0; f < faces.size(); ++f)
      if (faces[f].alive && faces[f].normal.dot(x) - faces[f].offset > eps) visible.push_back(static_cast<int>(f));
    if (visible.empty()) continue;
    // Horizon: directed edges of visible faces whose reverse is not also visible.
    edge_count.clear();
    for (int f : visible)
      for (int e = 0; e < 3; ++e) ++edge_count[{faces[static_cast<size_t>(f)].v[static_cast<size_t>(e)], faces[static_cast<size_t>(f)].v[static_cast<size_t>((e + 1) % 3)]}];
    for (int f : visible) faces[static_cast<size_t>(f)].alive = false;
    for (const auto& [edge, count] : edge_count)
      if (!edge_count.count({edge.second, edge.first})) faces.push_back(make_face(pts, edge.first, edge.second, p));
    if (faces.size() > 8 * static_cast<size_t>(n) + 64) {
      std::erase_if(faces, [](const Face& f) { return !f.alive; });
    }
  }

  ConvexHull out;
  std::vector<int> remap(static_cast<size_t>(n), -1);
  for (const auto& f : faces) {
    if (!f.alive) continue;
    Eigen::Vector3i tri;
    for (int e = 0; e < 3; ++e) {
      int& r = remap[static_cast<size_t>(f.v[static_cast<size_t>(e)])];
      if (r < 0) {
        r = static_cast<int>(out.vertices.size());
        out.vertices.push_back(pts[static_cast<size_t>(f.v[static_cast<size_t>(e)])]);
        out.bounds.expand(out.vertices.back());
      }
      tri[e] = r;
    }
    out.faces.push_back(tri);
  }
  return out;
}

ConvexHull box_hull(const Eigen::Vector3d& min, const Eigen::Vector3d& max) {
  std::vector<Eigen::Vector3d> c;
  for (int i = 0; i < 8; ++i) c.emplace_back(i & 1 ? max.x() : min.x(), i & 2 ? max.y() : min.y(), i & 4 ? max.z() : min.z());
  return convex_hull(c);
}

namespace {

/// Closest point of the simplex to the origin; keeps only the vertices of the supporting sub-simplex.
Eigen::Vector3d reduce_simplex(std::vector<Eigen::Vector3d>& simplex) {
  const int m = static_cast<int>(simplex.size());
  double best_norm = std::numeric_limits<double>::infinity();
  Eigen::Vector3d best = simplex[0];
  int best_mask = 1;
  for (int mask = 1; mask < (1 << m); ++mask) {
    std::vector<int> idx;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) idx.push_back(i);
    const int k = static_cast<int>(idx.size());
    Eigen::Vector3d point;
    Eigen::VectorXd lambda(k);
    if (k == 1) {
      point = simplex[static_cast<size_t>(idx[0])];
      lambda[0] = 1;
    } else {
      // Minimize |p0 + sum_j mu_j (p_j - p0)| over the affine hull.
      Eigen::MatrixXd e(3, k - 1);
      for (int j = 1; j < k; ++j) e.col(j - 1) = simplex[static_cast<size_t>(idx[static_cast<size_t>(j)])] - simplex[static_cast<size_t>(idx[0])];
      const Eigen::MatrixXd gram = e.transpose() * e;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
      if (ldlt.info() != Eigen::Success || std::abs(ldlt.vectorD().minCoeff()) < 1e-20 * std::max(1.0, gram.norm())) continue;
      const Eigen::VectorXd mu = ldlt.solve(-e.transpose() * simplex[static_cast<size_t>(idx[0])]);
      lambda[0] = 1 - mu.sum();
      lambda.tail(k - 1) = mu;
      if (lambda.minCoeff() < -1e-12) continue;
      point = simplex[static_cast<size_t>(idx[0])] + e * mu;
    }
    const double nrm = point.squaredNorm();
    if (nrm < best_norm - 1e-30 || (nrm <= best_norm && __builtin_popcount(static_cast<unsigned>(mask)) < __builtin_popcount(static_cast<unsigned>(best_mask)))) {
      best_norm = nrm;
      best = point;
      best_mask = mask;
    }
  }
  std::vector<Eigen::Vector3d> kept;
  for (int i = 0; i < m; ++i)
    if (best_mask & (1 << i)) kept.push_back(simplex[static_cast<size_t>(i)]);
  simplex = std::move(kept);
  return best;
}

}  // namespace

namespace {

GjkResult run_gjk(const ConvexHull& a, const ConvexHull& b, double tolerance, bool early_exit) {
  if (a.empty() || b.empty()) throw std::invalid_argument("gjk on an empty hull");
  GjkResult out;
  std::vector<Eigen::Vector3d> simplex;
  Eigen::Vector3d v = a.vertices[0] - b.vertices[0];
  for (out.iterations = 1; out.iterations <= 128; ++out.iterations) {
    if (v.squaredNorm() <= tolerance * tolerance) {
      out.intersect = true;
      return out;
    }
    const Eigen::Vector3d w = a.support(-v) - b.support(v);
    if (early_exit && v.dot(w) > tolerance * v.norm()) {
      out.distance = v.norm();
      return out;
    }
    if (v.squaredNorm() - v.dot(w) <= tolerance * v.norm() && !simplex.empty()) {
      out.distance = v.norm();
      out.intersect = out.distance <= tolerance;
      return out;
    }
    bool duplicate = false;
    for (const auto& s : simplex) duplicate |= (s - w).squaredNorm() <= 1e-30;
    if (duplicate) {
      out.distance = v.norm();
      out.intersect = out.distance <= tolerance;
      return out;
    }
    simplex.push_back(w);
    v = reduce_simplex(simplex);
    if (simplex.size() == 4) {
      out.intersect = true;
      return out;
    }
  }
  out.distance = v.norm();
  out.intersect = out.distance <= tolerance;
  return out;
}

}  // namespace

GjkResult gjk(const ConvexHull& a, const ConvexHull& b, double tolerance) { return run_gjk(a, b, tolerance, false); }

bool intersects(const ConvexHull& a, const ConvexHull& b, double tolerance) {
  if ((a.bounds.min.array() > b.bounds.max.array() + tolerance).any() || (b.bounds.min.array() > a.bounds.max.array() + tolerance).any()) return false;
  return run_gjk(a, b, tolerance, true).intersect;
}

}  // namespace desksplat
