#include "desksplat/mesh.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace desksplat {

Aabb TriangleMesh::bounds() const {
  Aabb b = Aabb::empty();
  for (const auto& v : vertices) b.expand(v);
  return b;
}

double TriangleMesh::area() const {
  double a = 0.0;
  for (const auto& f : faces)
    a += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
  return a;
}

Eigen::Vector3d TriangleMesh::face_normal(size_t fi) const {
  const auto& f = faces[fi];
  return (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).normalized();
}

std::vector<Eigen::Vector3d> TriangleMesh::vertex_normals() const {
  std::vector<Eigen::Vector3d> n(vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& f : faces) {
    const Eigen::Vector3d fn = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
    for (int k = 0; k < 3; ++k) n[f[k]] += fn;
  }
  for (auto& v : n) {
    const double len = v.norm();
    if (len > 0) v /= len;
  }
  return n;
}

void TriangleMesh::append(const TriangleMesh& other) {
  const int offset = static_cast<int>(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (const auto& f : other.faces) faces.push_back(f.array() + offset);
}

TriangleMesh TriangleMesh::transformed(const Eigen::Isometry3d& pose) const {
  TriangleMesh out = *this;
  for (auto& v : out.vertices) v = pose * v;
  return out;
}

TriangleMesh make_box_mesh(const Eigen::Vector3d& h) {
  TriangleMesh m;
  for (int c = 0; c < 8; ++c)
    m.vertices.emplace_back((c & 1) ? h.x() : -h.x(), (c & 2) ? h.y() : -h.y(), (c & 4) ? h.z() : -h.z());
  // Quads listed counter-clockwise from outside.
  const int quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : quads) {
    m.faces.emplace_back(q[0], q[1], q[2]);
    m.faces.emplace_back(q[0], q[2], q[3]);
  }
  return m;
}

TriangleMesh make_uv_sphere(double r, int slices, int stacks) {
  TriangleMesh m;
  m.vertices.emplace_back(0, 0, r);
  for (int i = 1; i < stacks; ++i) {
    const double theta = std::numbers::pi * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / slices;
      m.vertices.emplace_back(r * std::sin(theta) * std::cos(phi), r * std::sin(theta) * std::sin(phi),
                              r * std::cos(theta));
    }
  }
  m.vertices.emplace_back(0, 0, -r);
  const int south = static_cast<int>(m.vertices.size()) - 1;
  auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
  for (int j = 0; j < slices; ++j) m.faces.emplace_back(0, ring(1, j), ring(1, j + 1));
  for (int i = 1; i + 1 < stacks; ++i)
    for (int j = 0; j < slices; ++j) {
      m.faces.emplace_back(ring(i, j), ring(i + 1, j), ring(i + 1, j + 1));
      m.faces.emplace_back(ring(i, j), ring(i + 1, j + 1), ring(i, j + 1));
    }
  for (int j = 0; j < slices; ++j) m.faces.emplace_back(south, ring(stacks - 1, j + 1), ring(stacks - 1, j));
  return m;
}

TriangleMesh make_cylinder_mesh(double r, double hh, int slices) {
  TriangleMesh m;
  for (int j = 0; j < slices; ++j) {
    const double phi = 2.0 * std::numbers::pi * j / slices;
    m.vertices.emplace_back(r * std::cos(phi), r * std::sin(phi), -hh);
    m.vertices.emplace_back(r * std::cos(phi), r * std::sin(phi), hh);
  }
  const int bottom = static_cast<int>(m.vertices.size());
  m.vertices.emplace_back(0, 0, -hh);
  m.vertices.emplace_back(0, 0, hh);
  const int top = bottom + 1;
  for (int j = 0; j < slices; ++j) {
    const int a0 = 2 * j, a1 = 2 * j + 1, b0 = 2 * ((j + 1) % slices), b1 = b0 + 1;
    m.faces.emplace_back(a0, b0, b1);
    m.faces.emplace_back(a0, b1, a1);
    m.faces.emplace_back(bottom, b0, a0);
    m.faces.emplace_back(top, a1, b1);
  }
  return m;
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(9);
  for (const auto& v : mesh.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

std::vector<TriangleMesh> read_obj_groups(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<Eigen::Vector3d> all;
  std::vector<std::vector<Eigen::Vector3i>> groups(1);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Eigen::Vector3d v;
      ls >> v.x() >> v.y() >> v.z();
      all.push_back(v);
    } else if (tag == "o" || tag == "g") {
      if (!groups.back().empty()) groups.emplace_back();
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i < 0 ? static_cast<int>(all.size()) + i : i - 1);
      }
      for (size_t k = 1; k + 1 < idx.size(); ++k) groups.back().emplace_back(idx[0], idx[k], idx[k + 1]);
    }
  }
  std::vector<TriangleMesh> out;
  for (const auto& g : groups) {
    if (g.empty()) continue;
    // Compact the shared vertex list per group.
    TriangleMesh m;
    std::vector<int> remap(all.size(), -1);
    for (const auto& f : g) {
      Eigen::Vector3i nf;
      for (int k = 0; k < 3; ++k) {
        if (f[k] < 0 || f[k] >= static_cast<int>(all.size()))
          throw std::runtime_error("face index out of range in " + path.string());
        if (remap[f[k]] < 0) {
          remap[f[k]] = static_cast<int>(m.vertices.size());
          m.vertices.push_back(all[f[k]]);
        }
        nf[k] = remap[f[k]];
      }
      m.faces.push_back(nf);
    }
    out.push_back(std::move(m));
  }
  return out;
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  TriangleMesh m;
  for (const auto& g : read_obj_groups(path)) m.append(g);
  return m;
}

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  char header[80] = {};
  std::strncpy(header, "desksplat binary stl", sizeof(header));
  os.write(header, 80);
  const auto n = static_cast<uint32_t>(mesh.faces.size());
  os.write(reinterpret_cast<const char*>(&n), 4);
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    float rec[12];
    const Eigen::Vector3d nrm = mesh.face_normal(f);
    for (int k = 0; k < 3; ++k) rec[k] = static_cast<float>(std::isfinite(nrm[k]) ? nrm[k] : 0.0);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) rec[3 + 3 * c + k] = static_cast<float>(mesh.vertices[mesh.faces[f][c]][k]);
    os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    const uint16_t attr = 0;
    os.write(reinterpret_cast<const char*>(&attr), 2);
  }
}

TriangleMesh read_stl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char header[80];
  uint32_t n = 0;
  if (!is.read(header, 80) || !is.read(reinterpret_cast<char*>(&n), 4))
    throw std::runtime_error("truncated stl " + path.string());
  TriangleMesh m;
  for (uint32_t f = 0; f < n; ++f) {
    float rec[12];
    uint16_t attr;
    if (!is.read(reinterpret_cast<char*>(rec), sizeof(rec)) || !is.read(reinterpret_cast<char*>(&attr), 2))
      throw std::runtime_error("truncated stl " + path.string());
    const int base = static_cast<int>(m.vertices.size());
    for (int c = 0; c < 3; ++c) m.vertices.emplace_back(rec[3 + 3 * c], rec[4 + 3 * c], rec[5 + 3 * c]);
    m.faces.emplace_back(base, base + 1, base + 2);
  }
  return m;
}

std::optional<RayHit> intersect_ray(const TriangleMesh& mesh, const Eigen::Vector3d& o,
                                    const Eigen::Vector3d& d, double min_distance) {
  std::optional<RayHit> best;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const Eigen::Vector3d& a = mesh.vertices[mesh.faces[f][0]];
    const Eigen::Vector3d e1 = mesh.vertices[mesh.faces[f][1]] - a;
    const Eigen::Vector3d e2 = mesh.vertices[mesh.faces[f][2]] - a;
    const Eigen::Vector3d p = d.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-15) continue;
    const double inv = 1.0 / det;
    const Eigen::Vector3d s = o - a;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) continue;
    const Eigen::Vector3d q = s.cross(e1);
    const double v = d.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) continue;
    const double t = e2.dot(q) * inv;
    if (t <= min_distance) continue;
    if (!best || t < best->distance) best = RayHit{t, f, Eigen::Vector3d(1.0 - u - v, u, v)};
  }
  return best;
}

}  // namespace desksplat
