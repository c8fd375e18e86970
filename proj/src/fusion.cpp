#include "desksplat/fusion.hpp"

#include <map>

namespace desksplat::detail {

const std::array<std::array<int, 2>, 12>& cube_edges() {
  static const std::array<std::array<int, 2>, 12> edges = [] {
    std::array<std::array<int, 2>, 12> e{};
    for (int a = 0; a < 3; ++a) {
      int n = 0;
      for (int c = 0; c < 8; ++c)
        if (!(c >> a & 1)) e[static_cast<size_t>(4 * a + n++)] = {c, c | 1 << a};
    }
    return e;
  }();
  return edges;
}

namespace {

int edge_between(int c0, int c1) {
  const auto& e = cube_edges();
  for (int i = 0; i < 12; ++i)
    if ((e[static_cast<size_t>(i)][0] == c0 && e[static_cast<size_t>(i)][1] == c1) ||
        (e[static_cast<size_t>(i)][0] == c1 && e[static_cast<size_t>(i)][1] == c0))
      return i;
  return -1;
}

std::vector<std::array<int, 3>> triangulate(int config) {
  std::vector<std::array<int, 2>> segments;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      const int b = (axis + 1) % 3, c = (axis + 2) % 3;
      std::array<int, 4> cyc{};
      const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      for (int q = 0; q < 4; ++q) cyc[static_cast<size_t>(q)] = side << axis | uv[q][0] << b | uv[q][1] << c;
      auto inside = [&](int q) { return (config >> cyc[static_cast<size_t>(q & 3)]) & 1; };
      std::vector<int> crossing;
      for (int q = 0; q < 4; ++q)
        if (inside(q) != inside(q + 1)) crossing.push_back(edge_between(cyc[static_cast<size_t>(q)], cyc[static_cast<size_t>((q + 1) & 3)]));
      if (crossing.size() == 2) {
        segments.push_back({crossing[0], crossing[1]});
      } else if (crossing.size() == 4) {
        for (int q = 0; q < 4; ++q)
          if (inside(q))
            segments.push_back({edge_between(cyc[static_cast<size_t>((q + 3) & 3)], cyc[static_cast<size_t>(q)]),
                                edge_between(cyc[static_cast<size_t>(q)], cyc[static_cast<size_t>((q + 1) & 3)])});
      }
    }

  // Every crossing edge lies on two faces, so the segments close into loops.
  std::map<int, std::vector<int>> adj;
  for (const auto& s : segments) {
    adj[s[0]].push_back(s[1]);
    adj[s[1]].push_back(s[0]);
  }
  std::vector<std::array<int, 3>> tris;
  std::map<int, bool> used;
  for (const auto& [start, nb] : adj) {
    if (used[start]) continue;
    std::vector<int> loop{start};
    used[start] = true;
    int prev = -1, cur = start;
    while (true) {
      const auto& n = adj[cur];
      const int next = n[0] != prev ? n[0] : n[1];
      if (next == start) break;
      loop.push_back(next);
      used[next] = true;
      prev = cur;
      cur = next;
    }
    for (size_t t = 1; t + 1 < loop.size(); ++t) tris.push_back({loop[0], loop[t], loop[t + 1]});
  }
  return tris;
}

}  // namespace

const std::vector<std::vector<std::array<int, 3>>>& marching_cubes_table() {
  static const std::vector<std::vector<std::array<int, 3>>> table = [] {
    std::vector<std::vector<std::array<int, 3>>> t(256);
    for (int config = 0; config < 256; ++config) t[static_cast<size_t>(config)] = triangulate(config);
    return t;
  }();
  return table;
}

}  // namespace desksplat::detail
