#pragma once

#include "desksplat/losses.hpp"

#include <string>
#include <unordered_map>

namespace desksplat {

struct InstanceSet {
  std::vector<std::vector<int>> sets;
  std::vector<Eigen::VectorXd> representatives;
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(sets.size()); }
};

class SegmentationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Normalized mean of the rendered feature pixels under each mask channel of one view.
template <typename Scalar>
std::vector<VecX<Scalar>> representative_features(const Scene<Scalar>& scene, const PosedImage& view, const RenderOptions& base = {}) {
  RenderOptions opt = base;
  opt.color = false;
  opt.depth = false;
  opt.feature = true;
  const auto cam = view.camera.template cast<Scalar>();
  if (view.masks.height != cam.height || view.masks.width != cam.width) throw LossInputError("mask resolution differs from its camera");
  const auto buf = render(scene, cam, opt);
  const int dim = scene.feature_dim, ns = view.masks.channels;
  std::vector<VecX<Scalar>> out(static_cast<size_t>(ns), VecX<Scalar>::Zero(dim));
  for (int k = 0; k < ns; ++k) {
    int count = 0;
    for (size_t p = 0; p < buf.feature.pixels(); ++p)
      if (view.masks.pixel(p)[k]) {
        out[static_cast<size_t>(k)] += Eigen::Map<const VecX<Scalar>>(buf.feature.pixel(p), dim);
        ++count;
      }
    if (count == 0) throw SegmentationError("mask channel " + std::to_string(k) + " is empty in the chosen view");
    const Scalar n = out[static_cast<size_t>(k)].norm();
    if (!(n > Scalar(1e-12))) throw SegmentationError("mask channel " + std::to_string(k) + " covers no rendered features");
    out[static_cast<size_t>(k)] /= n;
  }
  return out;
}

/// Indices whose feature has cosine similarity at least `delta` with the unit representative. A
/// rounding slack of 1e-12 keeps features equal to the representative inside at delta = 1.
template <typename Scalar>
std::vector<int> extract_instance(const Scene<Scalar>& scene, const VecX<Scalar>& representative, Scalar delta = Scalar(0.9)) {
  std::vector<int> out;
  for (size_t i = 0; i < scene.size(); ++i) {
    const auto& f = scene.gaussians[i].feature;
    const Scalar n = f.norm();
    const Scalar cosine = n > Scalar(0) ? f.dot(representative) / n : Scalar(0);
    if (cosine >= delta - Scalar(1e-12)) out.push_back(static_cast<int>(i));
  }
  return out;
}

/// Minimum-cost assignment. Result[k] is the column assigned to row k.
struct Assignment {
  std::vector<int> perm;
  double cost = 0;
  bool tie = false;  // another assignment reached the same cost (exhaustive only)
};

/// Enumerates every permutation in lexicographic order; the first one reaching the minimum wins.
Assignment assign_exhaustive(const Eigen::MatrixXd& cost, double tie_tolerance = 1e-12);
/// Shortest augmenting path Hungarian method, O(n^3).
Assignment assign_hungarian(const Eigen::MatrixXd& cost);

struct MaskMatch {
  std::vector<int> perm;  // channel of this view that holds instance k
  bool tie = false;
};

/// Per view, the permutation aligning its mask channels with the representatives: the cost of pairing
/// instance k with channel c is the distance between the representative and the view's normalized
/// mean feature under channel c.
template <typename Scalar>
std::vector<MaskMatch> match_masks(const Scene<Scalar>& scene, std::span<const PosedImage> views,
                                   const std::vector<VecX<Scalar>>& representatives, const RenderOptions& base = {}) {
  std::vector<MaskMatch> out;
  const int ns = static_cast<int>(representatives.size());
  for (const auto& v : views) {
    if (v.masks.channels != ns) throw SegmentationError("view has " + std::to_string(v.masks.channels) + " mask channels, expected " + std::to_string(ns));
    const auto means = representative_features(scene, v, base);
    Eigen::MatrixXd cost(ns, ns);
    for (int k = 0; k < ns; ++k)
      for (int c = 0; c < ns; ++c)
        cost(k, c) = double((representatives[static_cast<size_t>(k)] - means[static_cast<size_t>(c)]).norm());
    const auto a = ns <= 6 ? assign_exhaustive(cost) : assign_hungarian(cost);
    out.push_back({a.perm, a.tie});
  }
  return out;
}

/// Reorders channels so that channel k holds the view's channel perm[k].
MaskRaster permute_channels(const MaskRaster& masks, const std::vector<int>& perm);

/// DBSCAN cluster labels (-1 noise). Clusters are numbered in order of their lowest member index.
template <typename Scalar>
std::vector<int> dbscan(const std::vector<Vec3<Scalar>>& points, Scalar eps, int min_pts) {
  const size_t n = points.size();
  std::vector<int> label(n, -2);  // -2 unvisited
  if (n == 0) return {};
  auto key = [eps](const Vec3<Scalar>& p) {
    const Eigen::Vector3i c = (p / eps).array().floor().template cast<int>();
    return (int64_t(c.x()) * 73856093) ^ (int64_t(c.y()) * 19349663) ^ (int64_t(c.z()) * 83492791);
  };
  std::unordered_map<int64_t, std::vector<int>> grid;
  for (size_t i = 0; i < n; ++i) grid[key(points[i])].push_back(static_cast<int>(i));
  const Scalar eps2 = eps * eps;
  auto neighbors = [&](int i, std::vector<int>& out) {
    out.clear();
    const Eigen::Vector3i c = (points[static_cast<size_t>(i)] / eps).array().floor().template cast<int>();
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const Eigen::Vector3i q = c + Eigen::Vector3i(dx, dy, dz);
          const auto it = grid.find((int64_t(q.x()) * 73856093) ^ (int64_t(q.y()) * 19349663) ^ (int64_t(q.z()) * 83492791));
          if (it == grid.end()) continue;
          for (int j : it->second)
            if ((points[static_cast<size_t>(j)] - points[static_cast<size_t>(i)]).squaredNorm() <= eps2) out.push_back(j);
        }
    // Hash collisions can list a bucket twice.
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  };

  int cluster = 0;
  std::vector<int> nb, nb2, queue;
  for (size_t i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    neighbors(static_cast<int>(i), nb);
    if (static_cast<int>(nb.size()) < min_pts) {
      label[i] = -1;
      continue;
    }
    label[i] = cluster;
    queue.assign(nb.begin(), nb.end());
    for (size_t q = 0; q < queue.size(); ++q) {
      const int j = queue[q];
      if (label[static_cast<size_t>(j)] == -1) label[static_cast<size_t>(j)] = cluster;
      if (label[static_cast<size_t>(j)] != -2) continue;
      label[static_cast<size_t>(j)] = cluster;
      neighbors(j, nb2);
      if (static_cast<int>(nb2.size()) >= min_pts) queue.insert(queue.end(), nb2.begin(), nb2.end());
    }
    ++cluster;
  }
  return label;
}

/// Keeps only the largest DBSCAN cluster of the set's Gaussian means; ties go to the cluster with the
/// lowest member index. The result preserves input order.
template <typename Scalar>
std::vector<int> remove_outliers(const Scene<Scalar>& scene, const std::vector<int>& set, Scalar eps = Scalar(0.04), int min_pts = 4) {
  if (set.empty()) return {};
  std::vector<Vec3<Scalar>> pts;
  pts.reserve(set.size());
  for (int i : set) pts.push_back(scene.gaussians.at(static_cast<size_t>(i)).mean);
  const auto label = dbscan(pts, eps, min_pts);
  std::vector<int> size;
  for (int l : label)
    if (l >= 0) {
      if (static_cast<size_t>(l) >= size.size()) size.resize(static_cast<size_t>(l) + 1, 0);
      ++size[static_cast<size_t>(l)];
    }
  if (size.empty()) return {};
  const int best = static_cast<int>(std::max_element(size.begin(), size.end()) - size.begin());
  std::vector<int> out;
  for (size_t m = 0; m < set.size(); ++m)
    if (label[m] == best) out.push_back(set[m]);
  return out;
}

class InstanceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<uint8_t> encode_instances(const InstanceSet& inst, int feature_dim);
InstanceSet decode_instances(const std::vector<uint8_t>& bytes);
void save_instances(const std::string& path, const InstanceSet& inst, int feature_dim);
InstanceSet load_instances(const std::string& path);

}  // namespace desksplat
