#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "desksplat/segment.hpp"
#include "support.hpp"

using namespace desksplat;
using namespace testing_support;

namespace {

/// N blobs on a ring in front of the camera, blob k carrying feature e_k. Returns the scene and the
/// ground-truth masks (channel k = blob k).
struct BlobScene {
  SceneD scene;
  std::vector<std::vector<int>> sets;
  CameraD cam;
  MaskRaster masks;
};

BlobScene blobs(int n, int dim, std::mt19937_64& rng) {
  BlobScene b;
  b.cam = small_camera(40, 40, 60);
  b.scene.feature_dim = dim;
  b.scene.workspace = {Eigen::Vector3d(-1, -1, 0), Eigen::Vector3d(1, 1, 2)};
  std::normal_distribution<double> nd(0, 0.004);
  for (int k = 0; k < n; ++k) {
    const double a = 2 * std::numbers::pi * k / n;
    const Eigen::Vector3d c(0.18 * std::cos(a), 0.18 * std::sin(a), 1.0);
    std::vector<int> set;
    for (int j = 0; j < 12; ++j) {
      Gaussian<double> g;
      g.mean = c + Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
      g.covariance = isotropic_covariance(0.01);
      g.opacity = 0.9;
      g.color = Eigen::Vector3d::Constant(0.5);
      g.feature = Eigen::VectorXd::Unit(dim, k);
      set.push_back(static_cast<int>(b.scene.size()));
      b.scene.gaussians.push_back(g);
    }
    b.sets.push_back(set);
  }
  RenderOptions opt;
  opt.instance_sets = b.sets;
  const auto buf = render(b.scene, b.cam, opt);
  b.masks = MaskRaster(40, 40, n);
  for (size_t p = 0; p < b.masks.pixels(); ++p) {
    const double* c = buf.instance_mask.pixel(p);
    const int best = static_cast<int>(std::max_element(c, c + n) - c);
    if (c[best] > 0.5) b.masks.pixel(p)[best] = 1;
  }
  return b;
}

}  // namespace

TEST_CASE("representative features") {
  std::mt19937_64 rng(1);
  SUBCASE("identical features give that feature") {
    auto b = blobs(2, 4, rng);
    const Eigen::VectorXd u = random_unit(rng, 4);
    for (auto& g : b.scene.gaussians) g.feature = u;
    const auto reps = representative_features(b.scene, PosedImage{b.cam, {}, b.masks});
    for (const auto& r : reps) CHECK((r - u).norm() < 1e-12);
  }
  SUBCASE("two orthogonal pixels give the bisector") {
    auto b = blobs(2, 4, rng);
    MaskRaster m(40, 40, 1);
    // One pixel at each blob centre.
    for (int k = 0; k < 2; ++k) {
      const auto pr = project(b.cam, b.scene.gaussians[static_cast<size_t>(k * 12)].mean);
      m(static_cast<int>(std::lround(pr.v)), static_cast<int>(std::lround(pr.u)), 0) = 1;
    }
    const auto reps = representative_features(b.scene, PosedImage{b.cam, {}, m});
    const Eigen::VectorXd want = (Eigen::VectorXd::Unit(4, 0) + Eigen::VectorXd::Unit(4, 1)).normalized();
    CHECK((reps[0] - want).norm() < 1e-9);
  }
  SUBCASE("an empty channel is an error") {
    auto b = blobs(2, 4, rng);
    MaskRaster m(40, 40, 3);
    for (size_t p = 0; p < m.pixels(); ++p)
      for (int k = 0; k < 2; ++k) m.pixel(p)[k] = b.masks.pixel(p)[k];
    CHECK_THROWS_AS(representative_features(b.scene, PosedImage{b.cam, {}, m}), SegmentationError);
  }
}

TEST_CASE("extract instance") {
  std::mt19937_64 rng(2);
  const auto scene = random_scene(rng, 50, 6, {0, 0, 1}, 0.2, 0.01, 0.02);
  const Eigen::VectorXd rep = scene.gaussians[7].feature;
  const auto exact = extract_instance(scene, rep, 1.0);
  CHECK(std::count(exact.begin(), exact.end(), 7) == 1);
  CHECK(extract_instance(scene, rep, -1.0).size() == scene.size());
  for (double d1 = -1; d1 <= 1; d1 += 0.1) {
    const auto a = extract_instance(scene, rep, d1), b = extract_instance(scene, rep, d1 + 0.05);
    CHECK(std::includes(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("planted two-cluster features are partitioned exactly") {
  std::mt19937_64 rng(3);
  const int dim = 8;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd c0 = random_unit(rng, dim);
    Eigen::VectorXd c1 = random_unit(rng, dim);
    c1 = (c1 - c0 * c0.dot(c1)).normalized();
    SceneD scene = random_scene(rng, 80, dim, {0, 0, 1}, 0.2, 0.01, 0.02);
    std::vector<int> truth;
    for (size_t i = 0; i < scene.size(); ++i) {
      const int k = static_cast<int>(i % 3 == 0);
      truth.push_back(k);
      Eigen::VectorXd f;
      do {
        f = ((k ? c1 : c0) + 0.1 * random_unit(rng, dim)).normalized();
      } while (f.dot(k ? c1 : c0) <= 0.97);
      scene.gaussians[i].feature = f;
    }
    const auto s0 = extract_instance(scene, c0, 0.9), s1 = extract_instance(scene, c1, 0.9);
    // Brute force: every index checked against both representatives.
    for (size_t i = 0; i < scene.size(); ++i) {
      const bool in0 = std::binary_search(s0.begin(), s0.end(), int(i)), in1 = std::binary_search(s1.begin(), s1.end(), int(i));
      CHECK(in0 == (truth[i] == 0));
      CHECK(in1 == (truth[i] == 1));
      CHECK(std::abs(scene.gaussians[i].feature.dot(truth[i] ? c0 : c1)) < 0.3);
    }
  }
}

TEST_CASE("hungarian assignment agrees with exhaustive search") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = u(rng);
    const auto a = assign_exhaustive(cost), b = assign_hungarian(cost);
    CHECK(a.perm == b.perm);
    CHECK(a.cost == doctest::Approx(b.cost).epsilon(1e-12));
  }
  Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(3, 3);
  const auto tied = assign_exhaustive(flat);
  CHECK(tied.tie);
  CHECK(tied.perm == std::vector<int>{0, 1, 2});
  Eigen::MatrixXd big(9, 9);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) big(i, j) = (i + 4 * j) % 9;
  const auto h = assign_hungarian(big);
  std::vector<int> sorted = h.perm;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("match masks recovers planted permutations") {
  std::mt19937_64 rng(5);
  for (int n = 1; n <= 6; ++n) {
    auto b = blobs(n, 8, rng);
    const PosedImage ref{b.cam, {}, b.masks};
    const auto reps = representative_features(b.scene, ref);
    std::vector<PosedImage> identity{ref};
    CHECK(match_masks(b.scene, std::span<const PosedImage>(identity), reps)[0].perm == [n] {
      std::vector<int> id(static_cast<size_t>(n));
      std::iota(id.begin(), id.end(), 0);
      return id;
    }());
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<int> sigma(static_cast<size_t>(n));
      std::iota(sigma.begin(), sigma.end(), 0);
      std::shuffle(sigma.begin(), sigma.end(), rng);
      std::vector<PosedImage> views{{b.cam, {}, permute_channels(b.masks, sigma)}};
      const auto m = match_masks(b.scene, std::span<const PosedImage>(views), reps);
      CHECK(!m[0].tie);
      CHECK(permute_channels(views[0].masks, m[0].perm).data == b.masks.data);
      // Exhaustive oracle over the raw costs.
      const auto means = representative_features(b.scene, views[0]);
      Eigen::MatrixXd cost(n, n);
      for (int k = 0; k < n; ++k)
        for (int c = 0; c < n; ++c) cost(k, c) = (reps[static_cast<size_t>(k)] - means[static_cast<size_t>(c)]).norm();
      CHECK(assign_exhaustive(cost).perm == m[0].perm);
    }
  }
}

TEST_CASE("outlier removal keeps the largest density cluster") {
  std::mt19937_64 rng(6);
  SceneD scene = random_scene(rng, 105, 2, {0, 0, 0}, 0.0, 0.01, 0.02);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (int i = 0; i < 100; ++i) scene.gaussians[static_cast<size_t>(i)].mean = Eigen::Vector3d(u(rng), u(rng), u(rng));
  for (int i = 100; i < 105; ++i) scene.gaussians[static_cast<size_t>(i)].mean = Eigen::Vector3d(1.0 + 0.01 * (i - 100), 0, 0);
  std::vector<int> all(105);
  std::iota(all.begin(), all.end(), 0);
  const auto kept = remove_outliers(scene, all);
  // Pairwise-distance oracle: the cluster is connected at eps, the planted points are 1 m away.
  std::vector<int> want(100);
  std::iota(want.begin(), want.end(), 0);
  CHECK(kept == want);
  CHECK(remove_outliers(scene, kept) == kept);

  std::vector<int> tight{3, 9, 12};
  for (int i : tight) scene.gaussians[static_cast<size_t>(i)].mean = Eigen::Vector3d(0.001 * i, 0, 0);
  CHECK(remove_outliers(scene, tight, 0.04, 2) == tight);

  // Equal-size clusters: the one holding the lowest index wins.
  SceneD pair = random_scene(rng, 8, 2, {0, 0, 0}, 0.0, 0.01, 0.02);
  for (int i = 0; i < 8; ++i) pair.gaussians[static_cast<size_t>(i)].mean = Eigen::Vector3d(i % 2 ? 2.0 : 0.0, 0.001 * i, 0);
  std::vector<int> eight(8);
  std::iota(eight.begin(), eight.end(), 0);
  CHECK(remove_outliers(pair, eight) == std::vector<int>{0, 2, 4, 6});
}

TEST_CASE("dbscan matches a brute-force connectivity oracle") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 0.5);
  std::vector<Eigen::Vector3d> pts(300);
  for (auto& p : pts) p = Eigen::Vector3d(u(rng), u(rng), u(rng) * 0.1);
  const double eps = 0.05;
  const auto label = dbscan(pts, eps, 4);
  std::vector<int> nb(pts.size(), 0);
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = 0; j < pts.size(); ++j) nb[i] += (pts[i] - pts[j]).norm() <= eps;
  for (size_t i = 0; i < pts.size(); ++i) {
    if (nb[i] >= 4) CHECK(label[i] >= 0);
    for (size_t j = 0; j < pts.size(); ++j)
      if (nb[i] >= 4 && nb[j] >= 4 && (pts[i] - pts[j]).norm() <= eps) CHECK(label[i] == label[j]);
  }
}

TEST_CASE("instance sidecar round trip") {
  InstanceSet inst;
  inst.sets = {{0, 4, 7}, {1}};
  inst.representatives = {Eigen::VectorXd::Unit(3, 0), Eigen::VectorXd::Unit(3, 2)};
  inst.labels = {"red sphere", "tasse bleue é"};
  const auto path = temp_path("inst.dgis").string();
  save_instances(path, inst, 3);
  const auto back = load_instances(path);
  CHECK(back.sets == inst.sets);
  CHECK(back.labels == inst.labels);
  CHECK(back.representatives[1] == inst.representatives[1]);
  auto bytes = encode_instances(inst, 3);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_instances(bytes), InstanceFormatError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_instances(bytes), InstanceFormatError);
}
