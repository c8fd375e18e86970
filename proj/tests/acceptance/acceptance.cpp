// Acceptance run: one PASS/FAIL line per criterion. Pass criterion names to run a subset.
#include "desksplat/field.hpp"
#include "desksplat/fusion.hpp"
#include "desksplat/metrics.hpp"
#include "desksplat/pipeline.hpp"
#include "desksplat/planning.hpp"
#include "desksplat/segment.hpp"
#include "desksplat/train.hpp"

#include "../unit/gradcheck.hpp"
#include "../unit/sat_oracle.hpp"
#include "../unit/sphere_depth.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace desksplat;
using namespace testing_support;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

// Gradients

Outcome gradient_suite() {
  Outcome out;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  const auto cam = small_camera();
  double worst_render = 0, worst_jac = 0, worst_sifr = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const int n = 1 + trial % 5;
    const auto s = render_test_scene(rng, n, 4);
    auto opt = exact_render_options();
    opt.feature = true;
    RenderUpstream<double> up;
    up.color = random_raster(rng, cam.height, cam.width, 3);
    up.alpha = random_raster(rng, cam.height, cam.width, 1);
    up.feature = random_raster(rng, cam.height, cam.width, 4);
    worst_render = std::max(worst_render, compare_render_gradients(s, cam, up, opt).worst());
  }
  for (int trial = 0; trial < 24; ++trial) {
    const auto s = random_scene(rng, 2 + trial % 4, 6, Eigen::Vector3d::Zero(), 0.05, 0.02, 0.05);
    const Eigen::Vector3d x = 0.04 * Eigen::Vector3d::Random();
    const double h = 1e-5;
    Eigen::MatrixXd fd(6, 3);
    for (int k = 0; k < 3; ++k)
      fd.col(k) = (feature_field<double>(s, x + h * Eigen::Vector3d::Unit(k)) - feature_field<double>(s, x - h * Eigen::Vector3d::Unit(k))) / (2 * h);
    worst_jac = std::max(worst_jac, (feature_jacobian<double>(s, x) - fd).norm() / fd.norm());
  }
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 4;
    const auto s = random_scene(rng, n, 6, Eigen::Vector3d::Zero(), 0.05, 0.02, 0.05);
    const auto r = sifr_loss(s);
    const double h = 1e-6;
    Eigen::MatrixXd fd(n, 6);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 6; ++k) {
        auto p = s, m = s;
        p.gaussians[static_cast<size_t>(i)].feature[k] += h;
        m.gaussians[static_cast<size_t>(i)].feature[k] -= h;
        fd(i, k) = (sifr_loss(p).loss - sifr_loss(m).loss) / (2 * h);
      }
    worst_sifr = std::max(worst_sifr, (r.feature_grad - fd).norm() / fd.norm());
  }
  const double t = seconds_since(t0);
  out.require(worst_render < 1e-3, "render gradient rel. error " + fmt(worst_render));
  out.require(worst_jac < 1e-4, "feature jacobian rel. error " + fmt(worst_jac));
  out.require(worst_sifr < 1e-4, "SIFR gradient rel. error " + fmt(worst_sifr));
  out.require(t < 60, "runtime " + fmt(t) + " s");
  out.detail << (out.pass ? "" : " | ") << "renderer " << fmt(worst_render) << ", jacobian " << fmt(worst_jac) << ", SIFR " << fmt(worst_sifr)
             << ", " << fmt(t, 3) << " s";
  return out;
}

// Fields

Outcome field_invariants() {
  Outcome out;
  std::mt19937_64 rng(1002);
  double norm_err = 0, tangent_err = 0;
  int points = 0;
  while (points < 1000) {
    const auto s = random_scene(rng, 6, 8, Eigen::Vector3d::Zero(), 0.05, 0.02, 0.05);
    for (int k = 0; k < 50; ++k, ++points) {
      const Eigen::Vector3d x = 0.06 * Eigen::Vector3d::Random();
      const Eigen::VectorXd f = feature_field<double>(s, x);
      norm_err = std::max(norm_err, std::abs(f.norm() - 1.0));
      tangent_err = std::max(tangent_err, (f.transpose() * feature_jacobian<double>(s, x)).cwiseAbs().maxCoeff());
    }
  }
  auto flat = random_scene(rng, 12, 8, Eigen::Vector3d::Zero(), 0.05, 0.02, 0.05);
  const Eigen::VectorXd u = random_unit(rng, 8);
  for (auto& g : flat.gaussians) g.feature = u;
  const double constant_sifr = sifr_loss(flat).loss;

  double ratio_err = 0;
  for (double d : {2.0, 10.0, 100.0}) {
    const Eigen::Vector3d n = random_unit(rng, 3);
    const auto m = metric_from_normal<double>(n, d);
    const Eigen::VectorXd g = random_unit(rng, 8);
    const Eigen::MatrixXd jt = g * m.frame.col(1).transpose(), jn = g * n.transpose();
    ratio_err = std::max(ratio_err, std::abs(sifr_quadratic_form(jt, m.g_inv) / sifr_quadratic_form(jn, m.g_inv) - d));
  }
  out.require(norm_err <= 1e-9, "|F| deviation " + fmt(norm_err));
  out.require(tangent_err <= 1e-6, "F'J " + fmt(tangent_err));
  out.require(constant_sifr < 1e-20, "constant-feature SIFR " + fmt(constant_sifr));
  out.require(ratio_err <= 1e-9, "tangent/normal ratio error " + fmt(ratio_err));
  out.detail << (out.pass ? "" : " | ") << points << " points, max ||F||-1 " << fmt(norm_err) << ", max |F'J| " << fmt(tangent_err)
             << ", constant SIFR " << fmt(constant_sifr) << ", ratio error " << fmt(ratio_err);
  return out;
}

Outcome metric_construction() {
  Outcome out;
  std::mt19937_64 rng(1003);
  double eig_err = 0, flip_err = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const double d = 1.0 + 199.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    const Eigen::Vector3d n = random_unit(rng, 3);
    const auto m = metric_from_normal<double>(n, d);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m.g);
    const Eigen::Vector3d want(1.0, 1.0, d);
    eig_err = std::max(eig_err, (es.eigenvalues() - want).cwiseAbs().maxCoeff());
    flip_err = std::max(flip_err, (metric_from_normal<double>(-n, d).g - m.g).cwiseAbs().maxCoeff());
  }
  out.require(eig_err <= 1e-9, "eigenvalue error " + fmt(eig_err));
  out.require(flip_err <= 1e-9, "sign flip difference " + fmt(flip_err));
  out.detail << (out.pass ? "" : " | ") << "200 normals, eigenvalue error " << fmt(eig_err) << ", flip difference " << fmt(flip_err);
  return out;
}

// Segmentation

/// Blobs on a ring in front of the camera; blob k carries feature e_k. Masks come from coverage.
struct Blobs {
  SceneD scene;
  CameraD cam;
  MaskRaster masks;
};

Blobs ring_of_blobs(int n, std::mt19937_64& rng) {
  Blobs b;
  b.cam = small_camera(40, 40, 60);
  b.scene.feature_dim = 8;
  b.scene.workspace = {Eigen::Vector3d(-1, -1, 0), Eigen::Vector3d(1, 1, 2)};
  std::normal_distribution<double> nd(0, 0.004);
  std::vector<std::vector<int>> sets(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double a = 2 * std::numbers::pi * k / n;
    for (int j = 0; j < 10; ++j) {
      Gaussian<double> g;
      g.mean = Eigen::Vector3d(0.18 * std::cos(a), 0.18 * std::sin(a), 1.0) + Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
      g.covariance = isotropic_covariance(0.01);
      g.opacity = 0.9;
      g.feature = (Eigen::VectorXd::Unit(8, k) + 0.05 * random_unit(rng, 8)).normalized();
      sets[static_cast<size_t>(k)].push_back(static_cast<int>(b.scene.size()));
      b.scene.gaussians.push_back(g);
    }
  }
  RenderOptions opt;
  opt.instance_sets = sets;
  const auto buf = render(b.scene, b.cam, opt);
  b.masks = MaskRaster(40, 40, n);
  for (size_t p = 0; p < b.masks.pixels(); ++p) {
    const double* c = buf.instance_mask.pixel(p);
    const int best = static_cast<int>(std::max_element(c, c + n) - c);
    if (c[best] > 0.5) b.masks.pixel(p)[best] = 1;
  }
  return b;
}

/// Independent permutation search: std::next_permutation over the channel order.
std::vector<int> brute_force_perm(const std::vector<Eigen::VectorXd>& reps, const std::vector<Eigen::VectorXd>& means) {
  const int n = static_cast<int>(reps.size());
  std::vector<int> perm(static_cast<size_t>(n)), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (int k = 0; k < n; ++k) c += (reps[static_cast<size_t>(k)] - means[static_cast<size_t>(perm[static_cast<size_t>(k)])]).norm();
    if (c < best_cost - 1e-12) best_cost = c, best = perm;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome segmentation_oracles() {
  Outcome out;
  std::mt19937_64 rng(1004);
  int partition_errors = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd c0 = random_unit(rng, 8);
    const Eigen::VectorXd c1 = [&] {
      Eigen::VectorXd v = random_unit(rng, 8);
      return Eigen::VectorXd((v - c0 * c0.dot(v)).normalized());
    }();
    SceneD scene = random_scene(rng, 100, 8, {0, 0, 1}, 0.2, 0.01, 0.02);
    std::vector<int> want0, want1;
    for (size_t i = 0; i < scene.size(); ++i) {
      const bool second = std::uniform_real_distribution<double>(0, 1)(rng) < 0.4;
      const Eigen::VectorXd& c = second ? c1 : c0;
      Eigen::VectorXd f;
      do f = (c + 0.1 * random_unit(rng, 8)).normalized();
      while (f.dot(c) <= 0.97);
      scene.gaussians[i].feature = f;
      (second ? want1 : want0).push_back(static_cast<int>(i));
    }
    partition_errors += extract_instance(scene, c0, 0.9) != want0;
    partition_errors += extract_instance(scene, c1, 0.9) != want1;
  }
  out.require(partition_errors == 0, std::to_string(partition_errors) + " planted partitions not recovered");

  int match_errors = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    auto b = ring_of_blobs(n, rng);
    const PosedImage ref{b.cam, {}, b.masks};
    const auto reps = representative_features(b.scene, ref);
    std::vector<int> sigma(static_cast<size_t>(n));
    std::iota(sigma.begin(), sigma.end(), 0);
    std::shuffle(sigma.begin(), sigma.end(), rng);
    const std::vector<PosedImage> views{{b.cam, {}, permute_channels(b.masks, sigma)}};
    const auto m = match_masks(b.scene, std::span<const PosedImage>(views), reps);
    const auto oracle = brute_force_perm(reps, representative_features(b.scene, views[0]));
    match_errors += m[0].perm != oracle;
    match_errors += permute_channels(views[0].masks, m[0].perm).data != b.masks.data;
  }
  out.require(match_errors == 0, std::to_string(match_errors) + " mask matching disagreements");

  size_t far_kept = 0, far_total = 0, main_dropped = 0, main_total = 0;
  for (int trial = 0; trial < 20; ++trial) {
    SceneD scene = random_scene(rng, 150, 2, {0, 0, 0}, 0.0, 0.01, 0.02);
    std::uniform_real_distribution<double> u(-0.06, 0.06);
    std::vector<int> set(scene.size());
    std::iota(set.begin(), set.end(), 0);
    // A dense main cluster, then 2-3 small clusters more than eps = 0.04 away from it and each other.
    const int main_n = 120;
    for (int i = 0; i < main_n; ++i) scene.gaussians[static_cast<size_t>(i)].mean = Eigen::Vector3d(u(rng), u(rng), 0.5 * u(rng));
    for (int i = main_n; i < 150; ++i) {
      const int c = (i - main_n) / 10;
      const Eigen::Vector3d center(0.3 + 0.2 * c, 0.1 * (trial % 3), 0.0);
      scene.gaussians[static_cast<size_t>(i)].mean = center + 0.005 * Eigen::Vector3d::Random();
    }
    const auto kept = remove_outliers(scene, set, 0.04, 4);
    for (int i : kept) far_kept += i >= main_n;
    far_total += 30;
    main_total += main_n;
    main_dropped += static_cast<size_t>(main_n) - static_cast<size_t>(std::count_if(kept.begin(), kept.end(), [&](int i) { return i < main_n; }));
  }
  out.require(far_kept == 0, std::to_string(far_kept) + " planted far members kept");
  out.require(main_dropped == 0, std::to_string(main_dropped) + " main cluster members removed");
  out.detail << (out.pass ? "" : " | ") << "40 planted partitions, 100 matching trials (N_s 1-6), outliers removed " << far_total - far_kept << "/"
             << far_total << ", main kept " << main_total - main_dropped << "/" << main_total;
  return out;
}

// Fusion

Outcome fusion_oracle() {
  Outcome out;
  const auto t0 = Clock::now();
  const Eigen::Vector3d center(0, 0, 0.1);
  const double r = 0.1, voxel = 0.004;
  auto vol = TsdfVolume<double>::covering({center - Eigen::Vector3d::Constant(r), center + Eigen::Vector3d::Constant(r)}, voxel);
  PoseDistribution dist;
  dist.center = center;
  const auto k = intrinsics_from_fov(256, 256, 20.0);
  const auto poses = sample_hemisphere_poses(dist, k, 256, 256);
  for (const auto& cam : poses) tsdf_integrate(vol, sphere_depth(cam, center, r), cam);
  const auto mesh = extract_mesh(vol);
  double err = 0;
  for (const auto& v : mesh.vertices) err += std::abs((v - center).norm() - r);
  err = mesh.vertices.empty() ? std::numeric_limits<double>::infinity() : err / double(mesh.vertices.size());
  const double t = seconds_since(t0);
  out.require(poses.size() == 80, std::to_string(poses.size()) + " poses");
  out.require(err < 0.008, "mean radial error " + fmt(err * 1000) + " mm");
  out.require(t < 120, "runtime " + fmt(t) + " s");
  out.detail << (out.pass ? "" : " | ") << poses.size() << " poses, " << mesh.vertices.size() << " vertices, mean radial error "
             << fmt(err * 1000, 3) << " mm, " << fmt(t, 3) << " s";
  return out;
}

// Metric functions

Outcome metric_functions() {
  Outcome out;
  Raster<double> gt(4, 4, 1, kEmptyDepth);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 2; ++c) gt(r, c, 0) = 1.0 + 0.1 * r;
  auto shifted = gt, half = gt, extra = gt;
  int n = 0;
  for (size_t i = 0; i < gt.data.size(); ++i)
    if (!is_empty_depth(gt.data[i])) {
      shifted.data[i] += 0.3;
      half.data[i] += (n++ % 2) ? 0.5 : 0.01;
    }
  extra(0, 3, 0) = 2.0;
  out.require(depth_accuracy(gt, gt, 0.05) == 1.0, "identical depth");
  out.require(depth_accuracy(shifted, gt, 0.2) == 0.0, "all shifted beyond threshold");
  out.require(depth_accuracy(half, gt, 0.05) == 0.5, "half within");
  out.require(depth_accuracy(extra, gt, 0.05) == 8.0 / 9.0, "one extra occupied pixel");
  const Raster<double> empty(4, 4, 1, kEmptyDepth);
  out.require(depth_accuracy(empty, empty, 0.05) == 1.0, "both empty");

  Raster<double> a(4, 6, 1), b(4, 6, 1), c(4, 6, 1), d(4, 6, 1);
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < 4; ++q) {
      a(r, q, 0) = 1.0;
      b(r, q + 2, 0) = 0.7;
    }
  c(3, 5, 0) = 1;
  d(0, 0, 0) = 1;
  out.require(mask_iou(a, b) == 8.0 / 24.0, "offset squares");
  out.require(mask_iou(a, a) == 1.0, "self IoU");
  out.require(mask_iou(c, d) == 0.0, "disjoint");
  out.require(mask_iou(Raster<double>(4, 6, 1), Raster<double>(4, 6, 1)) == 1.0, "both empty masks");

  std::mt19937_64 rng(1006);
  std::uniform_real_distribution<double> u(0.5, 2.0), coin(0, 1);
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Raster<double> p(16, 16, 1, kEmptyDepth), g(16, 16, 1, kEmptyDepth);
    for (size_t i = 0; i < p.data.size(); ++i) {
      if (coin(rng) < 0.7) p.data[i] = u(rng);
      if (coin(rng) < 0.7) g.data[i] = u(rng);
    }
    double prev = -1;
    for (double t = 0; t <= 2.0; t += 0.05) {
      const double acc = depth_accuracy(p, g, t);
      violations += acc < prev;
      prev = acc;
    }
  }
  out.require(violations == 0, std::to_string(violations) + " monotonicity violations");
  out.detail << (out.pass ? "" : " | ") << "9 hand cases exact, 200 random pairs monotone over 41 thresholds";
  return out;
}

// Pipeline

Outcome end_to_end() {
  Outcome out;
  const auto t0 = Clock::now();
  PipelineConfig cfg;
  auto provider = make_provider(cfg);
  const auto run = run_pipeline(cfg, *provider);
  const double t = seconds_since(t0);
  const double scene = run.refined_metrics.scene_accuracy[0], inst = run.refined_metrics.instance_accuracy[0];
  const double coarse_inst = run.coarse_metrics.instance_accuracy[0];
  const auto views = cfg.evaluation_cameras().size();
  out.require(views == 80, std::to_string(views) + " evaluation views");
  out.require(scene >= 0.85, "scene accuracy " + fmt(scene));
  out.require(inst >= 0.80, "instance accuracy " + fmt(inst));
  out.require(inst >= coarse_inst, "refined instance accuracy " + fmt(inst) + " below coarse " + fmt(coarse_inst));
  out.require(t < 1800, "runtime " + fmt(t) + " s");
  out.detail << (out.pass ? "" : " | ") << "at 0.05 m over " << views << " views: scene " << fmt(scene) << ", instance " << fmt(inst)
             << " (coarse scene " << fmt(run.coarse_metrics.scene_accuracy[0]) << ", instance " << fmt(coarse_inst) << "), "
             << fmt(t, 4) << " s";
  return out;
}

/// Four objects packed around the workspace center with small gaps.
PipelineConfig adjacent_config() {
  PipelineConfig cfg;
  cfg.objects = 4;
  cfg.scene_seed = 1;
  cfg.cluster_radius = 0.08;
  cfg.min_gap = 0.005;
  return cfg;
}

Outcome ablation() {
  Outcome out;
  auto with_sifr = adjacent_config();
  auto without = with_sifr;
  without.train.lambda_sifr = 0.0;
  int empty_channels = 0;
  auto labeling = [&](const PipelineConfig& cfg) {
    const auto truth = synth_scene(cfg.synth_spec(), cfg.scene_seed);
    const auto views = synth_views(truth, cfg);
    for (const auto& v : views)
      for (int k = 0; k < v.masks.channels; ++k) {
        bool any = false;
        for (size_t p = 0; p < v.masks.pixels() && !any; ++p) any = v.masks.pixel(p)[k] != 0;
        empty_channels += !any;
      }
    const auto init = visual_hull_init(views, truth.scene.workspace, cfg, splitmix64(cfg.train.seed ^ 0x1A17ull));
    auto provider = make_provider(cfg);
    const CoarseInputs in{views, provider.get(), cfg.guidance_poses(), {}};
    const auto coarse = coarse_train(init, in, cfg.train);
    const auto seg = segment(coarse.scene, views, cfg, truth.labels());
    return labeling_accuracy(coarse.scene, seg.instances.sets, truth);
  };
  const double a = labeling(with_sifr), b = labeling(without);
  out.require(empty_channels == 0, std::to_string(empty_channels) + " empty mask channels");
  out.require(a >= b, "labeling with SIFR " + fmt(a) + " below " + fmt(b));
  out.detail << (out.pass ? "" : " | ") << "4 adjacent objects: labeling accuracy with SIFR " << fmt(a) << ", without " << fmt(b);
  return out;
}

// Planning

/// Replays a declutter plan and recounts collisions of every pick in the world it runs in.
int declutter_violations(const WorldModel& world, const DeclutterPlan& plan) {
  int bad = 0;
  WorldModel w = world;
  for (const auto& s : plan.steps) {
    bad += !w.feasibility(s.grasp.pose);
    const auto approach = approach_trajectory(s.grasp.pose);
    bad += collision_count(w, approach).count != 0;
    const ConvexHull held = attach(*w.objects[static_cast<size_t>(s.instance)], s.grasp.pose);
    const int ex[] = {s.instance};
    bad += collision_count(w, retrieval_of(approach), &held, ex).count != 0;
    w.remove(s.instance);
  }
  return bad;
}

/// Replays a retrieval plan: every pick is collision-free where it happens, every placed object is clear of
/// the others, and a reported graspability of 0 comes with a collision-free final grasp.
int retrieval_violations(const WorldModel& world, const RetrievalPlan& plan) {
  int bad = 0;
  for (size_t a = 0; a < plan.actions.size(); ++a) {
    const auto& act = plan.actions[a];
    const auto w = replay(world, plan, static_cast<int>(a));
    bad += !w.feasibility(act.grasp.pose);
    const auto approach = approach_trajectory(act.grasp.pose);
    bad += collision_count(w, approach).count != 0;
    const ConvexHull held = attach(*w.objects[static_cast<size_t>(act.instance)], act.grasp.pose);
    const int ex[] = {act.instance};
    bad += collision_count(w, retrieval_of(approach), &held, ex).count != 0;
    const auto after = replay(world, plan, static_cast<int>(a) + 1);
    const auto& placed = *after.objects[static_cast<size_t>(act.instance)];
    for (size_t o = 0; o < after.objects.size(); ++o)
      if (static_cast<int>(o) != act.instance && after.objects[o]) bad += !sat_separated(placed, *after.objects[o]);
    for (const auto& region : after.shelf) bad += !sat_separated(placed, region);
  }
  if (plan.graspability == 0) {
    const auto w = replay(world, plan);
    bad += grasp_collisions(w, plan.final_grasp, plan.target).count != 0;
  }
  return bad;
}

Outcome planning_suite() {
  Outcome out;
  int declutter_bad = 0, retrieval_bad = 0, plans = 0, picks = 0, actions = 0, declutters = 0, cleared = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto scene = make_shelf_scene(seed);
    PlannerParams params;
    params.seed = seed;
    bool all_have_grasps = true;
    for (const auto& g : scene.grasps) all_have_grasps &= !g.empty();
    if (all_have_grasps) {
      const auto d = plan_declutter(scene.world, scene.grasps, params);
      declutter_bad += declutter_violations(scene.world, d);
      picks += static_cast<int>(d.steps.size());
      cleared += d.success;
      ++declutters;
      ++plans;
    }
    for (int target = 0; target < static_cast<int>(scene.objects.size()); ++target) {
      const auto r = plan_retrieval(scene.world, scene.grasps, target, 3, scene.placements, params);
      retrieval_bad += retrieval_violations(scene.world, r);
      actions += static_cast<int>(r.actions.size());
      ++plans;
    }
  }
  const auto blocking = make_blocking_scene();
  const auto p = plan_retrieval(blocking.world, blocking.grasps, 1, 5, blocking.placements);
  out.require(declutter_bad == 0, std::to_string(declutter_bad) + " declutter replay violations");
  out.require(retrieval_bad == 0, std::to_string(retrieval_bad) + " retrieval replay violations");
  out.require(p.graspability == 0, "blocking scene graspability " + std::to_string(p.graspability));
  out.require(p.actions.size() == 1, "blocking scene used " + std::to_string(p.actions.size()) + " actions");
  out.require(retrieval_violations(blocking.world, p) == 0, "blocking plan replay");
  out.detail << (out.pass ? "" : " | ") << plans << " plans on 10 shelf scenes replay collision-free (" << declutters << " declutter, "
             << cleared << " cleared, " << picks << " picks; " << actions << " pick-place actions); blocking scene: " << p.actions.size() << " action, graspability "
             << p.graspability;
  return out;
}

// Schedules

Outcome schedule_probes() {
  Outcome out;
  const TrainConfig cfg;
  const int coarse_iters[] = {0, 99, 100, 250, 399, 400, 499, 500, 999};
  const double render[] = {500, 500, 500, 750, 500 + 500.0 * 299 / 300, 1000, 1000, 1000, 1000};
  for (size_t i = 0; i < std::size(coarse_iters); ++i) {
    const int it = coarse_iters[i];
    const auto w = coarse_weights(cfg, it);
    out.require(std::abs(w.render - render[i]) <= 1e-12 * render[i], "coarse lambda_render at " + std::to_string(it));
    out.require(w.guidance == 0.1, "coarse lambda_guidance at " + std::to_string(it));
    out.require(w.cc == (it < 500 ? 0.0 : 0.001), "lambda_CC at " + std::to_string(it));
    out.require(w.sifr == (it < 500 ? 0.0 : 0.0001), "lambda_SIFR at " + std::to_string(it));
  }
  for (int it : {0, 99, 100, 500, 1999}) {
    const auto w = refine_weights(cfg, it);
    out.require(w.instance_render == 1000.0, "lambda_instance_render at " + std::to_string(it));
    out.require(w.instance_sds == (it < 100 ? 0.1 : 0.01), "lambda_instance_SDS at " + std::to_string(it));
  }
  std::vector<int> fired;
  for (int it = 0; it < cfg.refine_iters; ++it)
    if (outlier_removal_due(cfg, it)) fired.push_back(it);
  out.require(fired == std::vector<int>{500, 1000, 1500}, "outlier removal iterations");
  out.detail << (out.pass ? "" : " | ") << "9 coarse and 5 refine probes exact, outlier removal at 500/1000/1500";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_suite", gradient_suite},       {"field_invariants", field_invariants}, {"metric_construction", metric_construction},
      {"segmentation_oracles", segmentation_oracles}, {"fusion_oracle", fusion_oracle},   {"metric_functions", metric_functions},
      {"end_to_end_mock", end_to_end},          {"ablation_sifr", ablation},            {"planning_suite", planning_suite},
      {"schedule_probes", schedule_probes},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "threw: " << e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
