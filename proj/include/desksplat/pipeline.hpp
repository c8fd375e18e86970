#pragma once

#include "desksplat/fusion.hpp"
#include "desksplat/guidance.hpp"
#include "desksplat/metrics.hpp"
#include "desksplat/planning.hpp"
#include "desksplat/synth.hpp"
#include "desksplat/train.hpp"

#include <filesystem>
#include <memory>

namespace desksplat {

/// Everything one run needs besides its input artifacts.
struct PipelineConfig {
  // Synthetic scene.
  int objects = 2;
  uint64_t scene_seed = 7;
  int gaussians_per_object = 1500;
  int feature_dim = kDefaultFeatureDim;
  double cluster_radius = 0.0;
  double min_gap = 0.02;

  // Input views.
  int width = 128;
  int height = 128;
  double fov_deg = 20.0;
  double view_radius = 1.5;
  double view_elevation_deg = 30.0;
  std::vector<double> view_azimuths_deg{0.0, 90.0};
  bool permute_masks = true;

  // Initialization.
  int init_points = 4000;
  double init_std_min = 0.003;
  double init_std_max = 0.005;
  double init_opacity = 0.5;
  /// Points whose view colors spread more than this per channel are carved away (0 keeps them).
  double init_color_tolerance = 0.2;

  // Segmentation.
  int representative_view = 0;
  double delta = 0.9;

  // Guidance poses (hemisphere around the workspace center).
  double guidance_elevation_min_deg = 0.0;
  double guidance_elevation_max_deg = 60.0;

  // Evaluation and fusion.
  int eval_elevation_steps = 4;
  int eval_azimuth_steps = 20;
  double eval_radius = 1.5;
  std::vector<double> thresholds = default_depth_thresholds();
  double voxel = 0.004;
  int fuse_elevation_steps = 4;
  int fuse_azimuth_steps = 20;

  std::string provider = "mock";
  TrainConfig train;

  void validate() const;
  static PipelineConfig from(const KeyValueConfig& kv);
  void store(KeyValueConfig& kv) const;
  /// FNV-1a 64 of the canonical key/value text.
  uint64_t hash() const;

  SynthSpec synth_spec() const;
  Intrinsics<double> intrinsics() const;
  Eigen::Vector3d look_target() const;
  std::vector<CameraD> input_cameras() const;
  PoseDistribution guidance_poses() const;
  std::vector<CameraD> evaluation_cameras() const;
};

/// One mask channel per instance set: each pixel goes to the set with the largest coverage when that
/// coverage exceeds `threshold`.
MaskRaster instance_masks(const SceneD& scene, const std::vector<std::vector<int>>& sets, const CameraD& cam, double threshold = 0.5);

/// Input views of the ground truth. Views after the first get their mask channels shuffled (seeded),
/// as independent 2D segmentations would.
std::vector<PosedImage> synth_views(const GroundTruthScene& truth, const PipelineConfig& cfg);

/// Gaussians at random points of `bounds` whose projection lands inside a mask in every view with
/// consistent colors, colored by the mean of the view pixels they project to.
SceneD visual_hull_init(std::span<const PosedImage> views, const Aabb& bounds, const PipelineConfig& cfg, uint64_t seed);

/// "mock" builds the oracle from the configured synthetic scene; "bridge:ADDR" connects to a backend.
std::unique_ptr<GuidanceProvider> make_provider(const PipelineConfig& cfg);

struct Segmentation {
  InstanceSet instances;
  std::vector<PosedImage> views;  // channels reordered so that channel k is instance k
  std::vector<MaskMatch> matches;
};

/// Representatives from the chosen view, instance extraction, then mask matching on every view.
Segmentation segment(const SceneD& scene, std::span<const PosedImage> views, const PipelineConfig& cfg,
                     const std::vector<std::string>& labels = {});

/// Depth renders of each instance alone over a hemisphere framing it, fused into a TSDF mesh.
TriangleMesh fuse_instance(const SceneD& scene, const std::vector<int>& set, const PipelineConfig& cfg);

/// Ground-truth instance of each Gaussian: the primitive whose surface is nearest, or -1 when none is
/// within `max_distance`.
std::vector<int> nearest_instance_labels(const SceneD& scene, const GroundTruthScene& truth, double max_distance = 0.02);

/// Fraction of Gaussians (with a ground-truth label) whose extracted instance equals that label; a
/// Gaussian in no set or in several sets counts as wrong.
double labeling_accuracy(const SceneD& scene, const std::vector<std::vector<int>>& sets, const GroundTruthScene& truth,
                         double max_distance = 0.02);

struct PipelineRun {
  GroundTruthScene truth;
  std::vector<PosedImage> views;
  SceneD initial;
  TrainResult coarse;
  Segmentation segmentation;
  RefineResult refined;
  DepthMetricsReport coarse_metrics;
  DepthMetricsReport refined_metrics;
};

using StageLog = std::function<void(const std::string&)>;

/// The whole mock pipeline in memory: synth, init, coarse, segment, refine and both evaluations.
PipelineRun run_pipeline(const PipelineConfig& cfg, GuidanceProvider& provider, const StageLog& log = {});

}  // namespace desksplat

namespace desksplat {

/// On-disk view set: view_<v>.png, view_<v>_mask_<k>.png and cameras.json (intrinsics, pose and the
/// channel index of every mask file).
void save_views(const std::filesystem::path& dir, std::span<const PosedImage> views);
std::vector<PosedImage> load_views(const std::filesystem::path& dir);

void save_labels(const std::filesystem::path& path, const std::vector<std::string>& labels);
std::vector<std::string> load_labels(const std::filesystem::path& path);

}  // namespace desksplat
