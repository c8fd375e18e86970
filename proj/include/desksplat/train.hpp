#pragma once

#include "desksplat/config.hpp"
#include "desksplat/field.hpp"
#include "desksplat/losses.hpp"
#include "desksplat/schedule.hpp"
#include "desksplat/segment.hpp"

#include <functional>
#include <optional>

namespace desksplat {

struct LearningRates {
  double position = 2e-4;
  double color = 1e-2;
  double feature = 1e-2;
  double opacity = 5e-2;
};

struct TrainConfig {
  int coarse_iters = 1000;
  int refine_iters = 2000;

  Schedule lambda_render = Schedule::linear({{0, 500}, {100, 500}, {400, 1000}});
  Schedule lambda_guidance = 0.1;
  Schedule lambda_cc = Schedule::step({{0, 0.0}, {500, 0.001}});
  Schedule lambda_sifr = Schedule::step({{0, 0.0}, {500, 0.0001}});

  Schedule refine_lambda_render = 1000.0;
  Schedule refine_lambda_guidance = 0.1;
  Schedule lambda_instance_render = 1000.0;
  Schedule lambda_instance_sds = Schedule::step({{0, 0.1}, {100, 0.01}});

  LearningRates lr;
  int outlier_period = 500;
  double outlier_eps = 0.04;
  int outlier_min_pts = 4;

  double psi_default = 0.1;
  std::vector<double> psi;  // per instance; psi_default where missing

  MetricParams metric;
  /// Squared Mahalanobis radius of kernel support during SIFR evaluation.
  double sifr_cutoff_m2 = 36.0;

  uint32_t t_max = 980;
  uint32_t t_min = 20;
  uint64_t seed = 0;
  /// Guidance renders (and a matching mock oracle) use a background drawn from each query's noise seed.
  bool random_background = true;

  std::vector<double> temperatures(int num_instances) const;
  void validate() const;

  static TrainConfig from(const KeyValueConfig& kv);
  /// Writes every field back as key/value pairs (used for manifests and hashing).
  void store(KeyValueConfig& kv) const;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int iteration, const std::string& what)
      : std::runtime_error("training diverged at iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

class ScaleAmbiguityError : public std::invalid_argument {
 public:
  ScaleAmbiguityError() : std::invalid_argument("scale ambiguity requires ≥ 2 views") {}
};

/// Adam over the position, color, feature and opacity groups. After each step colors and opacities
/// are clamped to their valid ranges and features renormalized.
class Adam {
 public:
  Adam(size_t n, int feature_dim, LearningRates lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15);
  void step(SceneD& scene, const RenderGrads<double>& grads);
  int steps() const { return t_; }

 private:
  LearningRates lr_;
  double b1_, b2_, eps_;
  int t_ = 0;
  MatX3<double> m_mean_, v_mean_, m_color_, v_color_;
  MatX<double> m_feat_, v_feat_;
  VecX<double> m_opa_, v_opa_;
};

struct HistoryRow {
  int iter = 0;
  uint32_t timestep = 0;
  double total = 0;
  double render = 0;
  double guidance_residual = 0;
  double contrastive = 0;
  double sifr = 0;
  double instance_render = 0;
  double instance_guidance_residual = 0;
  double lambda_render = 0, lambda_guidance = 0, lambda_cc = 0, lambda_sifr = 0, lambda_instance_render = 0, lambda_instance_sds = 0;
  bool outlier_removal = false;
};

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows);

/// Coarse-stage weights at an iteration.
struct CoarseWeights {
  double render, guidance, cc, sifr;
};
CoarseWeights coarse_weights(const TrainConfig& cfg, int iter);

struct RefineWeights {
  double render, guidance, instance_render, instance_sds;
};
RefineWeights refine_weights(const TrainConfig& cfg, int iter);

/// True when outlier removal runs at this refine iteration.
bool outlier_removal_due(const TrainConfig& cfg, int iter);

/// Per-iteration noise seed derived from the run seed.
uint64_t iteration_seed(uint64_t seed, int stage, int iter, int slot = 0);

using ProgressFn = std::function<void(const HistoryRow&)>;

struct CoarseInputs {
  std::span<const PosedImage> views;  // images + per-view instance masks
  GuidanceProvider* provider = nullptr;
  PoseDistribution guidance_poses;
  RenderOptions render;
};

struct TrainResult {
  SceneD scene;
  std::vector<HistoryRow> history;
};

TrainResult coarse_train(SceneD scene, const CoarseInputs& in, const TrainConfig& cfg, const ProgressFn& progress = {});

struct RefineInputs {
  std::span<const PosedImage> views;  // masks matched so that channel k is instance k
  InstanceSet instances;
  GuidanceProvider* view_provider = nullptr;
  GuidanceProvider* text_provider = nullptr;
  PoseDistribution guidance_poses;
  RenderOptions render;
};

struct RefineResult {
  SceneD scene;
  InstanceSet instances;
  std::vector<HistoryRow> history;
  std::vector<int> outlier_iterations;
};

/// Pose distribution for one instance: a hemisphere centred on the bounding box of its Gaussians whose
/// radius keeps the whole box in frame.
PoseDistribution instance_pose_distribution(const SceneD& scene, const std::vector<int>& set, const PoseDistribution& base,
                                            const Intrinsics<double>& k, int width, int height);

RefineResult refine_train(SceneD scene, const RefineInputs& in, const TrainConfig& cfg, const ProgressFn& progress = {});

}  // namespace desksplat
