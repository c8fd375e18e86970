#pragma once

#include "desksplat/render.hpp"
#include "desksplat/synth.hpp"

#include <map>

namespace desksplat {

class MetricShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DepthCount {
  size_t evaluated = 0;  // pixels occupied in prediction or ground truth
  size_t within = 0;
  double accuracy() const { return evaluated == 0 ? 1.0 : double(within) / double(evaluated); }
};

/// Pixels occupied in either image are evaluated; those occupied in only one count as failures.
template <typename Scalar>
DepthCount depth_accuracy_count(const Raster<Scalar>& pred, const Raster<Scalar>& gt, double threshold) {
  if (!pred.same_shape(gt) || pred.channels != 1) throw MetricShapeError("depth images differ in resolution");
  DepthCount out;
  for (size_t p = 0; p < pred.data.size(); ++p) {
    const bool po = !is_empty_depth(double(pred.data[p])), go = !is_empty_depth(double(gt.data[p]));
    if (!po && !go) continue;
    ++out.evaluated;
    if (po && go && std::abs(double(pred.data[p]) - double(gt.data[p])) <= threshold) ++out.within;
  }
  return out;
}

/// Fraction of evaluated pixels within `threshold` meters; 1.0 when nothing is occupied.
template <typename Scalar>
double depth_accuracy(const Raster<Scalar>& pred, const Raster<Scalar>& gt, double threshold) {
  return depth_accuracy_count(pred, gt, threshold).accuracy();
}

/// IoU of two soft masks binarized at 0.5; 1.0 when both are empty.
template <typename Scalar>
double mask_iou(const Raster<Scalar>& pred, const Raster<Scalar>& gt) {
  if (!pred.same_shape(gt)) throw MetricShapeError("masks differ in resolution");
  size_t inter = 0, uni = 0;
  for (size_t p = 0; p < pred.data.size(); ++p) {
    const bool a = pred.data[p] >= Scalar(0.5), b = gt.data[p] >= Scalar(0.5);
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline const std::vector<double>& default_depth_thresholds() {
  static const std::vector<double> t{0.05, 0.10, 0.20};
  return t;
}

struct InstanceScore {
  int gt_instance = -1;
  int predicted = -1;  // -1 when unmatched
  double iou = 0;
  std::vector<double> accuracy;  // per threshold
};

struct DepthMetricsReport {
  std::vector<double> thresholds;
  std::vector<double> scene_accuracy;     // per threshold, mean over views
  std::vector<double> instance_accuracy;  // per threshold, mean over instances
  std::vector<InstanceScore> instances;   // ground-truth instances, then unmatched predictions
  std::vector<int> unmatched_predictions;
  size_t scene_pixels = 0;
  size_t instance_pixels = 0;
  int views = 0;
};

/// Greedy max-IoU correspondence: pairs are taken in decreasing IoU (ties by lower indices) while both
/// sides are free and IoU > 0. iou(p, g) is indexed [predicted][ground truth].
std::vector<int> greedy_match(const std::vector<std::vector<double>>& iou, int num_gt);

/// Scene-level depth accuracy of `pred` against `truth` over `cameras` at each threshold.
std::vector<double> scene_depth_accuracy(const SceneD& pred, const SceneD& truth, std::span<const CameraD> cameras,
                                         const std::vector<double>& thresholds, const RenderOptions& opt = {},
                                         size_t* pixels = nullptr);

/// Renders each predicted instance alone and compares it with its matched ground-truth instance alone.
/// Ground-truth instances without a match, and predicted instances matching nothing, score 0.
DepthMetricsReport instance_depth_accuracy(const SceneD& pred, const std::vector<std::vector<int>>& instance_sets,
                                           const GroundTruthScene& truth, std::span<const CameraD> cameras,
                                           const std::vector<double>& thresholds = default_depth_thresholds(),
                                           const RenderOptions& opt = {});

/// Scene and instance metrics together.
DepthMetricsReport evaluate(const SceneD& pred, const std::vector<std::vector<int>>& instance_sets, const GroundTruthScene& truth,
                            std::span<const CameraD> cameras, const std::vector<double>& thresholds = default_depth_thresholds(),
                            const RenderOptions& opt = {});

std::string to_json(const DepthMetricsReport& report);

}  // namespace desksplat
