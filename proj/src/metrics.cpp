#include "desksplat/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>

namespace desksplat {

std::vector<int> greedy_match(const std::vector<std::vector<double>>& iou, int num_gt) {
  struct Pair {
    double iou;
    int p, g;
  };
  std::vector<Pair> pairs;
  for (int p = 0; p < static_cast<int>(iou.size()); ++p)
    for (int g = 0; g < num_gt; ++g)
      if (iou[static_cast<size_t>(p)][static_cast<size_t>(g)] > 0) pairs.push_back({iou[static_cast<size_t>(p)][static_cast<size_t>(g)], p, g});
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<int> match(iou.size(), -1);
  std::vector<char> taken(static_cast<size_t>(num_gt), 0);
  for (const auto& pr : pairs) {
    if (match[static_cast<size_t>(pr.p)] >= 0 || taken[static_cast<size_t>(pr.g)]) continue;
    match[static_cast<size_t>(pr.p)] = pr.g;
    taken[static_cast<size_t>(pr.g)] = 1;
  }
  return match;
}

namespace {

RenderOptions depth_only(RenderOptions opt) {
  opt.color = false;
  opt.depth = true;
  opt.feature = false;
  opt.instance_sets = {};
  return opt;
}

}  // namespace

std::vector<double> scene_depth_accuracy(const SceneD& pred, const SceneD& truth, std::span<const CameraD> cameras,
                                         const std::vector<double>& thresholds, const RenderOptions& base, size_t* pixels) {
  const auto opt = depth_only(base);
  std::vector<double> acc(thresholds.size(), 0.0);
  if (cameras.empty()) return acc;
  for (const auto& cam : cameras) {
    const auto p = render(pred, cam, opt), g = render(truth, cam, opt);
    for (size_t t = 0; t < thresholds.size(); ++t) {
      const auto c = depth_accuracy_count(p.depth, g.depth, thresholds[t]);
      acc[t] += c.accuracy();
      if (pixels && t == 0) *pixels += c.evaluated;
    }
  }
  for (auto& a : acc) a /= double(cameras.size());
  return acc;
}

DepthMetricsReport instance_depth_accuracy(const SceneD& pred, const std::vector<std::vector<int>>& sets, const GroundTruthScene& truth,
                                           std::span<const CameraD> cameras, const std::vector<double>& thresholds,
                                           const RenderOptions& base) {
  const auto opt = depth_only(base);
  const auto gt_sets = truth.instance_sets();
  const int np = static_cast<int>(sets.size()), ng = static_cast<int>(gt_sets.size());
  DepthMetricsReport rep;
  rep.thresholds = thresholds;
  rep.views = static_cast<int>(cameras.size());

  // Per view renders of every instance alone; alpha serves as the soft mask.
  std::vector<std::vector<RenderBuffers<double>>> pr(static_cast<size_t>(np)), gr(static_cast<size_t>(ng));
  for (int p = 0; p < np; ++p)
    for (const auto& cam : cameras) pr[static_cast<size_t>(p)].push_back(render_instance(pred, sets[static_cast<size_t>(p)], cam, opt));
  for (int g = 0; g < ng; ++g)
    for (const auto& cam : cameras) gr[static_cast<size_t>(g)].push_back(render_instance(truth.scene, gt_sets[static_cast<size_t>(g)], cam, opt));

  std::vector<std::vector<double>> iou(static_cast<size_t>(np), std::vector<double>(static_cast<size_t>(ng), 0.0));
  for (int p = 0; p < np; ++p)
    for (int g = 0; g < ng; ++g) {
      size_t inter = 0, uni = 0;
      for (size_t v = 0; v < cameras.size(); ++v) {
        const auto& a = pr[static_cast<size_t>(p)][v].alpha;
        const auto& b = gr[static_cast<size_t>(g)][v].alpha;
        for (size_t i = 0; i < a.data.size(); ++i) {
          const bool x = a.data[i] >= 0.5, y = b.data[i] >= 0.5;
          inter += x && y;
          uni += x || y;
        }
      }
      iou[static_cast<size_t>(p)][static_cast<size_t>(g)] = uni == 0 ? 0.0 : double(inter) / double(uni);
    }
  const auto match = greedy_match(iou, ng);

  for (int g = 0; g < ng; ++g) {
    InstanceScore s;
    s.gt_instance = g;
    s.accuracy.assign(thresholds.size(), 0.0);
    const auto it = std::find(match.begin(), match.end(), g);
    if (it != match.end() && !cameras.empty()) {
      s.predicted = static_cast<int>(it - match.begin());
      s.iou = iou[static_cast<size_t>(s.predicted)][static_cast<size_t>(g)];
      for (size_t v = 0; v < cameras.size(); ++v)
        for (size_t t = 0; t < thresholds.size(); ++t) {
          const auto c = depth_accuracy_count(pr[static_cast<size_t>(s.predicted)][v].depth, gr[static_cast<size_t>(g)][v].depth, thresholds[t]);
          s.accuracy[t] += c.accuracy() / double(cameras.size());
          if (t == 0) rep.instance_pixels += c.evaluated;
        }
    }
    rep.instances.push_back(s);
  }
  for (int p = 0; p < np; ++p)
    if (match[static_cast<size_t>(p)] < 0) {
      rep.unmatched_predictions.push_back(p);
      InstanceScore s;
      s.predicted = p;
      s.accuracy.assign(thresholds.size(), 0.0);
      rep.instances.push_back(s);
    }
  rep.instance_accuracy.assign(thresholds.size(), 0.0);
  for (const auto& s : rep.instances)
    for (size_t t = 0; t < thresholds.size(); ++t) rep.instance_accuracy[t] += s.accuracy[t] / double(rep.instances.size());
  return rep;
}

DepthMetricsReport evaluate(const SceneD& pred, const std::vector<std::vector<int>>& sets, const GroundTruthScene& truth,
                            std::span<const CameraD> cameras, const std::vector<double>& thresholds, const RenderOptions& opt) {
  auto rep = instance_depth_accuracy(pred, sets, truth, cameras, thresholds, opt);
  rep.scene_accuracy = scene_depth_accuracy(pred, truth.scene, cameras, thresholds, opt, &rep.scene_pixels);
  return rep;
}

std::string to_json(const DepthMetricsReport& r) {
  nlohmann::json j;
  j["threshold_units"] = "meters (absolute)";
  j["thresholds"] = r.thresholds;
  j["views"] = r.views;
  j["scene_depth_accuracy"] = r.scene_accuracy;
  j["instance_depth_accuracy"] = r.instance_accuracy;
  j["scene_pixels"] = r.scene_pixels;
  j["instance_pixels"] = r.instance_pixels;
  j["unmatched_predictions"] = r.unmatched_predictions;
  for (const auto& s : r.instances)
    j["instances"].push_back({{"gt_instance", s.gt_instance}, {"predicted", s.predicted}, {"mask_iou", s.iou}, {"depth_accuracy", s.accuracy}});
  return j.dump(2);
}

}  // namespace desksplat
