#include "desksplat/pipeline.hpp"

#include "desksplat/bridge.hpp"

#include <numeric>
#include <random>
#include <sstream>

namespace desksplat {

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::vector<double> split(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::istringstream t(tok);
    double v;
    if (!(t >> v)) throw ConfigError("'" + text + "' is not a comma-separated number list");
    out.push_back(v);
  }
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  if (objects < 1) throw ConfigError("objects must be at least 1");
  if (gaussians_per_object < 1 || feature_dim < 1) throw ConfigError("gaussians_per_object and feature_dim must be positive");
  if (width < 8 || height < 8) throw ConfigError("image resolution must be at least 8x8");
  if (!(fov_deg > 0 && fov_deg < 170)) throw ConfigError("fov_deg must lie in (0, 170)");
  if (!(view_radius > 0) || !(eval_radius > 0)) throw ConfigError("camera radii must be positive");
  if (view_azimuths_deg.empty()) throw ConfigError("at least one view azimuth is required");
  if (init_points < 1 || !(init_std_min > 0) || init_std_max < init_std_min) throw ConfigError("invalid initialization parameters");
  if (!(init_opacity > 0 && init_opacity < 1)) throw ConfigError("init_opacity must lie in (0, 1)");
  if (!(init_color_tolerance >= 0)) throw ConfigError("init_color_tolerance must be non-negative");
  if (representative_view < 0 || representative_view >= static_cast<int>(view_azimuths_deg.size()))
    throw ConfigError("representative_view out of range");
  if (!(delta > -1 && delta <= 1)) throw ConfigError("delta must lie in (-1, 1]");
  if (eval_elevation_steps < 1 || eval_azimuth_steps < 1 || fuse_elevation_steps < 1 || fuse_azimuth_steps < 1)
    throw ConfigError("pose grids need at least one step");
  if (thresholds.empty()) throw ConfigError("at least one depth threshold is required");
  if (!(voxel > 0)) throw ConfigError("voxel must be positive");
  if (provider != "mock" && provider.rfind("bridge:", 0) != 0) throw ConfigError("provider must be mock or bridge:ADDR");
  train.validate();
}

PipelineConfig PipelineConfig::from(const KeyValueConfig& kv) {
  PipelineConfig c;
  c.objects = static_cast<int>(kv.get_int("objects", c.objects));
  c.scene_seed = static_cast<uint64_t>(kv.get_int("scene_seed", static_cast<long long>(c.scene_seed)));
  c.gaussians_per_object = static_cast<int>(kv.get_int("gaussians_per_object", c.gaussians_per_object));
  c.feature_dim = static_cast<int>(kv.get_int("feature_dim", c.feature_dim));
  c.cluster_radius = kv.get_double("cluster_radius", c.cluster_radius);
  c.min_gap = kv.get_double("min_gap", c.min_gap);
  c.width = static_cast<int>(kv.get_int("width", c.width));
  c.height = static_cast<int>(kv.get_int("height", c.height));
  c.fov_deg = kv.get_double("fov_deg", c.fov_deg);
  c.view_radius = kv.get_double("view_radius", c.view_radius);
  c.view_elevation_deg = kv.get_double("view_elevation_deg", c.view_elevation_deg);
  if (kv.has("view_azimuths_deg")) c.view_azimuths_deg = split(kv.get_string("view_azimuths_deg", ""));
  c.permute_masks = kv.get_bool("permute_masks", c.permute_masks);
  c.init_points = static_cast<int>(kv.get_int("init_points", c.init_points));
  c.init_std_min = kv.get_double("init_std_min", c.init_std_min);
  c.init_std_max = kv.get_double("init_std_max", c.init_std_max);
  c.init_opacity = kv.get_double("init_opacity", c.init_opacity);
  c.init_color_tolerance = kv.get_double("init_color_tolerance", c.init_color_tolerance);
  c.representative_view = static_cast<int>(kv.get_int("representative_view", c.representative_view));
  c.delta = kv.get_double("delta", c.delta);
  c.guidance_elevation_min_deg = kv.get_double("guidance_elevation_min_deg", c.guidance_elevation_min_deg);
  c.guidance_elevation_max_deg = kv.get_double("guidance_elevation_max_deg", c.guidance_elevation_max_deg);
  c.eval_elevation_steps = static_cast<int>(kv.get_int("eval_elevation_steps", c.eval_elevation_steps));
  c.eval_azimuth_steps = static_cast<int>(kv.get_int("eval_azimuth_steps", c.eval_azimuth_steps));
  c.eval_radius = kv.get_double("eval_radius", c.eval_radius);
  if (kv.has("thresholds")) c.thresholds = split(kv.get_string("thresholds", ""));
  c.voxel = kv.get_double("voxel", c.voxel);
  c.fuse_elevation_steps = static_cast<int>(kv.get_int("fuse_elevation_steps", c.fuse_elevation_steps));
  c.fuse_azimuth_steps = static_cast<int>(kv.get_int("fuse_azimuth_steps", c.fuse_azimuth_steps));
  c.provider = kv.get_string("provider", c.provider);
  c.train = TrainConfig::from(kv);
  c.validate();
  return c;
}

void PipelineConfig::store(KeyValueConfig& kv) const {
  kv.set("objects", std::to_string(objects));
  kv.set("scene_seed", std::to_string(scene_seed));
  kv.set("gaussians_per_object", std::to_string(gaussians_per_object));
  kv.set("feature_dim", std::to_string(feature_dim));
  kv.set("cluster_radius", fmt(cluster_radius));
  kv.set("min_gap", fmt(min_gap));
  kv.set("width", std::to_string(width));
  kv.set("height", std::to_string(height));
  kv.set("fov_deg", fmt(fov_deg));
  kv.set("view_radius", fmt(view_radius));
  kv.set("view_elevation_deg", fmt(view_elevation_deg));
  kv.set("view_azimuths_deg", join(view_azimuths_deg));
  kv.set("permute_masks", permute_masks ? "true" : "false");
  kv.set("init_points", std::to_string(init_points));
  kv.set("init_std_min", fmt(init_std_min));
  kv.set("init_std_max", fmt(init_std_max));
  kv.set("init_opacity", fmt(init_opacity));
  kv.set("init_color_tolerance", fmt(init_color_tolerance));
  kv.set("representative_view", std::to_string(representative_view));
  kv.set("delta", fmt(delta));
  kv.set("guidance_elevation_min_deg", fmt(guidance_elevation_min_deg));
  kv.set("guidance_elevation_max_deg", fmt(guidance_elevation_max_deg));
  kv.set("eval_elevation_steps", std::to_string(eval_elevation_steps));
  kv.set("eval_azimuth_steps", std::to_string(eval_azimuth_steps));
  kv.set("eval_radius", fmt(eval_radius));
  kv.set("thresholds", join(thresholds));
  kv.set("voxel", fmt(voxel));
  kv.set("fuse_elevation_steps", std::to_string(fuse_elevation_steps));
  kv.set("fuse_azimuth_steps", std::to_string(fuse_azimuth_steps));
  kv.set("provider", provider);
  train.store(kv);
}

uint64_t PipelineConfig::hash() const {
  KeyValueConfig kv;
  store(kv);
  return kv.hash();
}

SynthSpec PipelineConfig::synth_spec() const {
  SynthSpec s = default_synth_spec(objects);
  s.gaussians_per_object = gaussians_per_object;
  s.feature_dim = feature_dim;
  s.cluster_radius = cluster_radius;
  s.min_gap = min_gap;
  return s;
}

Intrinsics<double> PipelineConfig::intrinsics() const { return intrinsics_from_fov(width, height, fov_deg); }

Eigen::Vector3d PipelineConfig::look_target() const {
  const Aabb ws = synth_spec().workspace;
  return Eigen::Vector3d(ws.center().x(), ws.center().y(), ws.min.z() + 0.04);
}

std::vector<CameraD> PipelineConfig::input_cameras() const {
  PoseDistribution d;
  d.center = look_target();
  d.radius = view_radius;
  std::vector<CameraD> out;
  for (double az : view_azimuths_deg) out.push_back(look_at<double>(intrinsics(), width, height, hemisphere_point(d, view_elevation_deg, az), d.center));
  return out;
}

PoseDistribution PipelineConfig::guidance_poses() const {
  PoseDistribution d;
  d.center = look_target();
  d.radius = view_radius;
  d.elevation_min_deg = guidance_elevation_min_deg;
  d.elevation_max_deg = guidance_elevation_max_deg;
  return d;
}

std::vector<CameraD> PipelineConfig::evaluation_cameras() const {
  PoseDistribution d = guidance_poses();
  d.radius = eval_radius;
  d.elevation_steps = eval_elevation_steps;
  d.azimuth_steps = eval_azimuth_steps;
  return sample_hemisphere_poses(d, intrinsics(), width, height);
}

MaskRaster instance_masks(const SceneD& scene, const std::vector<std::vector<int>>& sets, const CameraD& cam, double threshold) {
  RenderOptions opt;
  opt.color = false;
  opt.depth = false;
  opt.instance_sets = sets;
  const auto buf = render(scene, cam, opt);
  MaskRaster m(cam.height, cam.width, static_cast<int>(sets.size()));
  for (size_t p = 0; p < m.pixels(); ++p) {
    const double* c = buf.instance_mask.pixel(p);
    const int best = static_cast<int>(std::max_element(c, c + sets.size()) - c);
    if (c[best] > threshold) m.pixel(p)[best] = 1;
  }
  return m;
}

std::vector<PosedImage> synth_views(const GroundTruthScene& truth, const PipelineConfig& cfg) {
  const auto sets = truth.instance_sets();
  std::mt19937_64 rng(splitmix64(cfg.scene_seed ^ 0x5EED3A5Cull));
  std::vector<PosedImage> out;
  const auto cams = cfg.input_cameras();
  for (size_t v = 0; v < cams.size(); ++v) {
    RenderOptions opt;
    const auto buf = render(truth.scene, cams[v], opt);
    MaskRaster masks = instance_masks(truth.scene, sets, cams[v]);
    if (v > 0 && cfg.permute_masks) {
      std::vector<int> perm(sets.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      masks = permute_channels(masks, perm);
    }
    out.push_back({cams[v], buf.color.cast<float>(), std::move(masks)});
  }
  return out;
}

SceneD visual_hull_init(std::span<const PosedImage> views, const Aabb& bounds, const PipelineConfig& cfg, uint64_t seed) {
  if (views.empty()) throw std::invalid_argument("visual hull needs at least one view");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  SceneD scene;
  scene.feature_dim = cfg.feature_dim;
  scene.workspace = bounds;
  const long max_attempts = 1000L * cfg.init_points;
  for (long attempt = 0; attempt < max_attempts && static_cast<int>(scene.size()) < cfg.init_points; ++attempt) {
    const Eigen::Vector3d p = bounds.min + bounds.extent().cwiseProduct(Eigen::Vector3d(u(rng), u(rng), u(rng)));
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1.0), hi = Eigen::Vector3d::Zero();
    bool inside = true;
    for (const auto& v : views) {
      const Eigen::Vector3d pc = v.camera.to_camera(p);
      const long col = std::lround(v.camera.intrinsics.fx * pc.x() / pc.z() + v.camera.intrinsics.cx);
      const long row = std::lround(v.camera.intrinsics.fy * pc.y() / pc.z() + v.camera.intrinsics.cy);
      if (pc.z() <= 0 || col < 0 || row < 0 || col >= v.camera.width || row >= v.camera.height) {
        inside = false;
        break;
      }
      const size_t px = static_cast<size_t>(row) * static_cast<size_t>(v.camera.width) + static_cast<size_t>(col);
      const uint8_t* m = v.masks.pixel(px);
      if (std::none_of(m, m + v.masks.channels, [](uint8_t b) { return b != 0; })) {
        inside = false;
        break;
      }
      const Eigen::Vector3d c(v.image.pixel(px)[0], v.image.pixel(px)[1], v.image.pixel(px)[2]);
      color += c;
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
    if (!inside || (cfg.init_color_tolerance > 0 && (hi - lo).maxCoeff() > cfg.init_color_tolerance)) continue;
    Gaussian<double> g;
    g.mean = p;
    g.covariance = isotropic_covariance(cfg.init_std_min + (cfg.init_std_max - cfg.init_std_min) * u(rng));
    g.opacity = cfg.init_opacity;
    g.color = (color / double(views.size())).cwiseMax(0.0).cwiseMin(1.0);
    g.feature.resize(cfg.feature_dim);
    for (int k = 0; k < cfg.feature_dim; ++k) g.feature[k] = nd(rng);
    g.feature.normalize();
    scene.gaussians.push_back(g);
  }
  if (scene.empty()) throw std::runtime_error("no point of the bounds projects inside every view's masks");
  return scene;
}

std::unique_ptr<GuidanceProvider> make_provider(const PipelineConfig& cfg) {
  const auto spec = parse_provider_spec(cfg.provider);
  if (spec.bridge) return std::make_unique<BridgeProvider>(spec.address);
  return std::make_unique<MockOracleProvider>(synth_scene(cfg.synth_spec(), cfg.scene_seed), RenderOptions{}, cfg.train.random_background);
}

Segmentation segment(const SceneD& scene, std::span<const PosedImage> views, const PipelineConfig& cfg, const std::vector<std::string>& labels) {
  if (views.empty()) throw SegmentationError("segmentation needs at least one view");
  if (cfg.representative_view >= static_cast<int>(views.size())) throw SegmentationError("representative view out of range");
  Segmentation out;
  const auto reps = representative_features(scene, views[static_cast<size_t>(cfg.representative_view)]);
  for (size_t k = 0; k < reps.size(); ++k) {
    out.instances.representatives.push_back(reps[k]);
    out.instances.sets.push_back(extract_instance(scene, reps[k], cfg.delta));
    out.instances.labels.push_back(k < labels.size() ? labels[k] : "instance " + std::to_string(k));
  }
  out.matches = match_masks(scene, views, reps);
  for (size_t v = 0; v < views.size(); ++v) {
    PosedImage pv = views[v];
    pv.masks = permute_channels(views[v].masks, out.matches[v].perm);
    out.views.push_back(std::move(pv));
  }
  return out;
}

TriangleMesh fuse_instance(const SceneD& scene, const std::vector<int>& set, const PipelineConfig& cfg) {
  if (set.empty()) return {};
  PoseDistribution base;
  base.elevation_min_deg = -30.0;
  base.elevation_max_deg = 75.0;
  base.elevation_steps = cfg.fuse_elevation_steps;
  base.azimuth_steps = cfg.fuse_azimuth_steps;
  const auto k = cfg.intrinsics();
  const auto dist = instance_pose_distribution(scene, set, base, k, cfg.width, cfg.height);
  Aabb box = Aabb::empty();
  for (int i : set) {
    const auto& g = scene.gaussians.at(static_cast<size_t>(i));
    const Eigen::Vector3d r = 3.0 * g.covariance.diagonal().cwiseSqrt();
    box.expand(g.mean - r);
    box.expand(g.mean + r);
  }
  auto vol = TsdfVolume<double>::covering(box, cfg.voxel);
  RenderOptions opt;
  opt.color = false;
  for (const auto& cam : sample_hemisphere_poses(dist, k, cfg.width, cfg.height)) tsdf_integrate(vol, render_instance(scene, set, cam, opt).depth, cam);
  return extract_mesh(vol);
}

std::vector<int> nearest_instance_labels(const SceneD& scene, const GroundTruthScene& truth, double max_distance) {
  std::vector<int> out(scene.size(), -1);
  for (size_t i = 0; i < scene.size(); ++i) {
    double best = max_distance;
    for (int k = 0; k < truth.num_instances(); ++k) {
      const auto& prim = truth.primitives[static_cast<size_t>(k)];
      const double d = prim.contains(scene.gaussians[i].mean) ? 0.0 : prim.surface_distance(scene.gaussians[i].mean);
      if (d <= best) best = d, out[i] = k;
    }
  }
  return out;
}

double labeling_accuracy(const SceneD& scene, const std::vector<std::vector<int>>& sets, const GroundTruthScene& truth, double max_distance) {
  const auto gt = nearest_instance_labels(scene, truth, max_distance);
  std::vector<int> pred(scene.size(), -1);
  for (size_t k = 0; k < sets.size(); ++k)
    for (int i : sets[k]) pred[static_cast<size_t>(i)] = pred[static_cast<size_t>(i)] == -1 ? static_cast<int>(k) : -2;
  size_t labeled = 0, correct = 0;
  for (size_t i = 0; i < scene.size(); ++i) {
    if (gt[i] < 0) continue;
    ++labeled;
    correct += pred[i] == gt[i];
  }
  return labeled == 0 ? 1.0 : double(correct) / double(labeled);
}

PipelineRun run_pipeline(const PipelineConfig& cfg, GuidanceProvider& provider, const StageLog& log) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  PipelineRun run;
  run.truth = synth_scene(cfg.synth_spec(), cfg.scene_seed);
  run.views = synth_views(run.truth, cfg);
  run.initial = visual_hull_init(run.views, run.truth.scene.workspace, cfg, splitmix64(cfg.train.seed ^ 0x1A17ull));
  say("init: " + std::to_string(run.initial.size()) + " gaussians");

  CoarseInputs coarse{run.views, &provider, cfg.guidance_poses(), {}};
  run.coarse = coarse_train(run.initial, coarse, cfg.train);
  say("coarse done");
  run.segmentation = segment(run.coarse.scene, run.views, cfg, run.truth.labels());
  const auto cams = cfg.evaluation_cameras();
  run.coarse_metrics = evaluate(run.coarse.scene, run.segmentation.instances.sets, run.truth, cams, cfg.thresholds);
  say("coarse metrics: scene " + std::to_string(run.coarse_metrics.scene_accuracy[0]) + " instance " +
      std::to_string(run.coarse_metrics.instance_accuracy[0]));

  RefineInputs refine{run.segmentation.views, run.segmentation.instances, &provider, &provider, cfg.guidance_poses(), {}};
  run.refined = refine_train(run.coarse.scene, refine, cfg.train);
  run.refined_metrics = evaluate(run.refined.scene, run.refined.instances.sets, run.truth, cams, cfg.thresholds);
  say("refined metrics: scene " + std::to_string(run.refined_metrics.scene_accuracy[0]) + " instance " +
      std::to_string(run.refined_metrics.instance_accuracy[0]));
  return run;
}

}  // namespace desksplat

#include "desksplat/image_io.hpp"

#include <json.hpp>

#include <fstream>

namespace desksplat {

void save_views(const std::filesystem::path& dir, std::span<const PosedImage> views) {
  std::filesystem::create_directories(dir);
  nlohmann::json list = nlohmann::json::array();
  for (size_t v = 0; v < views.size(); ++v) {
    const auto& pv = views[v];
    const std::string stem = "view_" + std::to_string(v);
    write_png(pv.image, dir / (stem + ".png"));
    nlohmann::json masks = nlohmann::json::array();
    for (int k = 0; k < pv.masks.channels; ++k) {
      Image m(pv.masks.height, pv.masks.width, 1);
      for (size_t p = 0; p < m.pixels(); ++p) m.data[p] = pv.masks.pixel(p)[k] ? 1.0f : 0.0f;
      const std::string name = stem + "_mask_" + std::to_string(k) + ".png";
      write_png(m, dir / name);
      masks.push_back({{"channel", k}, {"file", name}});
    }
    const auto& c = pv.camera;
    nlohmann::json rot = nlohmann::json::array(), trans = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
      trans.push_back(c.translation[r]);
      for (int q = 0; q < 3; ++q) rot.push_back(c.rotation(r, q));
    }
    list.push_back({{"image", stem + ".png"},
                    {"width", c.width},
                    {"height", c.height},
                    {"fx", c.intrinsics.fx},
                    {"fy", c.intrinsics.fy},
                    {"cx", c.intrinsics.cx},
                    {"cy", c.intrinsics.cy},
                    {"rotation", rot},
                    {"translation", trans},
                    {"masks", masks}});
  }
  std::ofstream(dir / "cameras.json") << nlohmann::json{{"views", list}}.dump(2) << "\n";
}

std::vector<PosedImage> load_views(const std::filesystem::path& dir) {
  std::ifstream in(dir / "cameras.json");
  if (!in) throw std::runtime_error("missing " + (dir / "cameras.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("cannot parse " + (dir / "cameras.json").string() + ": " + e.what());
  }
  std::vector<PosedImage> out;
  for (const auto& v : j.at("views")) {
    PosedImage pv;
    auto& c = pv.camera;
    c.width = v.at("width");
    c.height = v.at("height");
    c.intrinsics = {v.at("fx"), v.at("fy"), v.at("cx"), v.at("cy")};
    for (int r = 0; r < 3; ++r) {
      c.translation[r] = v.at("translation")[static_cast<size_t>(r)];
      for (int q = 0; q < 3; ++q) c.rotation(r, q) = v.at("rotation")[static_cast<size_t>(3 * r + q)];
    }
    pv.image = read_png(dir / v.at("image").get<std::string>());
    if (pv.image.channels != 3 || pv.image.height != c.height || pv.image.width != c.width)
      throw std::runtime_error("view image " + v.at("image").get<std::string>() + " does not match its camera");
    const auto& masks = v.at("masks");
    pv.masks = MaskRaster(c.height, c.width, static_cast<int>(masks.size()));
    for (const auto& m : masks) {
      const int k = m.at("channel");
      if (k < 0 || k >= pv.masks.channels) throw std::runtime_error("mask channel index out of range");
      const Image img = read_png(dir / m.at("file").get<std::string>());
      if (img.height != c.height || img.width != c.width) throw std::runtime_error("mask " + m.at("file").get<std::string>() + " has the wrong size");
      for (size_t p = 0; p < pv.masks.pixels(); ++p) pv.masks.pixel(p)[k] = img.pixel(p)[0] >= 0.5f;
    }
    out.push_back(std::move(pv));
  }
  return out;
}

void save_labels(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  std::ofstream out(path);
  for (const auto& l : labels) out << l << "\n";
}

std::vector<std::string> load_labels(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace desksplat
