#include "desksplat/image_io.hpp"
#include "desksplat/pipeline.hpp"
#include "desksplat/scene_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace desksplat;

namespace {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<uint64_t> seed;
  std::string provider;
  std::optional<int> view;
  std::string out = "run";
  std::string stage = "refined";
  std::string mode;
  std::string world;
};

struct Context {
  PipelineConfig cfg;
  KeyValueConfig kv;  // canonical form of cfg
  fs::path out;
  std::string stage;
  std::vector<fs::path> artifacts;

  std::string hash() const { return hex64(kv.hash()); }

  fs::path input(const std::string& name) const {
    const fs::path p = out / name;
    if (!fs::exists(p)) throw InputError("missing input " + p.string());
    return p;
  }

  void add(const fs::path& p) {
    nlohmann::json meta{{"stage", stage}, {"config_hash", hash()}, {"seed", cfg.train.seed}};
    std::ofstream(p.string() + ".meta.json") << meta.dump() << "\n";
    artifacts.push_back(p);
  }

  void write_manifest(const nlohmann::json& extra = nlohmann::json::object()) const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& a : artifacts) {
      const auto bytes = read_file_bytes(a);
      list.push_back({{"path", fs::relative(a, out).generic_string()}, {"fnv1a64", hex64(fnv1a64(std::string(bytes.begin(), bytes.end())))}});
    }
    nlohmann::json m{{"stage", stage},
                     {"config_hash", hash()},
                     {"seed", cfg.train.seed},
                     {"scene_seed", cfg.scene_seed},
                     {"provider", cfg.provider},
                     {"artifacts", list},
                     {"config", kv.canonical()}};
    m.update(extra);
    std::ofstream(out / ("manifest_" + stage + ".json")) << m.dump(2) << "\n";
  }
};

Context make_context(const Options& opt, const std::string& stage) {
  KeyValueConfig kv = opt.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(opt.config);
  if (opt.seed) kv.set("seed", std::to_string(*opt.seed));
  if (!opt.provider.empty()) kv.set("provider", opt.provider);
  if (opt.view) kv.set("representative_view", std::to_string(*opt.view));
  Context ctx;
  ctx.cfg = PipelineConfig::from(kv);
  const auto unused = kv.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown config key '" + *unused.begin() + "'");
  ctx.cfg.store(ctx.kv);
  ctx.out = opt.out;
  ctx.stage = stage;
  fs::create_directories(ctx.out);
  return ctx;
}

SceneD load_stage_scene(const Context& ctx, const std::string& name) {
  SceneD s = load_scene<double>(ctx.input(name));
  s.workspace = ctx.cfg.synth_spec().workspace;
  return s;
}

void save_stage_scene(Context& ctx, const SceneD& scene, const std::string& name) {
  save_scene(scene, ctx.out / name);
  ctx.add(ctx.out / name);
}

void save_history(Context& ctx, const std::vector<HistoryRow>& rows, const std::string& name) {
  write_history_csv((ctx.out / name).string(), rows);
  ctx.add(ctx.out / name);
}

std::vector<PosedImage> stage_views(const Context& ctx, const std::string& dir) {
  ctx.input(dir + "/cameras.json");
  return load_views(ctx.out / dir);
}

void cmd_synth(const Options& opt) {
  auto ctx = make_context(opt, "synth");
  const auto truth = synth_scene(ctx.cfg.synth_spec(), ctx.cfg.scene_seed);
  const auto views = synth_views(truth, ctx.cfg);
  save_views(ctx.out / "views", views);
  for (const auto& e : fs::directory_iterator(ctx.out / "views"))
    if (e.path().extension() != ".json" || e.path().filename() == "cameras.json") ctx.artifacts.push_back(e.path());
  std::sort(ctx.artifacts.begin(), ctx.artifacts.end());
  save_labels(ctx.out / "labels.txt", truth.labels());
  ctx.add(ctx.out / "labels.txt");
  save_stage_scene(ctx, truth.scene, "truth.dgs");
  std::ofstream(ctx.out / "config.cfg") << ctx.kv.canonical();
  ctx.add(ctx.out / "config.cfg");
  ctx.write_manifest({{"views", views.size()}, {"instances", truth.num_instances()}});
  std::cout << "synth: " << views.size() << " views, " << truth.num_instances() << " instances -> " << ctx.out.string() << "\n";
}

void cmd_coarse(const Options& opt) {
  auto ctx = make_context(opt, "coarse");
  const auto views = stage_views(ctx, "views");
  if (views.size() < 2) throw ScaleAmbiguityError();
  const auto init = visual_hull_init(views, ctx.cfg.synth_spec().workspace, ctx.cfg, splitmix64(ctx.cfg.train.seed ^ 0x1A17ull));
  auto provider = make_provider(ctx.cfg);
  CoarseInputs in{views, provider.get(), ctx.cfg.guidance_poses(), {}};
  const auto res = coarse_train(init, in, ctx.cfg.train);
  save_stage_scene(ctx, res.scene, "coarse.dgs");
  save_history(ctx, res.history, "coarse_history.csv");
  ctx.write_manifest({{"initial_gaussians", init.size()}});
  std::cout << "coarse: " << res.scene.size() << " gaussians, " << res.history.size() << " iterations\n";
}

void cmd_segment(const Options& opt) {
  auto ctx = make_context(opt, "segment");
  const auto scene = load_stage_scene(ctx, "coarse.dgs");
  const auto views = stage_views(ctx, "views");
  const auto labels = fs::exists(ctx.out / "labels.txt") ? load_labels(ctx.out / "labels.txt") : std::vector<std::string>{};
  const auto seg = segment(scene, views, ctx.cfg, labels);
  save_instances((ctx.out / "instances.dgis").string(), seg.instances, scene.feature_dim);
  ctx.add(ctx.out / "instances.dgis");
  save_views(ctx.out / "matched_views", seg.views);
  ctx.artifacts.push_back(ctx.out / "matched_views" / "cameras.json");
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& m : seg.matches) matches.push_back({{"perm", m.perm}, {"tie", m.tie}});
  std::vector<size_t> sizes;
  for (const auto& s : seg.instances.sets) sizes.push_back(s.size());
  ctx.write_manifest({{"matches", matches}, {"instance_sizes", sizes}});
  std::cout << "segment: " << seg.instances.size() << " instances\n";
}

void cmd_refine(const Options& opt) {
  auto ctx = make_context(opt, "refine");
  const auto scene = load_stage_scene(ctx, "coarse.dgs");
  const auto views = stage_views(ctx, "matched_views");
  auto instances = load_instances(ctx.input("instances.dgis").string());
  auto provider = make_provider(ctx.cfg);
  RefineInputs in{views, instances, provider.get(), provider.get(), ctx.cfg.guidance_poses(), {}};
  const auto res = refine_train(scene, in, ctx.cfg.train);
  save_stage_scene(ctx, res.scene, "refined.dgs");
  save_instances((ctx.out / "refined.dgis").string(), res.instances, res.scene.feature_dim);
  ctx.add(ctx.out / "refined.dgis");
  save_history(ctx, res.history, "refine_history.csv");
  ctx.write_manifest({{"outlier_iterations", res.outlier_iterations}});
  std::cout << "refine: " << res.history.size() << " iterations\n";
}

std::pair<SceneD, InstanceSet> stage_result(const Context& ctx, const std::string& stage) {
  if (stage == "coarse") return {load_stage_scene(ctx, "coarse.dgs"), load_instances(ctx.input("instances.dgis").string())};
  if (stage == "refined") return {load_stage_scene(ctx, "refined.dgs"), load_instances(ctx.input("refined.dgis").string())};
  throw ConfigError("--stage must be coarse or refined");
}

void cmd_fuse(const Options& opt) {
  auto ctx = make_context(opt, "fuse");
  const auto [scene, inst] = stage_result(ctx, opt.stage);
  fs::create_directories(ctx.out / "meshes");
  nlohmann::json counts = nlohmann::json::array();
  for (int k = 0; k < inst.size(); ++k) {
    const auto mesh = fuse_instance(scene, inst.sets[static_cast<size_t>(k)], ctx.cfg);
    const fs::path p = ctx.out / "meshes" / ("instance_" + std::to_string(k) + ".obj");
    write_obj(mesh, p);
    ctx.add(p);
    counts.push_back({{"instance", k}, {"vertices", mesh.vertices.size()}, {"faces", mesh.faces.size()}});
  }
  ctx.write_manifest({{"meshes", counts}, {"source", opt.stage}});
  std::cout << "fuse: " << inst.size() << " meshes\n";
}

void cmd_metrics(const Options& opt) {
  auto ctx = make_context(opt, "metrics");
  const auto [scene, inst] = stage_result(ctx, opt.stage);
  const auto truth = synth_scene(ctx.cfg.synth_spec(), ctx.cfg.scene_seed);
  const auto report = evaluate(scene, inst.sets, truth, ctx.cfg.evaluation_cameras(), ctx.cfg.thresholds);
  auto j = nlohmann::json::parse(to_json(report));
  j["config_hash"] = ctx.hash();
  j["source"] = opt.stage;
  std::ofstream(ctx.out / "metrics.json") << j.dump(2) << "\n";
  ctx.add(ctx.out / "metrics.json");
  std::ofstream csv(ctx.out / "metrics.csv");
  csv << "# config_hash=" << ctx.hash() << " units=meters\n";
  csv << "threshold,scene_accuracy,instance_accuracy\n";
  for (size_t t = 0; t < report.thresholds.size(); ++t)
    csv << report.thresholds[t] << ',' << report.scene_accuracy[t] << ',' << report.instance_accuracy[t] << '\n';
  csv.close();
  ctx.add(ctx.out / "metrics.csv");
  ctx.write_manifest();
  std::cout << "metrics: scene " << report.scene_accuracy[0] << " instance " << report.instance_accuracy[0] << " at "
            << report.thresholds[0] << " m\n";
}

Eigen::Vector3d vec3(const KeyValueConfig& kv, const std::string& key, const Eigen::Vector3d& fallback) {
  if (!kv.has(key)) return fallback;
  std::istringstream in(kv.get_string(key, ""));
  Eigen::Vector3d v;
  char sep;
  if (!(in >> v.x() >> sep >> v.y() >> sep >> v.z())) throw ConfigError(key + " must be x,y,z");
  return v;
}

std::vector<std::string> list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string tok; std::getline(in, tok, ',');)
    if (!tok.empty()) out.push_back(tok);
  return out;
}

void cmd_plan(const Options& opt) {
  auto ctx = make_context(opt, "plan_" + opt.mode);
  const KeyValueConfig world_kv = opt.world.empty() ? KeyValueConfig{} : KeyValueConfig::load(opt.world);
  ShelfSceneSpec spec;
  spec.score_threshold = world_kv.get_double("score_threshold", spec.score_threshold);
  spec.sampler.samples = static_cast<int>(world_kv.get_int("grasp_samples", spec.sampler.samples));
  spec.sampler.seed = static_cast<uint64_t>(world_kv.get_int("grasp_seed", 0));
  PlannerParams params;
  params.approach_distance = world_kv.get_double("approach_distance", params.approach_distance);
  params.waypoint_spacing = world_kv.get_double("waypoint_spacing", params.waypoint_spacing);
  params.max_grasps = static_cast<int>(world_kv.get_int("max_grasps", params.max_grasps));
  params.retrieval_samples = static_cast<int>(world_kv.get_int("retrieval_samples", params.retrieval_samples));
  params.seed = static_cast<uint64_t>(world_kv.get_int("planner_seed", static_cast<long long>(ctx.cfg.train.seed)));

  const std::string source = world_kv.get_string("scene", "meshes");
  ShelfScene scene;
  if (source == "shelf_random") {
    scene = make_shelf_scene(static_cast<uint64_t>(world_kv.get_int("shelf_seed", 0)), spec);
  } else if (source == "shelf_blocking") {
    scene = make_blocking_scene(spec);
  } else if (source == "meshes") {
    std::vector<fs::path> paths;
    if (world_kv.has("meshes")) {
      for (const auto& p : list(world_kv.get_string("meshes", ""))) paths.emplace_back(p);
    } else {
      for (int k = 0; fs::exists(ctx.out / "meshes" / ("instance_" + std::to_string(k) + ".obj")); ++k)
        paths.push_back(ctx.out / "meshes" / ("instance_" + std::to_string(k) + ".obj"));
    }
    if (paths.empty()) throw InputError("no object meshes: run fuse first or set meshes in the world file");
    scene.world.feasibility.approach_axis = vec3(world_kv, "approach_axis", Eigen::Vector3d(0, 0, -1));
    const std::string shelf = world_kv.get_string("shelf", "none");
    if (shelf == "default") {
      scene.world.shelf = shelf_regions(spec.shelf);
    } else if (shelf != "none") {
      if (!fs::exists(shelf)) throw InputError("missing shelf mesh " + shelf);
      for (const auto& g : read_obj_groups(shelf)) scene.world.shelf.push_back(convex_hull(g));
    }
    AntipodalParams sampler = spec.sampler;
    sampler.approach_hint = scene.world.feasibility.approach_axis;
    for (size_t k = 0; k < paths.size(); ++k) {
      if (!fs::exists(paths[k])) throw InputError("missing mesh " + paths[k].string());
      const auto mesh = read_obj(paths[k]);
      if (mesh.empty()) throw InputError("mesh " + paths[k].string() + " is empty");
      scene.world.objects.emplace_back(convex_hull(mesh));
      sampler.seed = spec.sampler.seed + k;
      scene.grasps.push_back(sample_grasps(mesh, antipodal_sampler(sampler), spec.score_threshold, static_cast<int>(k)));
      scene.meshes.push_back(mesh);
    }
    scene.placements = side_placements(spec.shelf);
  } else {
    throw ConfigError("scene must be meshes, shelf_random or shelf_blocking");
  }
  if (world_kv.has("approach_axis")) scene.world.feasibility.approach_axis = vec3(world_kv, "approach_axis", {});
  scene.world.feasibility.cone_deg = world_kv.get_double("cone_deg", scene.world.feasibility.cone_deg);
  if (world_kv.has("gripper")) {
    scene.world.gripper.clear();
    for (const auto& p : list(world_kv.get_string("gripper", ""))) {
      if (!fs::exists(p)) throw InputError("missing gripper part " + p);
      scene.world.gripper.push_back(convex_hull(read_obj(p)));
    }
  }
  if (world_kv.has("placement_origin")) {
    const Eigen::Vector3d o = vec3(world_kv, "placement_origin", {});
    const int nx = static_cast<int>(world_kv.get_int("placement_nx", 3)), ny = static_cast<int>(world_kv.get_int("placement_ny", 3));
    const double step = world_kv.get_double("placement_step", 0.15);
    scene.placements.clear();
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) scene.placements.push_back(o + Eigen::Vector3d(i * step, j * step, 0));
  }
  if (world_kv.has("d_far")) {
    const double d_far = world_kv.get_double("d_far", 0.7);
    fs::create_directories(ctx.out / "grasp_depth");
    const auto k = ctx.cfg.intrinsics();
    for (size_t i = 0; i < scene.meshes.size(); ++i) {
      const Eigen::Vector3d c = scene.meshes[i].bounds().center();
      const auto cam = look_at<double>(k, ctx.cfg.width, ctx.cfg.height, c - 0.5 * scene.world.feasibility.approach_axis.normalized(), c);
      const auto depth = adapt_depth_for_grasp(scene.meshes[i], cam, d_far).depth.cast<float>();
      const fs::path p = ctx.out / "grasp_depth" / ("instance_" + std::to_string(i) + ".raw");
      write_raw(depth, p);
      ctx.add(p);
    }
  }
  const int target = static_cast<int>(world_kv.get_int("target", 0));
  const int budget = static_cast<int>(world_kv.get_int("budget", 5));
  const auto unused = world_kv.unused_keys();
  if (!unused.empty()) throw ConfigError("unknown world key '" + *unused.begin() + "'");

  nlohmann::json header{{"type", "header"}, {"config_hash", ctx.hash()}, {"world_hash", hex64(world_kv.hash())}, {"seed", params.seed},
                        {"instances", scene.world.objects.size()}};
  std::string body;
  nlohmann::json summary;
  if (opt.mode == "declutter") {
    for (size_t i = 0; i < scene.grasps.size(); ++i)
      if (scene.grasps[i].empty()) throw std::runtime_error("instance " + std::to_string(i) + " has no grasp candidate above the score threshold");
    const auto plan = plan_declutter(scene.world, scene.grasps, params);
    body = to_json_lines(plan);
    summary = {{"success", plan.success}, {"steps", plan.steps.size()}};
    std::cout << "plan declutter: " << plan.steps.size() << " picks" << (plan.success ? "" : ", stuck") << "\n";
  } else {
    if (target < 0 || target >= static_cast<int>(scene.world.objects.size())) throw ConfigError("target out of range");
    const auto plan = plan_retrieval(scene.world, scene.grasps, target, budget, scene.placements, params);
    body = to_json_lines(plan);
    summary = {{"graspability", plan.graspability}, {"actions", plan.actions.size()}, {"exhausted", plan.exhausted}};
    std::cout << "plan retrieve: " << plan.actions.size() << " actions, graspability " << plan.graspability << "\n";
  }
  const fs::path p = ctx.out / ("plan_" + opt.mode + ".jsonl");
  std::ofstream(p) << header.dump() << "\n" << body;
  ctx.add(p);
  ctx.write_manifest({{"plan", summary}, {"world", world_kv.canonical()}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desksplat: sparse-view instance-aware Gaussian reconstruction and grasp planning"};
  Options opt;
  app.add_option("--config", opt.config, "key = value configuration file");
  app.add_option("--seed", opt.seed, "training seed (overrides the config)");
  app.add_option("--provider", opt.provider, "guidance provider: mock or bridge:ADDR");
  app.add_option("--view", opt.view, "representative mask view for segmentation");
  app.add_option("--out", opt.out, "run directory")->capture_default_str();
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "render input views and masks of the synthetic scene");
  auto* coarse = app.add_subcommand("coarse", "coarse reconstruction from the input views");
  auto* seg = app.add_subcommand("segment", "extract instances and match masks");
  auto* refine = app.add_subcommand("refine", "instance-aware refinement");
  auto* fuse = app.add_subcommand("fuse", "TSDF meshes per instance");
  fuse->add_option("--stage", opt.stage, "coarse or refined")->capture_default_str();
  auto* metrics = app.add_subcommand("metrics", "depth accuracy against the ground truth");
  metrics->add_option("--stage", opt.stage, "coarse or refined")->capture_default_str();
  auto* plan = app.add_subcommand("plan", "grasp planning");
  plan->add_option("mode", opt.mode, "declutter or retrieve")->required()->check(CLI::IsMember({"declutter", "retrieve"}));
  plan->add_option("--world", opt.world, "world description file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (synth->parsed()) cmd_synth(opt);
    if (coarse->parsed()) cmd_coarse(opt);
    if (seg->parsed()) cmd_segment(opt);
    if (refine->parsed()) cmd_refine(opt);
    if (fuse->parsed()) cmd_fuse(opt);
    if (metrics->parsed()) cmd_metrics(opt);
    if (plan->parsed()) cmd_plan(opt);
  } catch (const ConfigError& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return 2;
  } catch (const ScaleAmbiguityError& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return 3;
  }
  return 0;
}
