#include "desksplat/train.hpp"

#include <fstream>
#include <random>
#include <sstream>

namespace desksplat {

std::vector<double> TrainConfig::temperatures(int num_instances) const {
  std::vector<double> out(static_cast<size_t>(num_instances), psi_default);
  for (size_t k = 0; k < out.size() && k < psi.size(); ++k) out[k] = psi[k];
  return out;
}

void TrainConfig::validate() const {
  if (coarse_iters < 0 || refine_iters < 0) throw ConfigError("iteration counts must be non-negative");
  if (outlier_period < 1) throw ConfigError("outlier_period must be at least 1");
  if (!(psi_default > 0)) throw ConfigError("psi must be positive");
  for (double p : psi)
    if (!(p > 0)) throw ConfigError("psi must be positive");
  if (!(lr.position >= 0 && lr.color >= 0 && lr.feature >= 0 && lr.opacity >= 0)) throw ConfigError("learning rates must be non-negative");
  if (!(outlier_eps > 0) || outlier_min_pts < 1) throw ConfigError("outlier_eps must be positive and outlier_min_pts at least 1");
  if (t_min < 1 || t_max > kMaxTimestep || t_min > t_max) throw ConfigError("timesteps must satisfy 1 <= t_min <= t_max <= 1000");
  if (!(metric.d > 0) || !(metric.density_floor > 0)) throw ConfigError("metric parameters must be positive");
}

namespace {

std::vector<double> parse_list(const std::string& text) {
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

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

TrainConfig TrainConfig::from(const KeyValueConfig& kv) {
  TrainConfig c;
  auto sched = [&](const char* key, Schedule& s) {
    if (kv.has(key)) s = Schedule::parse(kv.get_string(key, ""));
  };
  c.coarse_iters = static_cast<int>(kv.get_int("coarse_iters", c.coarse_iters));
  c.refine_iters = static_cast<int>(kv.get_int("refine_iters", c.refine_iters));
  sched("lambda_render", c.lambda_render);
  sched("lambda_guidance", c.lambda_guidance);
  sched("lambda_cc", c.lambda_cc);
  sched("lambda_sifr", c.lambda_sifr);
  sched("refine_lambda_render", c.refine_lambda_render);
  sched("refine_lambda_guidance", c.refine_lambda_guidance);
  sched("lambda_instance_render", c.lambda_instance_render);
  sched("lambda_instance_sds", c.lambda_instance_sds);
  c.lr.position = kv.get_double("lr_position", c.lr.position);
  c.lr.color = kv.get_double("lr_color", c.lr.color);
  c.lr.feature = kv.get_double("lr_feature", c.lr.feature);
  c.lr.opacity = kv.get_double("lr_opacity", c.lr.opacity);
  c.outlier_period = static_cast<int>(kv.get_int("outlier_period", c.outlier_period));
  c.outlier_eps = kv.get_double("outlier_eps", c.outlier_eps);
  c.outlier_min_pts = static_cast<int>(kv.get_int("outlier_min_pts", c.outlier_min_pts));
  c.psi_default = kv.get_double("psi", c.psi_default);
  if (kv.has("psi_per_instance")) c.psi = parse_list(kv.get_string("psi_per_instance", ""));
  c.metric.d = kv.get_double("metric_d", c.metric.d);
  c.metric.density_floor = kv.get_double("density_floor", c.metric.density_floor);
  c.sifr_cutoff_m2 = kv.get_double("sifr_cutoff_m2", c.sifr_cutoff_m2);
  c.t_max = static_cast<uint32_t>(kv.get_int("t_max", c.t_max));
  c.t_min = static_cast<uint32_t>(kv.get_int("t_min", c.t_min));
  c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.random_background = kv.get_bool("guidance_random_background", c.random_background);
  c.validate();
  return c;
}

void TrainConfig::store(KeyValueConfig& kv) const {
  kv.set("coarse_iters", std::to_string(coarse_iters));
  kv.set("refine_iters", std::to_string(refine_iters));
  kv.set("lambda_render", lambda_render.to_string());
  kv.set("lambda_guidance", lambda_guidance.to_string());
  kv.set("lambda_cc", lambda_cc.to_string());
  kv.set("lambda_sifr", lambda_sifr.to_string());
  kv.set("refine_lambda_render", refine_lambda_render.to_string());
  kv.set("refine_lambda_guidance", refine_lambda_guidance.to_string());
  kv.set("lambda_instance_render", lambda_instance_render.to_string());
  kv.set("lambda_instance_sds", lambda_instance_sds.to_string());
  kv.set("lr_position", fmt(lr.position));
  kv.set("lr_color", fmt(lr.color));
  kv.set("lr_feature", fmt(lr.feature));
  kv.set("lr_opacity", fmt(lr.opacity));
  kv.set("outlier_period", std::to_string(outlier_period));
  kv.set("outlier_eps", fmt(outlier_eps));
  kv.set("outlier_min_pts", std::to_string(outlier_min_pts));
  kv.set("psi", fmt(psi_default));
  if (!psi.empty()) {
    std::string list;
    for (size_t i = 0; i < psi.size(); ++i) list += (i ? "," : "") + fmt(psi[i]);
    kv.set("psi_per_instance", list);
  }
  kv.set("metric_d", fmt(metric.d));
  kv.set("density_floor", fmt(metric.density_floor));
  kv.set("sifr_cutoff_m2", fmt(sifr_cutoff_m2));
  kv.set("t_max", std::to_string(t_max));
  kv.set("t_min", std::to_string(t_min));
  kv.set("seed", std::to_string(seed));
  kv.set("guidance_random_background", random_background ? "true" : "false");
}

Adam::Adam(size_t n, int dim, LearningRates lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  const auto rows = static_cast<Eigen::Index>(n);
  m_mean_ = v_mean_ = m_color_ = v_color_ = MatX3<double>::Zero(rows, 3);
  m_feat_ = v_feat_ = MatX<double>::Zero(rows, dim);
  m_opa_ = v_opa_ = VecX<double>::Zero(rows);
}

void Adam::step(SceneD& scene, const RenderGrads<double>& g) {
  if (g.size() != scene.size() || static_cast<size_t>(m_opa_.size()) != scene.size())
    throw std::invalid_argument("optimizer state, gradients and scene disagree on size");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
  auto update = [&](auto& m, auto& v, const auto& grad, double lr) {
    m = b1_ * m + (1.0 - b1_) * grad;
    v = b2_ * v + (1.0 - b2_) * grad.cwiseAbs2();
    return (-lr * (m / c1).array() / ((v / c2).array().sqrt() + eps_)).matrix().eval();
  };
  const MatX3<double> d_mean = update(m_mean_, v_mean_, g.mean, lr_.position);
  const MatX3<double> d_color = update(m_color_, v_color_, g.color, lr_.color);
  const MatX<double> d_feat = update(m_feat_, v_feat_, g.feature, lr_.feature);
  const VecX<double> d_opa = update(m_opa_, v_opa_, g.opacity, lr_.opacity);
  for (size_t i = 0; i < scene.size(); ++i) {
    auto& gs = scene.gaussians[i];
    const auto r = static_cast<Eigen::Index>(i);
    gs.mean += d_mean.row(r).transpose();
    gs.color = (gs.color + d_color.row(r).transpose()).cwiseMax(0.0).cwiseMin(1.0);
    gs.opacity = std::clamp(gs.opacity + d_opa[r], 1e-4, 0.999);
    gs.feature += d_feat.row(r).transpose();
    const double n = gs.feature.norm();
    if (n > 1e-12) gs.feature /= n;
  }
}

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(10);
  os << "iter,timestep,total,render,guidance_residual,contrastive,sifr,instance_render,instance_guidance_residual,"
        "lambda_render,lambda_guidance,lambda_cc,lambda_sifr,lambda_instance_render,lambda_instance_sds,outlier_removal\n";
  for (const auto& r : rows)
    os << r.iter << ',' << r.timestep << ',' << r.total << ',' << r.render << ',' << r.guidance_residual << ',' << r.contrastive << ','
       << r.sifr << ',' << r.instance_render << ',' << r.instance_guidance_residual << ',' << r.lambda_render << ',' << r.lambda_guidance
       << ',' << r.lambda_cc << ',' << r.lambda_sifr << ',' << r.lambda_instance_render << ',' << r.lambda_instance_sds << ','
       << (r.outlier_removal ? 1 : 0) << '\n';
}

CoarseWeights coarse_weights(const TrainConfig& cfg, int iter) {
  return {cfg.lambda_render(iter), cfg.lambda_guidance(iter), cfg.lambda_cc(iter), cfg.lambda_sifr(iter)};
}

RefineWeights refine_weights(const TrainConfig& cfg, int iter) {
  return {cfg.refine_lambda_render(iter), cfg.refine_lambda_guidance(iter), cfg.lambda_instance_render(iter), cfg.lambda_instance_sds(iter)};
}

bool outlier_removal_due(const TrainConfig& cfg, int iter) { return iter > 0 && iter % cfg.outlier_period == 0; }

uint64_t iteration_seed(uint64_t seed, int stage, int iter, int slot) {
  return splitmix64(splitmix64(splitmix64(seed) ^ static_cast<uint64_t>(stage)) ^ (static_cast<uint64_t>(iter) << 8 | static_cast<uint64_t>(slot)));
}

namespace {

void check_finite(int iter, double value, const RenderGrads<double>& grads) {
  if (!std::isfinite(value)) throw DivergenceError(iter, "loss is not finite");
  if (!grads.all_finite()) throw DivergenceError(iter, "gradient is not finite");
}

/// Renders color and (optionally) features once per view and accumulates the weighted render and
/// contrastive losses through a single backward pass. Feature gradients stay on features.
void photometric_terms(const SceneD& scene, std::span<const PosedImage> views, const RenderOptions& base, double w_render,
                       double w_cc, std::span<const double> psi, RenderGrads<double>& grads, HistoryRow& row) {
  RenderOptions opt = base;
  opt.color = true;
  opt.depth = false;
  opt.feature = w_cc > 0;
  opt.instance_sets = {};
  BackwardOptions bopt;
  bopt.route_feature_to_geometry = false;
  for (const auto& v : views) {
    const auto buf = render(scene, v.camera, opt);
    RenderUpstream<double> up;
    row.render += squared_error(buf.color, v.image, up.color, w_render);
    if (w_cc > 0) row.contrastive += contrastive_pixels(buf.feature, v.masks, psi, up.feature, w_cc);
    grads += render_backward(scene, v.camera, up, opt, bopt);
  }
}

GuidanceSample guidance_sample(const TrainConfig& cfg, const CameraD& pose, uint32_t t, uint64_t noise_seed) {
  GuidanceSample s{pose, t, noise_seed, std::nullopt};
  if (cfg.random_background) s.background = guidance_background(noise_seed);
  return s;
}

void sifr_term(const SceneD& scene, const TrainConfig& cfg, double w, RenderGrads<double>& grads, HistoryRow& row) {
  if (!(w > 0)) return;
  SifrOptions so;
  so.metric = cfg.metric;
  so.cutoff_m2 = cfg.sifr_cutoff_m2;
  const auto s = sifr_loss(scene, so);
  row.sifr = s.loss;
  grads.feature += w * s.feature_grad;
}

}  // namespace

TrainResult coarse_train(SceneD scene, const CoarseInputs& in, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (in.views.size() < 2) throw ScaleAmbiguityError();
  const int ns = validate_masks(in.views);
  require_nonempty_channels(in.views, ns);
  for (const auto& v : in.views) check_image_shape(v.image, v.camera);
  const auto psi = cfg.temperatures(ns);
  const auto& ref_cam = in.views.front().camera;

  Adam adam(scene.size(), scene.feature_dim, cfg.lr);
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0xC0A25Eull));
  TrainResult out;
  out.history.reserve(static_cast<size_t>(cfg.coarse_iters));
  for (int it = 0; it < cfg.coarse_iters; ++it) {
    const auto w = coarse_weights(cfg, it);
    HistoryRow row;
    row.iter = it;
    row.lambda_render = w.render;
    row.lambda_guidance = w.guidance;
    row.lambda_cc = w.cc;
    row.lambda_sifr = w.sifr;
    RenderGrads<double> grads(scene.size(), scene.feature_dim);

    photometric_terms(scene, in.views, in.render, w.render, w.cc, psi, grads, row);

    // The pose draw happens every iteration so the sequence does not depend on the weights.
    const CameraD pose = sample_random_pose(in.guidance_poses, ref_cam.intrinsics, ref_cam.width, ref_cam.height, rng);
    row.timestep = timestep_schedule(it, cfg.coarse_iters, cfg.t_max, cfg.t_min);
    if (w.guidance > 0 && in.provider)
      grads += view_guidance_grad(scene, *in.provider, in.views, guidance_sample(cfg, pose, row.timestep, iteration_seed(cfg.seed, 0, it)), w.guidance,
                                  in.render, &row.guidance_residual);

    sifr_term(scene, cfg, w.sifr, grads, row);
    row.total = w.render * row.render + w.cc * row.contrastive + w.sifr * row.sifr;
    check_finite(it, row.total, grads);
    adam.step(scene, grads);
    out.history.push_back(row);
    if (progress) progress(row);
  }
  out.scene = std::move(scene);
  return out;
}

PoseDistribution instance_pose_distribution(const SceneD& scene, const std::vector<int>& set, const PoseDistribution& base,
                                            const Intrinsics<double>& k, int width, int height) {
  Aabb box = Aabb::empty();
  for (int i : set) box.expand(scene.gaussians.at(static_cast<size_t>(i)).mean);
  PoseDistribution d = base;
  if (set.empty()) return d;
  d.center = box.center();
  d.radius = framing_radius(std::max(0.5 * box.extent().norm(), 1e-3), k, width, height);
  return d;
}

RefineResult refine_train(SceneD scene, const RefineInputs& in, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (in.views.size() < 2) throw ScaleAmbiguityError();
  const int ns = validate_masks(in.views);
  if (ns != in.instances.size())
    throw LossInputError(std::to_string(in.instances.size()) + " instance sets for " + std::to_string(ns) + " mask channels");
  if (in.text_provider && static_cast<int>(in.instances.labels.size()) != ns)
    throw LossInputError("text guidance needs one label per instance");
  for (const auto& v : in.views) check_image_shape(v.image, v.camera);
  const auto& ref_cam = in.views.front().camera;

  RefineResult out;
  out.instances = in.instances;
  Adam adam(scene.size(), scene.feature_dim, cfg.lr);
  std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x2EF1AEull));
  out.history.reserve(static_cast<size_t>(cfg.refine_iters));
  for (int it = 0; it < cfg.refine_iters; ++it) {
    HistoryRow row;
    row.iter = it;
    if (outlier_removal_due(cfg, it)) {
      for (auto& set : out.instances.sets) set = remove_outliers(scene, set, cfg.outlier_eps, cfg.outlier_min_pts);
      out.outlier_iterations.push_back(it);
      row.outlier_removal = true;
    }
    const auto w = refine_weights(cfg, it);
    row.lambda_render = w.render;
    row.lambda_guidance = w.guidance;
    row.lambda_instance_render = w.instance_render;
    row.lambda_instance_sds = w.instance_sds;
    row.timestep = timestep_schedule(it, cfg.refine_iters, cfg.t_max, cfg.t_min);
    RenderGrads<double> grads(scene.size(), scene.feature_dim);

    photometric_terms(scene, in.views, in.render, w.render, 0.0, {}, grads, row);

    const CameraD pose = sample_random_pose(in.guidance_poses, ref_cam.intrinsics, ref_cam.width, ref_cam.height, rng);
    if (w.guidance > 0 && in.view_provider)
      grads += view_guidance_grad(scene, *in.view_provider, in.views, guidance_sample(cfg, pose, row.timestep, iteration_seed(cfg.seed, 1, it)), w.guidance,
                                  in.render, &row.guidance_residual);

    if (w.instance_render > 0) {
      auto ir = instance_render_loss(scene, out.instances.sets, in.views, in.render);
      row.instance_render = ir.value;
      ir.grads *= w.instance_render;
      grads += ir.grads;
    }

    for (int k = 0; k < ns; ++k) {
      const auto& set = out.instances.sets[static_cast<size_t>(k)];
      const auto dist = instance_pose_distribution(scene, set, in.guidance_poses, ref_cam.intrinsics, ref_cam.width, ref_cam.height);
      const CameraD ipose = sample_random_pose(dist, ref_cam.intrinsics, ref_cam.width, ref_cam.height, rng);
      if (w.instance_sds > 0 && in.text_provider && !set.empty())
        grads += instance_guidance_grad(scene, set, *in.text_provider, in.instances.labels[static_cast<size_t>(k)],
                                        guidance_sample(cfg, ipose, row.timestep, iteration_seed(cfg.seed, 2, it, k + 1)), w.instance_sds, in.render,
                                        &row.instance_guidance_residual);
    }

    row.total = w.render * row.render + w.instance_render * row.instance_render;
    check_finite(it, row.total, grads);
    adam.step(scene, grads);
    out.history.push_back(row);
    if (progress) progress(row);
  }
  out.scene = std::move(scene);
  return out;
}

}  // namespace desksplat
