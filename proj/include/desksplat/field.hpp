#pragma once

#include "desksplat/scene.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

namespace desksplat {

struct MetricParams {
  double d = 100.0;
  double density_floor = 1e-4;
};

class DegenerateFieldError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DensityFloorError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename Scalar>
struct FieldEval {
  VecX<Scalar> value;     // F(x), unit norm
  MatX<Scalar> jacobian;  // D x 3
  Scalar density = 0;
  Vec3<Scalar> normal = Vec3<Scalar>::Zero();
};

template <typename Scalar>
struct Metric {
  Mat3<Scalar> frame;  // columns: normal, tangent, tangent
  Mat3<Scalar> g;
  Mat3<Scalar> g_inv;
};

/// Orthonormal frame whose first column is `normal`; the completion is Gram-Schmidt against
/// the coordinate axis least aligned with the normal.
template <typename Scalar>
Mat3<Scalar> complete_frame(const Vec3<Scalar>& normal) {
  Eigen::Index axis = 0;
  normal.cwiseAbs().minCoeff(&axis);
  Vec3<Scalar> e = Vec3<Scalar>::Unit(axis);
  Vec3<Scalar> t1 = (e - normal * normal.dot(e)).normalized();
  Vec3<Scalar> t2 = normal.cross(t1);
  Mat3<Scalar> r;
  r.col(0) = normal;
  r.col(1) = t1;
  r.col(2) = t2;
  return r;
}

/// G = R diag(d,1,1) R^T and its exact inverse R diag(1/d,1,1) R^T.
template <typename Scalar>
Metric<Scalar> metric_from_normal(const Vec3<Scalar>& normal, Scalar d) {
  Metric<Scalar> m;
  m.frame = complete_frame<Scalar>(normal);
  const Vec3<Scalar> lam(d, Scalar(1), Scalar(1));
  m.g = m.frame * lam.asDiagonal() * m.frame.transpose();
  m.g_inv = m.frame * lam.cwiseInverse().asDiagonal() * m.frame.transpose();
  return m;
}

/// Tr(J^T J H) for a D x 3 Jacobian and symmetric 3 x 3 H.
template <typename Derived, typename Scalar>
Scalar sifr_quadratic_form(const Eigen::MatrixBase<Derived>& jac, const Mat3<Scalar>& h) {
  return (jac.transpose() * jac * h).trace();
}

/// Kernel-weighted view of a scene. With a finite cutoff, Gaussians farther than the given
/// squared Mahalanobis distance are ignored and a spatial hash limits the candidates.
template <typename Scalar>
class GaussianField {
 public:
  explicit GaussianField(const Scene<Scalar>& scene, Scalar cutoff_m2 = std::numeric_limits<Scalar>::infinity())
      : scene_(&scene), cutoff_m2_(cutoff_m2) {
    inv_cov_.reserve(scene.size());
    Scalar max_support = 0;
    for (const auto& g : scene.gaussians) {
      inv_cov_.push_back(g.covariance.inverse());
      if (std::isfinite(double(cutoff_m2))) {
        Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> es(g.covariance, Eigen::EigenvaluesOnly);
        max_support = std::max(max_support, std::sqrt(cutoff_m2 * es.eigenvalues().maxCoeff()));
      }
    }
    if (std::isfinite(double(cutoff_m2)) && max_support > Scalar(0)) {
      cell_ = max_support;
      for (size_t i = 0; i < scene.size(); ++i) grid_[key(cell_of(scene.gaussians[i].mean))].push_back(static_cast<int>(i));
    }
  }

  const Scene<Scalar>& scene() const { return *scene_; }
  int feature_dim() const { return scene_->feature_dim; }

  /// Calls f(index, weight, g) for every contributing Gaussian with weight = opacity * kernel and
  /// g = -Sigma^-1 (x - mu), the gradient of the log-kernel.
  template <typename F>
  void for_each(const Vec3<Scalar>& x, F&& f) const {
    auto visit = [&](int i) {
      const auto& gs = scene_->gaussians[static_cast<size_t>(i)];
      const Vec3<Scalar> dx = x - gs.mean;
      const Vec3<Scalar> g = -(inv_cov_[static_cast<size_t>(i)] * dx);
      const Scalar m2 = -dx.dot(g);
      if (m2 > cutoff_m2_) return;
      f(i, gs.opacity * std::exp(Scalar(-0.5) * m2), g);
    };
    if (grid_.empty()) {
      for (size_t i = 0; i < scene_->size(); ++i) visit(static_cast<int>(i));
      return;
    }
    const Eigen::Vector3i c = cell_of(x);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          auto it = grid_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
          if (it == grid_.end()) continue;
          for (int i : it->second) visit(i);
        }
  }

  Scalar density(const Vec3<Scalar>& x) const {
    Scalar rho = 0;
    for_each(x, [&](int, Scalar w, const Vec3<Scalar>&) { rho += w; });
    return rho;
  }

  Vec3<Scalar> density_gradient(const Vec3<Scalar>& x) const {
    Vec3<Scalar> grad = Vec3<Scalar>::Zero();
    for_each(x, [&](int, Scalar w, const Vec3<Scalar>& g) { grad += w * g; });
    return grad;
  }

  /// Unnormalized F*(x).
  VecX<Scalar> raw_feature(const Vec3<Scalar>& x) const {
    VecX<Scalar> f = VecX<Scalar>::Zero(feature_dim());
    for_each(x, [&](int i, Scalar w, const Vec3<Scalar>&) { f += w * scene_->gaussians[static_cast<size_t>(i)].feature; });
    return f;
  }

  VecX<Scalar> feature(const Vec3<Scalar>& x) const {
    VecX<Scalar> f = raw_feature(x);
    const Scalar n = f.norm();
    if (!(n > Scalar(1e-12))) throw DegenerateFieldError("feature field undefined: no mass near point");
    return f / n;
  }

  MatX<Scalar> jacobian(const Vec3<Scalar>& x) const {
    VecX<Scalar> fs = VecX<Scalar>::Zero(feature_dim());
    MatX<Scalar> ds = MatX<Scalar>::Zero(feature_dim(), 3);
    for_each(x, [&](int i, Scalar w, const Vec3<Scalar>& g) {
      const auto& f = scene_->gaussians[static_cast<size_t>(i)].feature;
      fs += w * f;
      ds += w * f * g.transpose();
    });
    const Scalar n = fs.norm();
    if (!(n > Scalar(1e-12))) throw DegenerateFieldError("feature field undefined: no mass near point");
    const VecX<Scalar> u = fs / n;
    return (ds - u * (u.transpose() * ds)) / n;
  }

  Vec3<Scalar> normal(const Vec3<Scalar>& x, const MetricParams& params = {}) const {
    Scalar rho = 0;
    Vec3<Scalar> grad = Vec3<Scalar>::Zero();
    for_each(x, [&](int, Scalar w, const Vec3<Scalar>& g) {
      rho += w;
      grad += w * g;
    });
    if (rho < Scalar(params.density_floor)) throw DensityFloorError("density below floor, normal undefined");
    const Scalar n = grad.norm();
    if (!(n > Scalar(1e-12))) throw DensityFloorError("density gradient vanishes, normal undefined");
    return grad / n;
  }

  Metric<Scalar> metric(const Vec3<Scalar>& x, const MetricParams& params = {}) const {
    if (!(params.d >= 1.0)) throw std::invalid_argument("metric anisotropy d must be >= 1");
    return metric_from_normal<Scalar>(normal(x, params), Scalar(params.d));
  }

  FieldEval<Scalar> evaluate(const Vec3<Scalar>& x, const MetricParams& params = {}) const {
    FieldEval<Scalar> e;
    e.value = feature(x);
    e.jacobian = jacobian(x);
    e.density = density(x);
    e.normal = normal(x, params);
    return e;
  }

 private:
  Eigen::Vector3i cell_of(const Vec3<Scalar>& x) const {
    return Eigen::Vector3i(static_cast<int>(std::floor(double(x.x() / cell_))), static_cast<int>(std::floor(double(x.y() / cell_))),
                           static_cast<int>(std::floor(double(x.z() / cell_))));
  }
  static int64_t key(const Eigen::Vector3i& c) {
    return (int64_t(c.x()) & 0x1FFFFF) | ((int64_t(c.y()) & 0x1FFFFF) << 21) | ((int64_t(c.z()) & 0x1FFFFF) << 42);
  }

  const Scene<Scalar>* scene_;
  Scalar cutoff_m2_;
  std::vector<Mat3<Scalar>> inv_cov_;
  Scalar cell_ = 0;
  std::unordered_map<int64_t, std::vector<int>> grid_;
};

template <typename Scalar>
Scalar density(const Scene<Scalar>& scene, const Vec3<Scalar>& x) {
  return GaussianField<Scalar>(scene).density(x);
}

template <typename Scalar>
VecX<Scalar> feature_field(const Scene<Scalar>& scene, const Vec3<Scalar>& x) {
  return GaussianField<Scalar>(scene).feature(x);
}

template <typename Scalar>
MatX<Scalar> feature_jacobian(const Scene<Scalar>& scene, const Vec3<Scalar>& x) {
  return GaussianField<Scalar>(scene).jacobian(x);
}

template <typename Scalar>
Vec3<Scalar> surface_normal(const Scene<Scalar>& scene, const Vec3<Scalar>& x, const MetricParams& params = {}) {
  return GaussianField<Scalar>(scene).normal(x, params);
}

template <typename Scalar>
Metric<Scalar> metric_at(const Scene<Scalar>& scene, const Vec3<Scalar>& x, const MetricParams& params = {}) {
  return GaussianField<Scalar>(scene).metric(x, params);
}

struct SifrOptions {
  MetricParams metric;
  /// Squared Mahalanobis cutoff for kernel contributions; infinity evaluates every Gaussian.
  double cutoff_m2 = std::numeric_limits<double>::infinity();
};

template <typename Scalar>
struct SifrResult {
  Scalar loss = 0;
  MatX<Scalar> feature_grad;  // N x D
  int evaluated = 0;
  int skipped = 0;
};

/// Sum over Gaussian means of Tr(J^T J G^-1) with gradients with respect to the features only.
template <typename Scalar>
SifrResult<Scalar> sifr_loss(const Scene<Scalar>& scene, const SifrOptions& opt = {}) {
  const int dim = scene.feature_dim;
  const size_t n = scene.size();
  const GaussianField<Scalar> field(scene, Scalar(opt.cutoff_m2));
  constexpr int kChunks = 8;

  struct Partial {
    Scalar loss = 0;
    MatX<Scalar> grad;
    int evaluated = 0, skipped = 0;
  };
  std::vector<Partial> parts(kChunks);

#pragma omp parallel for schedule(static)
  for (int chunk = 0; chunk < kChunks; ++chunk) {
    Partial& pt = parts[static_cast<size_t>(chunk)];
    pt.grad = MatX<Scalar>::Zero(static_cast<Eigen::Index>(n), dim);
    const size_t lo = n * static_cast<size_t>(chunk) / kChunks, hi = n * static_cast<size_t>(chunk + 1) / kChunks;
    std::vector<int> idx;
    std::vector<Scalar> wts;
    std::vector<Vec3<Scalar>> gs;
    for (size_t e = lo; e < hi; ++e) {
      const Vec3<Scalar> x = scene.gaussians[e].mean;
      idx.clear();
      wts.clear();
      gs.clear();
      Scalar rho = 0;
      Vec3<Scalar> grad_rho = Vec3<Scalar>::Zero();
      VecX<Scalar> fs = VecX<Scalar>::Zero(dim);
      MatX<Scalar> ds = MatX<Scalar>::Zero(dim, 3);
      field.for_each(x, [&](int i, Scalar w, const Vec3<Scalar>& g) {
        const auto& f = scene.gaussians[static_cast<size_t>(i)].feature;
        idx.push_back(i);
        wts.push_back(w);
        gs.push_back(g);
        rho += w;
        grad_rho += w * g;
        fs += w * f;
        ds.noalias() += (w * f) * g.transpose();
      });
      const Scalar gn = grad_rho.norm(), fn = fs.norm();
      if (rho < Scalar(opt.metric.density_floor) || !(gn > Scalar(1e-12)) || !(fn > Scalar(1e-12))) {
        ++pt.skipped;
        continue;
      }
      ++pt.evaluated;
      const Mat3<Scalar> h = metric_from_normal<Scalar>(grad_rho / gn, Scalar(opt.metric.d)).g_inv;
      const VecX<Scalar> u = fs / fn;
      const MatX<Scalar> jac = (ds - u * (u.transpose() * ds)) / fn;
      pt.loss += sifr_quadratic_form(jac, h);

      const MatX<Scalar> jhat = Scalar(2) * jac * h;
      const Scalar inner = (jhat.array() * jac.array()).sum();
      const VecX<Scalar> g_fs = -(inner / fn) * u - jhat * (ds.transpose() * u) / (fn * fn);
      const MatX<Scalar> g_ds = jhat / fn;
      for (size_t m = 0; m < idx.size(); ++m)
        pt.grad.row(idx[m]) += (wts[m] * (g_fs + g_ds * gs[m])).transpose();
    }
  }

  SifrResult<Scalar> out;
  out.feature_grad = MatX<Scalar>::Zero(static_cast<Eigen::Index>(n), dim);
  for (const auto& pt : parts) {
    out.loss += pt.loss;
    out.feature_grad += pt.grad;
    out.evaluated += pt.evaluated;
    out.skipped += pt.skipped;
  }
  return out;
}

}  // namespace desksplat
