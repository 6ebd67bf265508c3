#include "bilc/gp.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

namespace bilc {
namespace {

constexpr double kJitter = 1e-10;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void GpSpec::validate() const {
  require(std::isfinite(lengthscale) && lengthscale > 0.0,
          "GP lengthscale must be positive");
  require(std::isfinite(signal_var) && signal_var >= 0.0,
          "GP signal variance must be non-negative");
  require(std::isfinite(noise_var) && noise_var >= 0.0,
          "GP noise variance must be non-negative");
}

double se_kernel(const GpSpec& spec, const Vec& x, const Vec& y) {
  const double d2 = (x - y).squaredNorm();
  return spec.signal_var *
         std::exp(-d2 / (2.0 * spec.lengthscale * spec.lengthscale));
}

GaussianProcess::GaussianProcess(GpSpec spec, int input_dim, Vec mean_w,
                                 double mean_b)
    : spec_(spec), dim_(input_dim), mean_w_(std::move(mean_w)),
      mean_b_(mean_b) {
  spec_.validate();
  require(input_dim >= 1, "GP input dimension must be >= 1");
  require(mean_w_.size() == 0 || mean_w_.size() == input_dim,
          "GP linear mean weight must match the input dimension");
}

double GaussianProcess::prior_mean(const Vec& z) const {
  return mean_w_.size() == 0 ? mean_b_ : mean_w_.dot(z) + mean_b_;
}

Vec GaussianProcess::kernel_column(const Vec& z) const {
  Vec k(n_);
  for (int i = 0; i < n_; ++i) k[i] = se_kernel(spec_, z, pts_.col(i));
  return k;
}

void GaussianProcess::add_observation(const Vec& z, double y) {
  require(z.size() == dim_, "GP observation has the wrong dimension");
  if (!z.allFinite() || !std::isfinite(y))
    throw std::invalid_argument("GP observation is not finite");

  if (pts_.cols() == n_) {  // grow capacity geometrically
    const int cap = n_ == 0 ? 16 : 2 * n_;
    pts_.conservativeResize(dim_, cap);
    ys_.conservativeResize(cap);
    Mat grown = Mat::Zero(cap, cap);
    grown.topLeftCorner(n_, n_) = chol_.topLeftCorner(n_, n_);
    chol_ = std::move(grown);
  }

  const double diag = spec_.signal_var + spec_.noise_var + kJitter;
  if (n_ == 0) {
    chol_(0, 0) = std::sqrt(diag);
  } else {
    const Vec k = kernel_column(z);
    const Vec ell = chol_.topLeftCorner(n_, n_)
                        .triangularView<Eigen::Lower>()
                        .solve(k);
    const double rem = diag - ell.squaredNorm();
    if (rem <= 0.0)
      throw std::runtime_error(
          "GP kernel matrix is not positive definite after jitter");
    chol_.row(n_).head(n_) = ell.transpose();
    chol_(n_, n_) = std::sqrt(rem);
  }
  pts_.col(n_) = z;
  ys_[n_] = y;
  ++n_;
  alpha_ok_ = false;
}

void GaussianProcess::ensure_alpha() const {
  if (alpha_ok_) return;
  Vec resid(n_);
  for (int i = 0; i < n_; ++i) resid[i] = ys_[i] - prior_mean(pts_.col(i));
  const auto lower =
      chol_.topLeftCorner(n_, n_).triangularView<Eigen::Lower>();
  alpha_ = lower.transpose().solve(lower.solve(resid));
  alpha_ok_ = true;
}

double GaussianProcess::mean_at(const Vec& z) const {
  require(z.size() == dim_, "GP query has the wrong dimension");
  if (n_ == 0) return prior_mean(z);
  ensure_alpha();
  return prior_mean(z) + kernel_column(z).dot(alpha_);
}

double GaussianProcess::latent_var_at(const Vec& z) const {
  require(z.size() == dim_, "GP query has the wrong dimension");
  if (n_ == 0) return spec_.signal_var;
  const Vec ell = chol_.topLeftCorner(n_, n_)
                      .triangularView<Eigen::Lower>()
                      .solve(kernel_column(z));
  return std::max(0.0, spec_.signal_var - ell.squaredNorm());
}

double GaussianProcess::sample_at(const Vec& z, std::mt19937_64& rng) {
  const double m = mean_at(z);
  const double sd = std::sqrt(latent_var_at(z));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double draw = m + sd * gauss(rng);
  add_observation(z, draw);
  return draw;
}

Vec GaussianProcess::grad_mean(const Vec& z) const {
  require(z.size() == dim_, "GP query has the wrong dimension");
  Vec g = mean_w_.size() == 0 ? Vec::Zero(dim_).eval() : mean_w_;
  if (n_ == 0) return g;
  ensure_alpha();
  const double inv_l2 = 1.0 / (spec_.lengthscale * spec_.lengthscale);
  for (int i = 0; i < n_; ++i) {
    const double k = se_kernel(spec_, z, pts_.col(i));
    g += alpha_[i] * inv_l2 * k * (pts_.col(i) - z);
  }
  return g;
}

Mat GaussianProcess::grad_cov(const Vec& z) const {
  require(z.size() == dim_, "GP query has the wrong dimension");
  const double inv_l2 = 1.0 / (spec_.lengthscale * spec_.lengthscale);
  Mat out = spec_.signal_var * inv_l2 * Mat::Identity(dim_, dim_);
  if (n_ == 0) return out;

  // Cross-covariance between the gradient at z and f(z_i) is
  // dk(z, z_i)/dz = (z_i - z) k(z, z_i) / lengthscale^2.
  Mat cross(n_, dim_);
  for (int i = 0; i < n_; ++i) {
    const double k = se_kernel(spec_, z, pts_.col(i));
    cross.row(i) = (inv_l2 * k * (pts_.col(i) - z)).transpose();
  }
  const Mat w = chol_.topLeftCorner(n_, n_)
                    .triangularView<Eigen::Lower>()
                    .solve(cross);
  out -= w.transpose() * w;
  return 0.5 * (out + out.transpose());
}

Vec sample_gp_path(const GpSpec& spec, const std::vector<double>& inputs,
                   std::mt19937_64& rng) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(inputs.size());
  // A zero-variance prior is the deterministic zero function; skip the
  // factorization so the path is exactly zero rather than jitter-sized.
  if (spec.signal_var == 0.0 && spec.noise_var == 0.0) return Vec::Zero(n);
  Mat k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double d = inputs[static_cast<std::size_t>(i)] -
                       inputs[static_cast<std::size_t>(j)];
      const double v =
          spec.signal_var *
          std::exp(-d * d / (2.0 * spec.lengthscale * spec.lengthscale));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  k.diagonal().array() += spec.noise_var;

  // Eigendecomposition instead of a jittered Cholesky: additive jitter would
  // show up as independent per-sample noise (sd ~ 1e-5), which ruins the
  // long-lengthscale limit where paths must degenerate to constants. Rank
  // deficiency is handled by clamping, and directions below 1e-12 of the top
  // eigenvalue are numerical junk, not signal.
  Eigen::SelfAdjointEigenSolver<Mat> es(k);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("GP kernel matrix eigendecomposition failed");
  const Vec lam = es.eigenvalues();
  const double cut = 1e-12 * std::max(lam.maxCoeff(), 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec scaled(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double draw = gauss(rng);  // consume n draws regardless of rank
    scaled[i] = lam[i] > cut ? std::sqrt(lam[i]) * draw : 0.0;
  }
  return es.eigenvectors() * scaled;
}

}  // namespace bilc
