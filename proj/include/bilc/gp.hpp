#pragma once
// Scalar-output Gaussian-process regression with the squared-exponential
// kernel: incremental conditioning (grow-only Cholesky), posterior mean and
// variance, coherent sequential sampling, and the analytic posterior
// derivative (mean and covariance) used to extract local linear models.

#include "bilc/types.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace bilc {

/// Squared-exponential kernel hyperparameters:
///   k(x, y) = signal_var * exp(-|x - y|^2 / (2 lengthscale^2)),
/// with observation noise variance noise_var (>= 0).
struct GpSpec {
  double lengthscale = 0.5;
  double signal_var = 1.0;
  double noise_var = 0.0;

  void validate() const;  // throws std::invalid_argument
};

double se_kernel(const GpSpec& spec, const Vec& x, const Vec& y);

/// One scalar-output GP over R^d. Observations are appended incrementally;
/// the Cholesky factor of K + (noise + jitter) I is grown one row at a time
/// so conditioning on a rollout of length n costs O(n^3) total, not O(n^4).
class GaussianProcess {
 public:
  /// `mean_w` (size d) and `mean_b` define an optional linear prior mean
  /// w'z + b; pass an empty vector for the zero mean.
  GaussianProcess(GpSpec spec, int input_dim, Vec mean_w = Vec(),
                  double mean_b = 0.0);

  int input_dim() const { return dim_; }
  int n_points() const { return n_; }
  const GpSpec& spec() const { return spec_; }
  const Vec& mean_weight() const { return mean_w_; }  // empty for zero mean
  double mean_offset() const { return mean_b_; }

  /// Conditions on (z, y). Throws std::runtime_error if the kernel matrix
  /// is not positive definite even after jitter.
  void add_observation(const Vec& z, double y);

  double mean_at(const Vec& z) const;
  /// Posterior variance of the latent function (no observation noise).
  double latent_var_at(const Vec& z) const;
  /// Draws one value from the posterior at z and conditions on it, so a
  /// sequence of calls traces a single coherent sample path.
  double sample_at(const Vec& z, std::mt19937_64& rng);

  /// Gradient of the posterior mean at z (size d).
  Vec grad_mean(const Vec& z) const;
  /// Covariance of the posterior gradient at z (d x d, symmetric PSD up to
  /// round-off). Prior gradient covariance is (signal_var/lengthscale^2) I.
  Mat grad_cov(const Vec& z) const;

 private:
  Vec kernel_column(const Vec& z) const;  // k(z, z_i) for stored points
  double prior_mean(const Vec& z) const;
  void ensure_alpha() const;

  GpSpec spec_;
  int dim_;
  Vec mean_w_;
  double mean_b_;

  Mat pts_;   // dim x capacity, first n_ columns active
  Vec ys_;    // capacity, first n_ active
  Mat chol_;  // capacity x capacity lower triangular, n_ x n_ active
  int n_ = 0;

  mutable Vec alpha_;  // (K + noise I)^-1 (y - prior_mean), lazily refreshed
  mutable bool alpha_ok_ = false;
};

/// Joint draw of one zero-mean GP sample path at the given scalar inputs,
/// via eigendecomposition of the dense kernel matrix with eigenvalues below
/// 1e-12 of the largest treated as zero (so near-rank-deficient kernels,
/// e.g. very long lengthscales, degenerate to exactly-constant paths rather
/// than picking up jitter noise). Deterministic given the generator state;
/// a zero-variance spec returns the exactly-zero path.
Vec sample_gp_path(const GpSpec& spec, const std::vector<double>& inputs,
                   std::mt19937_64& rng);

}  // namespace bilc
