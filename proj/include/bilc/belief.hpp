#pragma once
// Gaussian beliefs over vectorized dynamics parameters and the recursive
// Bayesian linear-regression updates that refine them from trial data.
//
// Parameter layout: for a step with output rows r and regressor length c the
// parameter vector is vec(F) of the r x c matrix F, column-major, so entry
// F(i, j) sits at index j*r + i. For the full discrete error model
// F = [A B] with r = s and c = s + m; A entries occupy indices 0..s*s-1 and
// B entries start at s*s. The regression model for one datum is
//   y = F z + noise,   design D = kron(z', I_r),   y = D vec(F) + noise.

#include "bilc/types.hpp"

#include <optional>

namespace bilc {

/// One secant observation: regressor z (e.g. [error difference; input
/// difference]) and target y (next-step error difference), tied together by
/// the Kronecker design D = kron(z', I_rows).
struct RegressionDatum {
  Vec regressor;
  Vec target;

  RegressionDatum(Vec regressor, Vec target);
  /// Materialize D = kron(z', I_rows), rows = target.size().
  Mat design() const;
};

/// Build the discrete-model datum for step j from two consecutive trials:
/// z = [e^_k,j - e^_{k-1},j ; u_k,j - u_{k-1},j],
/// y =  e^_k,j+1 - e^_{k-1},j+1   (filtered errors, stored total inputs).
RegressionDatum datum_from_trials(const TrialRecord& current,
                                  const TrialRecord& previous, int step);

/// Mean and covariance of one step's parameter vector. Covariance is kept
/// symmetric and eigenvalue-floored at zero after every update.
struct GaussianBelief {
  Vec mean;
  Mat cov;

  GaussianBelief(Vec mean, Mat cov);
  static GaussianBelief isotropic(const Vec& mean, double prior_var);
  /// Symmetrize and clamp negative eigenvalues (numerical hygiene only).
  void repair();
};

/// Bayesian linear regression step with likelihood noise `noise_var` and
/// forgetting factor `forget` in (0, 1]:
///   cov_new  = (D'D/noise_var + forget*cov_old^-1)^-1
///   mean_new = forget*cov_new*cov_old^-1*mean_old + cov_new*D'y/noise_var
/// evaluated in the algebraically identical covariance (Kalman/Joseph) form
/// with the prior inflated by 1/forget, which stays finite and PSD in the
/// near-secant limit noise_var -> 0, forget -> 0. A 1e-12 jitter is added to
/// the innovation matrix before the solve. Throws on a non-finite datum (the
/// prior is left untouched) and on out-of-range noise_var/forget.
GaussianBelief lbr_update(const GaussianBelief& prior,
                          const RegressionDatum& datum, double noise_var,
                          double forget);

/// Same update with an explicit (possibly stacked) design matrix:
/// target = design * params + noise, design cols == belief dimension.
/// All stacked rows share one forgetting application, matching a single
/// trial's worth of evidence absorbed at once. Tall designs (more rows than
/// parameters) are evaluated in information form, which stays accurate
/// under enormous first-trial priors; datum-sized designs use the
/// measurement form, which the forgetting -> 0 secant limit requires.
GaussianBelief lbr_update(const GaussianBelief& prior, const Mat& design,
                          const Vec& target, double noise_var, double forget);

/// Minimum-weighted-change secant update of a Jacobian estimate:
/// returns the J minimizing the W-weighted change from `jac` subject to
/// J dx = df. W is a PSD weight over vec(J) (identity when omitted), in
/// which case this is the classical rank-one formula
/// J + (df - J dx) dx' / (dx'dx). Throws when |dx| < 1e-14 (degenerate step).
Mat broyden_update(const Mat& jac, const Vec& dx, const Vec& df,
                   const std::optional<Mat>& weight = std::nullopt);

/// Per-step beliefs over the discrete error model vec([A_j B_j]) plus the
/// shared regression hyperparameters.
struct ModelBelief {
  Dimensions dims;
  double noise_var;
  double forget;
  std::vector<GaussianBelief> steps;  // N entries

  ModelBelief(Dimensions dims, double noise_var, double forget,
              std::vector<GaussianBelief> steps);
  /// Belief centered on a known model with isotropic prior variance.
  static ModelBelief from_model(const LtvModel& model, double prior_var,
                                double noise_var, double forget);
  /// Belief centered on a model with explicit per-step covariances.
  static ModelBelief from_model(const LtvModel& model, std::vector<Mat> covs,
                                double noise_var, double forget);

  int n_steps() const { return static_cast<int>(steps.size()); }
  Mat mean_a(int step) const;
  Mat mean_b(int step) const;
  /// LBR-update every step from a consecutive trial pair.
  void absorb_trial_pair(const TrialRecord& current,
                         const TrialRecord& previous);
  /// Frobenius norm of the stacked per-step deviation
  /// [mean_A - A_true, mean_B - B_true] over the whole horizon.
  double identification_error(const LtvModel& truth) const;
};

/// Column-major vec([A B]) of the given pair.
Vec vectorize_pair(const Mat& a, const Mat& b);

/// Extract A (s x s) resp. B (s x m) from a column-major vec([A B]).
Mat unpack_a(const Vec& params, const Dimensions& dims);
Mat unpack_b(const Vec& params, const Dimensions& dims);

// ---------------------------------------------------------------------------
// Structured (continuous-time, acceleration-level) adaptation. For a
// mechanical system with n joints and state [q_err; qd_err] (s = 2n), the
// learned object is the n x (s + m) matrix [A_c B_c] in
//   accel_diff ~= A_c * state_error_diff + B_c * input_diff.
// ---------------------------------------------------------------------------

/// LBR step in the reduced space. `accel_diff` (length n) is the target,
/// regressor is [error_diff; input_diff] (length s + m).
GaussianBelief adapt_continuous(const GaussianBelief& prior,
                                const Vec& accel_diff, const Vec& error_diff,
                                const Vec& input_diff, double noise_var,
                                double forget);

/// Map a continuous structured belief (over vec([A_c B_c]), n rows) to the
/// discrete full-state belief (over vec([A_d B_d]), s = 2n rows) under
/// forward Euler: mean A_d = I + dt*[[0, I], [A_c]], B_d = dt*[0; B_c];
/// covariance entries land on the acceleration rows scaled by dt^2, all
/// structurally known entries have zero variance.
GaussianBelief discretize_belief(const GaussianBelief& cont, int n_joints,
                                     int input_dim, double dt);

}  // namespace bilc
