#include "bilc/belief.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bilc {

namespace {

constexpr double kJitter = 1e-12;
constexpr double kDegenerateStep = 1e-14;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

RegressionDatum::RegressionDatum(Vec regressor_, Vec target_)
    : regressor(std::move(regressor_)), target(std::move(target_)) {
  require(regressor.size() >= 1 && target.size() >= 1,
          "regression datum must be non-empty");
}

Mat RegressionDatum::design() const {
  const Eigen::Index r = target.size();
  const Eigen::Index c = regressor.size();
  Mat d = Mat::Zero(r, r * c);
  for (Eigen::Index j = 0; j < c; ++j)
    d.block(0, j * r, r, r) = regressor[j] * Mat::Identity(r, r);
  return d;
}

RegressionDatum datum_from_trials(const TrialRecord& current,
                                  const TrialRecord& previous, int step) {
  const auto j = static_cast<std::size_t>(step);
  require(step >= 0 && j + 1 < current.filtered_errors.size(),
          "datum_from_trials: step out of range");
  require(current.filtered_errors.size() == previous.filtered_errors.size() &&
              current.applied_inputs.size() == previous.applied_inputs.size(),
          "datum_from_trials: trials have different horizons");
  const Vec err_diff = current.filtered_errors[j] - previous.filtered_errors[j];
  const Vec input_diff = current.applied_inputs[j] - previous.applied_inputs[j];
  Vec z(err_diff.size() + input_diff.size());
  z << err_diff, input_diff;
  return RegressionDatum(std::move(z), current.filtered_errors[j + 1] -
                                           previous.filtered_errors[j + 1]);
}

GaussianBelief::GaussianBelief(Vec mean_, Mat cov_)
    : mean(std::move(mean_)), cov(std::move(cov_)) {
  require(cov.rows() == mean.size() && cov.cols() == mean.size(),
          "belief covariance shape must match the mean");
}

GaussianBelief GaussianBelief::isotropic(const Vec& mean, double prior_var) {
  require(prior_var >= 0.0, "prior variance must be >= 0");
  return GaussianBelief(mean,
                        prior_var * Mat::Identity(mean.size(), mean.size()));
}

void GaussianBelief::repair() {
  cov = 0.5 * (cov + cov.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.eigenvalues().minCoeff() < 0.0) {
    Vec lam = es.eigenvalues().cwiseMax(0.0);
    cov = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
  }
}

GaussianBelief lbr_update(const GaussianBelief& prior,
                          const RegressionDatum& datum, double noise_var,
                          double forget) {
  if (!datum.regressor.allFinite() || !datum.target.allFinite())
    throw std::invalid_argument("regression datum is not finite");
  require(datum.regressor.size() * datum.target.size() == prior.mean.size(),
          "datum dimensions do not match the belief");
  return lbr_update(prior, datum.design(), datum.target, noise_var, forget);
}

GaussianBelief lbr_update(const GaussianBelief& prior, const Mat& design,
                          const Vec& target, double noise_var, double forget) {
  require(noise_var > 0.0, "likelihood noise variance must be > 0");
  require(forget > 0.0 && forget <= 1.0, "forgetting factor must be in (0, 1]");
  require(design.cols() == prior.mean.size() && design.rows() == target.size(),
          "design dimensions do not match the belief");
  if (!design.allFinite() || !target.allFinite())
    throw std::invalid_argument("regression data are not finite");

  // Forgetting inflates the prior; the rest is a standard Gaussian update.
  // Two algebraically identical evaluations with opposite conditioning:
  //   * rows < params (single datum): the r x r innovation is generically
  //     full-rank-dominant, so the Joseph/measurement form is stable — and
  //     it preserves the prior exactly in unobserved directions, which the
  //     forgetting -> 0 (secant) limit relies on;
  //   * rows >= params (stacked trial): the innovation degenerates to
  //     rank-p-plus-ridge and its solve loses the update entirely under the
  //     enormous priors used for first-trial regression, while the p x p
  //     information matrix is full-rank-dominant and stays accurate.
  const Mat inflated = prior.cov / forget;
  const Eigen::Index p = prior.mean.size();
  GaussianBelief post = prior;
  if (design.rows() >= design.cols()) {
    Mat damped = inflated;
    damped.diagonal().array() += kJitter;
    const Mat prior_info = damped.ldlt().solve(Mat::Identity(p, p));
    const Mat info =
        design.transpose() * design / noise_var + prior_info;
    const Eigen::LDLT<Mat> solver(info);
    post.cov = solver.solve(Mat::Identity(p, p));
    post.mean = solver.solve(prior_info * prior.mean +
                             design.transpose() * target / noise_var);
  } else {
    const Eigen::Index r = design.rows();
    Mat innov = design * inflated * design.transpose();
    innov.diagonal().array() += noise_var + kJitter;
    const Mat gain =
        inflated * design.transpose() * innov.ldlt().solve(Mat::Identity(r, r));
    const Mat closed = Mat::Identity(p, p) - gain * design;
    post.mean = prior.mean + gain * (target - design * prior.mean);
    post.cov = closed * inflated * closed.transpose() +
               noise_var * gain * gain.transpose();
  }
  post.repair();
  return post;
}

Mat broyden_update(const Mat& jac, const Vec& dx, const Vec& df,
                   const std::optional<Mat>& weight) {
  require(jac.cols() == dx.size() && jac.rows() == df.size(),
          "broyden_update: secant pair does not match the Jacobian shape");
  if (dx.norm() < kDegenerateStep)
    throw std::invalid_argument("broyden_update: degenerate (near-zero) step");

  const Vec residual = df - jac * dx;
  if (!weight) {
    return jac + residual * dx.transpose() / dx.squaredNorm();
  }

  // Weighted minimum change: vec(J_new) = vec(J) + W D' (D W D')^-1 residual
  // with D = kron(dx', I). Reduces to the rank-one formula at W = I.
  const Eigen::Index r = jac.rows();
  const Eigen::Index p = jac.size();
  require(weight->rows() == p && weight->cols() == p,
          "broyden_update: weight must act on vec(J)");
  RegressionDatum datum(dx, df);
  const Mat d = datum.design();
  Mat innov = d * (*weight) * d.transpose();
  innov.diagonal().array() += kJitter;
  const Vec step =
      (*weight) * d.transpose() * innov.ldlt().solve(residual);
  Mat out = jac;
  for (Eigen::Index j = 0; j < jac.cols(); ++j)
    out.col(j) += step.segment(j * r, r);
  return out;
}

ModelBelief::ModelBelief(Dimensions dims_, double noise_var_, double forget_,
                         std::vector<GaussianBelief> steps_)
    : dims(dims_),
      noise_var(noise_var_),
      forget(forget_),
      steps(std::move(steps_)) {
  require(!steps.empty(), "model belief needs at least one step");
  for (const auto& s : steps)
    require(s.mean.size() == dims.param_dim(),
            "model belief step has wrong parameter dimension");
}

ModelBelief ModelBelief::from_model(const LtvModel& model, double prior_var,
                                    double noise_var, double forget) {
  std::vector<Mat> covs(
      static_cast<std::size_t>(model.horizon.n_steps),
      prior_var * Mat::Identity(model.dims.param_dim(), model.dims.param_dim()));
  return from_model(model, std::move(covs), noise_var, forget);
}

ModelBelief ModelBelief::from_model(const LtvModel& model,
                                    std::vector<Mat> covs, double noise_var,
                                    double forget) {
  require(covs.size() == model.a_mats.size(),
          "model belief needs one covariance per step");
  std::vector<GaussianBelief> steps;
  steps.reserve(covs.size());
  for (std::size_t j = 0; j < covs.size(); ++j) {
    steps.emplace_back(vectorize_pair(model.a_mats[j], model.b_mats[j]),
                       std::move(covs[j]));
    steps.back().repair();
  }
  return ModelBelief(model.dims, noise_var, forget, std::move(steps));
}

Mat ModelBelief::mean_a(int step) const {
  return unpack_a(steps[static_cast<std::size_t>(step)].mean, dims);
}

Mat ModelBelief::mean_b(int step) const {
  return unpack_b(steps[static_cast<std::size_t>(step)].mean, dims);
}

void ModelBelief::absorb_trial_pair(const TrialRecord& current,
                                    const TrialRecord& previous) {
  for (int j = 0; j < n_steps(); ++j) {
    const auto datum = datum_from_trials(current, previous, j);
    steps[static_cast<std::size_t>(j)] =
        lbr_update(steps[static_cast<std::size_t>(j)], datum, noise_var,
                   forget);
  }
}

double ModelBelief::identification_error(const LtvModel& truth) const {
  require(truth.horizon.n_steps == n_steps() &&
              truth.dims.state_dim == dims.state_dim &&
              truth.dims.input_dim == dims.input_dim,
          "identification_error: model shapes differ");
  double acc = 0.0;
  for (int j = 0; j < n_steps(); ++j) {
    acc += (mean_a(j) - truth.a_mats[static_cast<std::size_t>(j)])
               .squaredNorm();
    acc += (mean_b(j) - truth.b_mats[static_cast<std::size_t>(j)])
               .squaredNorm();
  }
  return std::sqrt(acc);
}

Vec vectorize_pair(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows(), "vectorize_pair: row counts differ");
  Vec v(a.size() + b.size());
  Eigen::Index at = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c, at += a.rows())
    v.segment(at, a.rows()) = a.col(c);
  for (Eigen::Index c = 0; c < b.cols(); ++c, at += b.rows())
    v.segment(at, b.rows()) = b.col(c);
  return v;
}

Mat unpack_a(const Vec& params, const Dimensions& dims) {
  const int s = dims.state_dim;
  require(params.size() == dims.param_dim(),
          "unpack_a: parameter vector has wrong length");
  Mat a(s, s);
  for (int c = 0; c < s; ++c) a.col(c) = params.segment(c * s, s);
  return a;
}

Mat unpack_b(const Vec& params, const Dimensions& dims) {
  const int s = dims.state_dim;
  require(params.size() == dims.param_dim(),
          "unpack_b: parameter vector has wrong length");
  Mat b(s, dims.input_dim);
  for (int c = 0; c < dims.input_dim; ++c)
    b.col(c) = params.segment(s * s + c * s, s);
  return b;
}

GaussianBelief adapt_continuous(const GaussianBelief& prior,
                                const Vec& accel_diff, const Vec& error_diff,
                                const Vec& input_diff, double noise_var,
                                double forget) {
  Vec z(error_diff.size() + input_diff.size());
  z << error_diff, input_diff;
  return lbr_update(prior, RegressionDatum(std::move(z), accel_diff),
                    noise_var, forget);
}

GaussianBelief discretize_belief(const GaussianBelief& cont, int n_joints,
                                     int input_dim, double dt) {
  const int n = n_joints;
  const int s = 2 * n;
  const int m = input_dim;
  require(cont.mean.size() == static_cast<Eigen::Index>(n) * (s + m),
          "discretize_belief: continuous belief has wrong size");
  require(dt > 0.0, "discretize_belief: dt <= 0");

  // Continuous layout: vec([A_c B_c]) with n rows; discrete layout:
  // vec([A_d B_d]) with s rows. A continuous entry (row i, col c) lands on
  // discrete row n+i of the same column, scaled by dt.
  const auto cont_idx = [&](int i, int c) { return c * n + i; };
  const auto disc_idx = [&](int i, int c) {
    return c < s ? c * s + n + i : s * s + (c - s) * s + n + i;
  };

  Mat a_d = Mat::Identity(s, s);
  a_d.block(0, n, n, n) += dt * Mat::Identity(n, n);
  Mat b_d = Mat::Zero(s, m);
  for (int c = 0; c < s + m; ++c)
    for (int i = 0; i < n; ++i) {
      const double v = dt * cont.mean[cont_idx(i, c)];
      if (c < s)
        a_d(n + i, c) += v;
      else
        b_d(n + i, c - s) += v;
    }

  const int p = s * (s + m);
  Mat cov = Mat::Zero(p, p);
  for (int c1 = 0; c1 < s + m; ++c1)
    for (int i1 = 0; i1 < n; ++i1)
      for (int c2 = 0; c2 < s + m; ++c2)
        for (int i2 = 0; i2 < n; ++i2)
          cov(disc_idx(i1, c1), disc_idx(i2, c2)) =
              dt * dt * cont.cov(cont_idx(i1, c1), cont_idx(i2, c2));

  GaussianBelief out(vectorize_pair(a_d, b_d), std::move(cov));
  out.repair();
  return out;
}

}  // namespace bilc
