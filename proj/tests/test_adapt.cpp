#include "bilc/belief.hpp"
#include "bilc/discretize.hpp"
#include "bilc/seeding.hpp"
#include "bilc/types.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <cmath>
#include <vector>

using namespace bilc;
using namespace bilc::testing;

namespace {

/// Posterior of the exponentially weighted ridge problem solved directly via
/// the information (normal-equation) form:
///   Lambda_K = forget^K Sigma0^-1 + sum_t forget^(K-t) D_t' D_t / noise,
///   eta_K    = forget^K Sigma0^-1 mu0 + sum_t forget^(K-t) D_t' y_t / noise.
GaussianBelief ridge_posterior(const GaussianBelief& prior,
                               const std::vector<RegressionDatum>& data,
                               double noise_var, double forget) {
  Mat lambda = prior.cov.inverse();
  Vec eta = lambda * prior.mean;
  for (const auto& d : data) {
    const Mat design = d.design();
    lambda = forget * lambda + design.transpose() * design / noise_var;
    eta = forget * eta + design.transpose() * d.target / noise_var;
  }
  const Mat cov = lambda.inverse();
  GaussianBelief out(cov * eta, 0.5 * (cov + cov.transpose()));
  return out;
}

}  // namespace

TEST_CASE("regression datum materializes the Kronecker design") {
  const RegressionDatum d((Vec(2) << 2, 3).finished(),
                          (Vec(2) << 5, 7).finished());
  Mat expected(2, 4);
  expected << 2, 0, 3, 0, 0, 2, 0, 3;
  CHECK((d.design() - expected).cwiseAbs().maxCoeff() == doctest::Approx(0));

  // The design reproduces y = F z for the matching vec(F).
  Mat f(2, 2);
  f << 1, -2, 4, 0.5;
  const Vec y = d.design() * vectorize_pair(f.leftCols(1), f.rightCols(1));
  CHECK((y - f * d.regressor).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("datum_from_trials differences consecutive trials") {
  const auto w = CostWeights::uniform(2, 1, 1, 1.0, 1.0);
  const std::vector<Vec> errs_prev{Vec::Constant(1, 1.0), Vec::Constant(1, 2.0),
                                   Vec::Constant(1, 3.0)};
  const std::vector<Vec> errs_cur{Vec::Constant(1, 1.5), Vec::Constant(1, 2.5),
                                  Vec::Constant(1, 4.0)};
  const std::vector<Vec> in_prev{Vec::Constant(1, 0.2), Vec::Constant(1, 0.4)};
  const std::vector<Vec> in_cur{Vec::Constant(1, 0.3), Vec::Constant(1, 0.1)};
  const TrialRecord prev(0, errs_prev, errs_prev, in_prev, w);
  const TrialRecord cur(1, errs_cur, errs_cur, in_cur, w);

  const auto d0 = datum_from_trials(cur, prev, 0);
  CHECK(d0.regressor[0] == doctest::Approx(0.5));   // error diff at j=0
  CHECK(d0.regressor[1] == doctest::Approx(0.1));   // input diff at j=0
  CHECK(d0.target[0] == doctest::Approx(0.5));      // error diff at j=1

  const auto d1 = datum_from_trials(cur, prev, 1);
  CHECK(d1.regressor[1] == doctest::Approx(-0.3));
  CHECK(d1.target[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(datum_from_trials(cur, prev, 2), std::invalid_argument);
}

TEST_CASE("scalar Bayes update matches the closed form") {
  // Prior N(0, 1), design D = 1, y = 2, noise 1, no forgetting:
  // posterior variance 0.5, mean 1.
  const GaussianBelief prior(Vec::Zero(1), Mat::Identity(1, 1));
  const RegressionDatum datum(Vec::Ones(1), Vec::Constant(1, 2.0));
  const auto post = lbr_update(prior, datum, 1.0, 1.0);
  CHECK(post.mean[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(post.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("zero-information datum leaves the belief unchanged") {
  auto rng = make_rng(21);
  const GaussianBelief prior(random_vec(rng, 6), random_psd(rng, 6));
  const RegressionDatum datum(Vec::Zero(3), Vec::Zero(2));
  const auto post = lbr_update(prior, datum, 1.0, 1.0);
  CHECK((post.mean - prior.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((post.cov - prior.cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("non-finite datum is rejected") {
  const GaussianBelief prior(Vec::Zero(2), Mat::Identity(2, 2));
  Vec bad = Vec::Ones(1);
  bad[0] = std::nan("");
  CHECK_THROWS_AS(
      lbr_update(prior, RegressionDatum(bad, Vec::Ones(2)), 1.0, 1.0),
      std::invalid_argument);
  CHECK_THROWS_AS(
      lbr_update(prior, RegressionDatum(Vec::Ones(1), Vec::Ones(2)), 0.0, 1.0),
      std::invalid_argument);
  CHECK_THROWS_AS(
      lbr_update(prior, RegressionDatum(Vec::Ones(1), Vec::Ones(2)), 1.0, 1.5),
      std::invalid_argument);
}

TEST_CASE("sequential updates match the stacked ridge posterior") {
  auto rng = make_rng(33);
  for (const double forget : {1.0, 0.7}) {
    GaussianBelief belief(random_vec(rng, 6),
                          random_psd(rng, 6) + 0.5 * Mat::Identity(6, 6));
    const GaussianBelief prior = belief;
    const double noise_var = 0.3;

    std::vector<RegressionDatum> data;
    for (int t = 0; t < 8; ++t) {
      data.emplace_back(random_vec(rng, 3), random_vec(rng, 2));
      belief = lbr_update(belief, data.back(), noise_var, forget);
    }
    const auto oracle = ridge_posterior(prior, data, noise_var, forget);
    CHECK((belief.mean - oracle.mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((belief.cov - oracle.cov).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("wide prior converges to the least-squares solution") {
  // gamma = 1e4 prior with repeated consistent data: the posterior mean
  // approaches the generating parameters.
  auto rng = make_rng(35);
  Mat f_true(2, 3);
  f_true << 1.0, -0.5, 0.25, 0.0, 2.0, -1.0;
  GaussianBelief belief(Vec::Zero(6), 1e4 * Mat::Identity(6, 6));
  for (int t = 0; t < 20; ++t) {
    const Vec z = random_vec(rng, 3);
    belief = lbr_update(belief, RegressionDatum(z, f_true * z), 1e-4, 1.0);
  }
  const Vec truth =
      vectorize_pair(f_true.leftCols(2), f_true.rightCols(1));
  CHECK((belief.mean - truth).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("covariance trace never grows without forgetting") {
  auto rng = make_rng(40);
  GaussianBelief belief(random_vec(rng, 8), random_psd(rng, 8));
  double prev_trace = belief.cov.trace();
  for (int t = 0; t < 30; ++t) {
    belief = lbr_update(belief, RegressionDatum(random_vec(rng, 4),
                                                random_vec(rng, 2)),
                        0.5, 1.0);
    const double tr = belief.cov.trace();
    CHECK(tr <= prev_trace);
    prev_trace = tr;
  }
}

TEST_CASE("forgetting inflates the posterior relative to no forgetting") {
  auto rng = make_rng(41);
  const GaussianBelief prior(random_vec(rng, 4), random_psd(rng, 4));
  const RegressionDatum datum(random_vec(rng, 2), random_vec(rng, 2));
  const auto keep = lbr_update(prior, datum, 1.0, 1.0);
  const auto fade = lbr_update(prior, datum, 1.0, 0.5);
  CHECK(fade.cov.trace() > keep.cov.trace());
}

TEST_CASE("broyden update: secant identity and hand example") {
  // Already-consistent Jacobian is unchanged.
  Mat j0(2, 2);
  j0 << 1, 2, 3, 4;
  const Vec dx = (Vec(2) << 1, -1).finished();
  const Vec df = j0 * dx;
  CHECK((broyden_update(j0, dx, df) - j0).cwiseAbs().maxCoeff() < 1e-14);

  // Classical rank-one formula: F = 0, dx = e1, df = (1, 0) gives e1 e1'.
  const Mat f0 = Mat::Zero(2, 2);
  const Vec e1 = (Vec(2) << 1, 0).finished();
  const Mat f1 = broyden_update(f0, e1, e1);
  Mat expected = Mat::Zero(2, 2);
  expected(0, 0) = 1.0;
  CHECK((f1 - expected).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(broyden_update(j0, Vec::Zero(2), df),
                  std::invalid_argument);
}

TEST_CASE("broyden update satisfies the secant rule, weighted or not") {
  auto rng = make_rng(50);
  const Mat jac = random_mat(rng, 3, 4);
  const Vec dx = random_vec(rng, 4);
  const Vec df = random_vec(rng, 3);

  const Mat plain = broyden_update(jac, dx, df);
  CHECK((plain * dx - df).cwiseAbs().maxCoeff() < 1e-10);

  const Mat with_identity =
      broyden_update(jac, dx, df, Mat::Identity(12, 12));
  CHECK((with_identity - plain).cwiseAbs().maxCoeff() < 1e-9);

  const Mat weight = random_psd(rng, 12) + 0.5 * Mat::Identity(12, 12);
  const Mat weighted = broyden_update(jac, dx, df, weight);
  CHECK((weighted * dx - df).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("near-secant regression limit reproduces the Broyden step") {
  auto rng = make_rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat jac = random_mat(rng, 2, 3);
    const Vec dx = random_vec(rng, 3);
    const Vec df = random_vec(rng, 2);

    const GaussianBelief prior(
        vectorize_pair(jac.leftCols(2), jac.rightCols(1)),
        Mat::Identity(6, 6));
    const auto post =
        lbr_update(prior, RegressionDatum(dx, df), 1e-10, 1e-10);

    const Mat oracle = broyden_update(jac, dx, df);
    const Vec oracle_vec =
        vectorize_pair(oracle.leftCols(2), oracle.rightCols(1));
    const double rel = (post.mean - oracle_vec).norm() /
                       std::max(1.0, oracle_vec.norm());
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("model belief: layout round trip and trial absorption") {
  const auto model = random_model(60, 4, 2, 1);
  auto belief = ModelBelief::from_model(model, 1.0, 1e-6, 1.0);
  REQUIRE(belief.n_steps() == 4);
  for (int j = 0; j < 4; ++j) {
    CHECK((belief.mean_a(j) - model.a_mats[static_cast<std::size_t>(j)])
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    CHECK((belief.mean_b(j) - model.b_mats[static_cast<std::size_t>(j)])
              .cwiseAbs()
              .maxCoeff() < 1e-14);
  }
  CHECK(belief.identification_error(model) == doctest::Approx(0.0));

  // Two trials generated by a *different* true model provide secant data;
  // absorbing them moves the belief toward that model.
  const auto truth = random_model(61, 4, 2, 1);
  const auto w = CostWeights::uniform(4, 2, 1, 1.0, 1.0);
  auto rng = make_rng(62);
  auto make_trial = [&](int iter) {
    std::vector<Vec> inputs = random_vec_series(rng, 4, 1);
    std::vector<Vec> errors{random_vec(rng, 2)};
    for (int j = 0; j < 4; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      errors.push_back(truth.a_mats[ju] * errors.back() +
                       truth.b_mats[ju] * inputs[ju]);
    }
    return TrialRecord(iter, errors, errors, inputs, w);
  };
  const auto t0 = make_trial(0);
  const auto t1 = make_trial(1);
  const double before = belief.identification_error(truth);
  belief.absorb_trial_pair(t1, t0);
  CHECK(belief.identification_error(truth) < before);

  // Belief invariants after the update: symmetric, eigenvalues >= -1e-10.
  for (const auto& step : belief.steps) {
    CHECK((step.cov - step.cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Mat> es(step.cov);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("continuous adaptation shrinks the identification error") {
  // Known acceleration model for n=1 joint, s=2, m=1.
  Mat a_c(1, 2), b_c(1, 1);
  a_c << -2.0, -0.5;
  b_c << 1.5;
  auto rng = make_rng(70);
  GaussianBelief belief(Vec::Zero(3), 10.0 * Mat::Identity(3, 3));
  const Vec truth = (Vec(3) << -2.0, -0.5, 1.5).finished();
  double err = (belief.mean - truth).norm();
  for (int t = 0; t < 10; ++t) {
    const Vec e_diff = random_vec(rng, 2);
    const Vec u_diff = random_vec(rng, 1);
    const Vec accel = a_c * e_diff + b_c * u_diff;
    belief = adapt_continuous(belief, accel, e_diff, u_diff, 1e-6, 1.0);
    const double now = (belief.mean - truth).norm();
    CHECK(now <= err * (1.0 + 1e-3) + 1e-9);
    err = now;
  }
  CHECK(err < 1e-3);

  // Zero differences change nothing.
  const auto before = belief;
  belief = adapt_continuous(belief, Vec::Zero(1), Vec::Zero(2), Vec::Zero(1),
                            1e-6, 1.0);
  CHECK((belief.mean - before.mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("belief discretization: structure, variance map and commutation") {
  const int n = 1, m = 1, s = 2;
  const double dt = 1e-3;

  // Zero continuous belief: structural mean, zero covariance.
  const GaussianBelief zero(Vec::Zero(n * (s + m)),
                            Mat::Zero(n * (s + m), n * (s + m)));
  const auto d0 = discretize_belief(zero, n, m, dt);
  const Mat a0 = unpack_a(d0.mean, Dimensions(s, m));
  const Mat b0 = unpack_b(d0.mean, Dimensions(s, m));
  Mat a_expected(2, 2);
  a_expected << 1, dt, 0, 1;
  CHECK((a0 - a_expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(b0.cwiseAbs().maxCoeff() == 0.0);
  CHECK(d0.cov.cwiseAbs().maxCoeff() == 0.0);

  // A unit variance on the first continuous A entry lands on the
  // acceleration row of the first discrete A column, scaled by dt^2.
  Mat cont_cov = Mat::Zero(3, 3);
  cont_cov(0, 0) = 1.0;
  const auto d1 = discretize_belief(GaussianBelief(Vec::Zero(3), cont_cov), n,
                                    m, dt);
  // Continuous A_c(0,0) -> discrete A_d(1,0), parameter index 0*s + n = 1.
  CHECK(d1.cov(1, 1) == doctest::Approx(dt * dt));
  CHECK(d1.cov.sum() == doctest::Approx(dt * dt));

  // Discretizing commutes with updating: adapting the continuous belief and
  // discretizing equals adapting the discretized belief with the embedded
  // datum (velocity-row target, noise scaled by dt^2).
  auto rng = make_rng(71);
  const GaussianBelief cont_prior(random_vec(rng, 3),
                                  random_psd(rng, 3) + Mat::Identity(3, 3));
  const Vec e_diff = random_vec(rng, 2);
  const Vec u_diff = random_vec(rng, 1);
  const Vec accel = random_vec(rng, 1);
  const double noise_c = 0.05;

  const auto path_a = discretize_belief(
      adapt_continuous(cont_prior, accel, e_diff, u_diff, noise_c, 1.0), n, m,
      dt);

  const auto disc_prior = discretize_belief(cont_prior, n, m, dt);
  Vec z(3);
  z << e_diff, u_diff;
  const Mat a_prior = unpack_a(disc_prior.mean, Dimensions(s, m));
  const Mat b_prior = unpack_b(disc_prior.mean, Dimensions(s, m));
  Vec y(2);
  y[0] = e_diff[0] + dt * e_diff[1];          // structural position row
  y[1] = e_diff[1] + dt * accel[0];           // velocity row with data
  const auto path_b = lbr_update(disc_prior, RegressionDatum(z, y),
                                 dt * dt * noise_c, 1.0);
  CHECK((path_a.mean - path_b.mean).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((path_a.cov - path_b.cov).cwiseAbs().maxCoeff() < 1e-9);
}
