#include "bilc/baselines.hpp"
#include "bilc/belief.hpp"
#include "bilc/cautious.hpp"
#include "bilc/seeding.hpp"
#include "bilc/types.hpp"

#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"

#include <cmath>
#include <limits>
#include <vector>

using namespace bilc;
using namespace bilc::testing;

namespace {

/// Synthesizes a previous-trial record whose errors are exactly reachable
/// under `model` from inputs `inputs` and disturbances `dists`.
TrialRecord reachable_trial(const LtvModel& model, const CostWeights& w,
                            const Vec& e0, const std::vector<Vec>& inputs,
                            const std::vector<Vec>& dists) {
  const auto errors = simulate(model, e0, inputs, dists);
  return TrialRecord(0, errors, errors, inputs, w);
}

}  // namespace

TEST_CASE("expectation terms: zero covariance reduces to the point model") {
  const auto model = random_model(101, 3, 2, 2);
  const auto belief = random_belief(model, 0, 0.0);
  auto rng = make_rng(102);
  const Mat p = random_psd(rng, 2) + Mat::Identity(2, 2);
  const Mat r = 0.1 * Mat::Identity(2, 2);

  const auto terms = expectation_terms(belief.steps[1], belief.dims, p, r);
  const Mat& a = model.a_mats[1];
  const Mat& b = model.b_mats[1];
  CHECK((terms.theta - (r + b.transpose() * p * b)).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((terms.psi - b.transpose() * p * a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((terms.m_mat - a.transpose() * p * a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(terms.gamma_aa.cwiseAbs().maxCoeff() == 0.0);
  CHECK(terms.gamma_ba.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("expectation terms: scalar hand computation") {
  // s = m = 1: A ~ N(a, v_A), B ~ N(b, v_B), Cov(A, B) = c.
  const double a = 0.8, b = 1.2, v_a = 0.09, v_b = 0.04, c = 0.03;
  const double p = 2.0, r = 0.5;
  const LtvModel model(Horizon(2, 0.1), Dimensions(1, 1),
                       {Mat::Constant(1, 1, a), Mat::Constant(1, 1, a)},
                       {Mat::Constant(1, 1, b), Mat::Constant(1, 1, b)});
  auto belief = ModelBelief::from_model(model, 0.0, 1.0, 1.0);
  Mat cov(2, 2);
  cov << v_a, c, c, v_b;
  belief.steps[0].cov = cov;

  const auto terms =
      expectation_terms(belief.steps[0], belief.dims,
                        Mat::Constant(1, 1, p), Mat::Constant(1, 1, r));
  CHECK(terms.theta(0, 0) == doctest::Approx(r + p * (b * b + v_b)));
  CHECK(terms.psi(0, 0) == doctest::Approx(p * (a * b + c)));
  CHECK(terms.m_mat(0, 0) == doctest::Approx(p * (a * a + v_a)));
  CHECK(terms.gamma_aa(0, 0) == doctest::Approx(p * v_a));
  CHECK(terms.gamma_ba(0, 0) == doctest::Approx(p * c));
}

TEST_CASE("expectation terms agree with Monte Carlo sampling") {
  const auto model = random_model(110, 3, 2, 2);
  const auto belief = random_belief(model, 111, 0.3);
  auto rng = make_rng(112);
  const Mat p = random_psd(rng, 2) + Mat::Identity(2, 2);
  const Mat r = 0.2 * Mat::Identity(2, 2);

  const auto exact = expectation_terms(belief.steps[0], belief.dims, p, r);
  const auto mc =
      mc_expectation_terms(belief.steps[0], belief.dims, p, 20000, rng);

  // Entrywise within 4 standard errors of the sample mean.
  auto within = [](const Mat& got, const Mat& want, const Mat& se) {
    return ((got - want).cwiseAbs() - 4.0 * se).maxCoeff() <= 0.0;
  };
  CHECK(within(exact.theta - r, mc.theta_tilde, mc.theta_se));
  CHECK(within(exact.psi, mc.psi, mc.psi_se));
  CHECK(within(exact.m_mat, mc.m_mat, mc.m_se));
}

TEST_CASE("zero-covariance gains match an independent LQR recursion") {
  for (int inst = 0; inst < 5; ++inst) {
    const auto model = random_model(120 + inst, 6, 3, 2);
    const auto w = CostWeights::uniform(6, 3, 2, 1.0, 0.1);
    const auto belief = ModelBelief::from_model(model, 0.0, 1.0, 1.0);
    const auto policy = cautious_backward_pass(belief, w, {});
    const auto lqr = lqr_design(model, w);
    CHECK(max_abs_diff_mats(policy.gains, lqr) < 1e-10);
  }
}

TEST_CASE("zero-covariance policy reproduces the dense QP minimizer") {
  // The replayed policy update (feedforward plus feedback along the
  // closed-loop rollout) must equal the batch quadratic-program solution.
  for (int inst = 0; inst < 8; ++inst) {
    const int n_steps = 2 + inst % 4;
    const int s = 1 + inst % 3;
    const int m = 1 + (inst / 2) % 3;
    const auto model = random_model(130 + inst, n_steps, s, m);
    const auto w = CostWeights::uniform(n_steps, s, m, 1.0, 0.05);
    auto rng = make_rng(140 + inst);
    const Vec e0 = random_vec(rng, s);
    const auto inputs = random_vec_series(rng, n_steps, m);
    const auto dists = random_vec_series(rng, n_steps, s);
    const auto prev = reachable_trial(model, w, e0, inputs, dists);

    const auto belief = ModelBelief::from_model(model, 0.0, 1.0, 1.0);
    const auto policy = cautious_backward_pass(belief, w, prev.raw_errors);
    const Vec replayed = replay_policy_update(model, policy, prev.raw_errors,
                                              prev.applied_inputs);
    const Vec oracle = qp_optimal_update(model, w, e0, prev.applied_inputs,
                                         dists);
    CHECK((replayed - oracle).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("full disturbance-form pass equals the simplified pass") {
  // When the disturbance estimate is consistent with the previous rollout,
  // the two backward passes are algebraically identical.
  for (int inst = 0; inst < 6; ++inst) {
    const int n_steps = 3 + inst % 3;
    const int s = 1 + inst % 2;
    const int m = 1 + inst % 2;
    const auto model = random_model(150 + inst, n_steps, s, m);
    const auto w = CostWeights::uniform(n_steps, s, m, 1.0, 0.1);
    const auto belief = random_belief(model, 151 + inst, 0.2);
    auto rng = make_rng(160 + inst);
    const Vec e0 = random_vec(rng, s);
    const auto inputs = random_vec_series(rng, n_steps, m);

    // Errors from an arbitrary rollout; disturbances then chosen so that
    // e_{j+1} = A_j e_j + B_j u_j + d_{j+1} holds under the belief mean.
    const auto errors = simulate(model, e0, inputs,
                                 random_vec_series(rng, n_steps, s));
    std::vector<Vec> dists;
    for (int j = 0; j < n_steps; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      dists.push_back(errors[ju + 1] - belief.mean_a(j) * errors[ju] -
                      belief.mean_b(j) * inputs[ju]);
    }

    const auto simple = cautious_backward_pass(belief, w, errors);
    const auto full = full_backward_pass_with_disturbance(belief, w, errors,
                                                          inputs, dists);
    CHECK(max_abs_diff_mats(simple.gains, full.gains) < 1e-9);
    CHECK(max_abs_diff(simple.feedforward, full.feedforward) < 1e-9);
    CHECK(max_abs_diff_mats(simple.riccati, full.riccati) < 1e-9);
    CHECK(max_abs_diff(simple.nu, full.nu) < 1e-9);
  }
}

TEST_CASE("disturbance-form pass with zero covariance solves the QP") {
  for (int inst = 0; inst < 5; ++inst) {
    const int n_steps = 2 + inst % 3;
    const int s = 1 + inst % 3;
    const int m = 1 + inst % 2;
    const auto model = random_model(170 + inst, n_steps, s, m);
    const auto w = CostWeights::uniform(n_steps, s, m, 1.0, 0.02);
    auto rng = make_rng(180 + inst);
    const Vec e0 = random_vec(rng, s);
    const auto inputs = random_vec_series(rng, n_steps, m);
    const auto dists = random_vec_series(rng, n_steps, s);
    const auto errors = simulate(model, e0, inputs, dists);

    const auto belief = ModelBelief::from_model(model, 0.0, 1.0, 1.0);
    const auto policy = full_backward_pass_with_disturbance(
        belief, w, errors, inputs, dists);
    const Vec replayed =
        replay_policy_update(model, policy, errors, inputs);
    const Vec oracle = qp_optimal_update(model, w, e0, inputs, dists);
    CHECK((replayed - oracle).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("model uncertainty shrinks the commanded correction") {
  // Scalar system: growing input variance must shrink the feedforward
  // magnitude monotonically (classical cautious-control behavior).
  const LtvModel model(
      Horizon(4, 0.1), Dimensions(1, 1),
      std::vector<Mat>(4, Mat::Constant(1, 1, 0.9)),
      std::vector<Mat>(4, Mat::Constant(1, 1, 1.0)));
  const auto w = CostWeights::uniform(4, 1, 1, 1.0, 1e-3);
  const std::vector<Vec> errors(5, Vec::Constant(1, 1.0));

  double prev_norm = std::numeric_limits<double>::infinity();
  for (const double var : {0.0, 0.1, 1.0, 10.0}) {
    auto belief = ModelBelief::from_model(model, 0.0, 1.0, 1.0);
    for (auto& step : belief.steps) {
      step.cov = Mat::Zero(2, 2);
      step.cov(1, 1) = var;  // variance on the B entry
    }
    const auto policy = cautious_backward_pass(belief, w, errors);
    double norm_sq = 0.0;
    for (const auto& f : policy.feedforward) norm_sq += f.squaredNorm();
    CHECK(norm_sq < prev_norm);
    prev_norm = norm_sq;
  }
}

TEST_CASE("value recursion stays consistent and positive semidefinite") {
  const auto model = random_model(190, 5, 3, 2);
  const auto w = CostWeights::uniform(5, 3, 2, 1.0, 0.1);
  const auto belief = random_belief(model, 191, 0.4);
  auto rng = make_rng(192);
  std::vector<Vec> errors;
  for (int j = 0; j <= 5; ++j) errors.push_back(random_vec(rng, 3));

  const auto policy = cautious_backward_pass(belief, w, errors);
  for (const auto& p : policy.riccati) {
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::SelfAdjointEigenSolver<Mat> es(p);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }

  // Stationarity: the feedforward satisfies Theta f = -alpha where alpha is
  // reconstructed from the stored value-function pieces.
  for (int j = 0; j < 5; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const auto terms = expectation_terms(belief.steps[ju], belief.dims,
                                         policy.riccati[ju + 1],
                                         w.r_mats[ju]);
    const Vec alpha = belief.mean_b(j).transpose() * policy.nu[ju + 1];
    const Vec residual = terms.theta * policy.feedforward[ju] + alpha;
    CHECK(residual.cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("policy input update combines feedforward and feedback") {
  const auto model = random_model(195, 3, 2, 2);
  const auto w = CostWeights::uniform(3, 2, 2, 1.0, 0.1);
  const auto belief = random_belief(model, 196, 0.1);
  auto rng = make_rng(197);
  std::vector<Vec> errors;
  for (int j = 0; j <= 3; ++j) errors.push_back(random_vec(rng, 2));
  const auto policy = cautious_backward_pass(belief, w, errors);

  const Vec e = random_vec(rng, 2);
  const Vec got = policy.input_update(1, e);
  const Vec want =
      policy.feedforward[1] + policy.gains[1] * (e - policy.anchors[1]);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(policy.input_update(3, e), std::out_of_range);
}

TEST_CASE("caution bound handles edge cases") {
  CHECK(markov_caution_bound(4.0, 1.0) == doctest::Approx(0.25));
  CHECK(markov_caution_bound(1.0, 1.0) == doctest::Approx(1.0));
  CHECK(markov_caution_bound(1.0, 0.0) == doctest::Approx(0.0));
  CHECK(std::isinf(markov_caution_bound(0.0, 1.0)));
  CHECK_THROWS_AS(markov_caution_bound(-1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(markov_caution_bound(1.0, -1.0), std::invalid_argument);
}

TEST_CASE("non-finite beliefs are rejected with a step-indexed message") {
  const auto model = random_model(198, 3, 2, 1);
  const auto w = CostWeights::uniform(3, 2, 1, 1.0, 0.1);
  auto belief = ModelBelief::from_model(model, 1e-2, 1.0, 1.0);
  belief.steps[1].mean[0] = std::nan("");
  CHECK_THROWS_AS(cautious_backward_pass(belief, w, {}),
                  std::runtime_error);
}
