#include "bilc/cautious.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace bilc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Cholesky with jitter escalation; throws when theta is numerically
/// indefinite even after the largest jitter.
Eigen::LLT<Mat> factor_theta(const Mat& theta, int step) {
  static constexpr double kJitters[] = {0.0, 1e-12, 1e-10, 1e-8};
  for (double jitter : kJitters) {
    Mat t = theta;
    t.diagonal().array() += jitter;
    Eigen::LLT<Mat> llt(t);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw std::runtime_error(
      "backward pass: input-quadratic term is not positive definite at step " +
      std::to_string(step));
}

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& m, const char* what,
                  int step) {
  if (!m.allFinite())
    throw std::runtime_error(std::string("backward pass: non-finite ") + what +
                             " at step " + std::to_string(step));
}

/// Gains, Riccati matrices and per-step expectation terms shared by both
/// pass variants; only the linear recursions differ.
struct BackwardCore {
  std::vector<ExpectationTerms> terms;       // N
  std::vector<Eigen::LLT<Mat>> theta_facts;  // N
  std::vector<Mat> gains;                    // N
  std::vector<Mat> riccati;                  // N+1
};

BackwardCore backward_core(const ModelBelief& belief,
                           const CostWeights& weights) {
  const int n = belief.n_steps();
  require(static_cast<int>(weights.q_mats.size()) == n + 1 &&
              static_cast<int>(weights.r_mats.size()) == n,
          "backward pass: weights horizon does not match the belief");

  BackwardCore core;
  core.terms.resize(static_cast<std::size_t>(n));
  core.theta_facts.resize(static_cast<std::size_t>(n));
  core.gains.resize(static_cast<std::size_t>(n));
  core.riccati.resize(static_cast<std::size_t>(n) + 1);
  core.riccati.back() = weights.q_mats.back();

  for (int j = n - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    auto& t = core.terms[ju];
    t = expectation_terms(belief.steps[ju], belief.dims, core.riccati[ju + 1],
                          weights.r_mats[ju]);
    check_finite(t.theta, "theta", j);
    check_finite(t.psi, "psi", j);
    check_finite(t.m_mat, "m_mat", j);

    core.theta_facts[ju] = factor_theta(t.theta, j);
    core.gains[ju] = -core.theta_facts[ju].solve(t.psi);

    // P_j = Q_j + m_mat - psi' theta^-1 psi, symmetrized.
    Mat p = weights.q_mats[ju] + t.m_mat + t.psi.transpose() * core.gains[ju];
    core.riccati[ju] = 0.5 * (p + p.transpose());
    check_finite(core.riccati[ju], "riccati matrix", j);
  }
  return core;
}

std::vector<Vec> anchors_or_zero(const std::vector<Vec>& prev_errors, int n,
                                 int state_dim) {
  if (prev_errors.empty())
    return std::vector<Vec>(static_cast<std::size_t>(n) + 1,
                            Vec::Zero(state_dim));
  require(static_cast<int>(prev_errors.size()) == n + 1,
          "backward pass: previous errors must hold N+1 entries");
  for (const auto& e : prev_errors)
    require(e.size() == state_dim && e.allFinite(),
            "backward pass: previous error has wrong size or is non-finite");
  return prev_errors;
}

}  // namespace

ExpectationTerms expectation_terms(const GaussianBelief& step_belief,
                                   const Dimensions& dims, const Mat& p_next,
                                   const Mat& r) {
  const int s = dims.state_dim;
  const int m = dims.input_dim;
  require(step_belief.mean.size() == dims.param_dim(),
          "expectation_terms: belief mean does not match the dimensions");
  require(step_belief.cov.rows() == dims.param_dim() &&
              step_belief.cov.cols() == dims.param_dim(),
          "expectation_terms: belief covariance does not match");
  require(p_next.rows() == s && p_next.cols() == s,
          "expectation_terms: P has wrong shape");
  require(r.rows() == m && r.cols() == m,
          "expectation_terms: R has wrong shape");

  const Mat a_bar = unpack_a(step_belief.mean, dims);
  const Mat b_bar = unpack_b(step_belief.mean, dims);
  const Mat& cov = step_belief.cov;

  // <P, Cov(col(r0), col(c0))> with columns addressed by their parameter
  // offsets; the Frobenius product contracts the s x s block against P.
  const auto contract = [&](int r0, int c0) {
    return (p_next.array() * cov.block(r0, c0, s, s).array()).sum();
  };
  const auto a_off = [&](int col) { return col * s; };
  const auto b_off = [&](int col) { return s * s + col * s; };

  ExpectationTerms t;
  t.gamma_aa = Mat(s, s);
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b) t.gamma_aa(a, b) = contract(a_off(a), a_off(b));
  t.gamma_ba = Mat(m, s);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < s; ++b) t.gamma_ba(a, b) = contract(b_off(a), a_off(b));
  Mat gamma_bb(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) gamma_bb(a, b) = contract(b_off(a), b_off(b));

  t.m_mat = a_bar.transpose() * p_next * a_bar + t.gamma_aa;
  t.m_mat = 0.5 * (t.m_mat + t.m_mat.transpose()).eval();
  t.psi = b_bar.transpose() * p_next * a_bar + t.gamma_ba;
  t.theta = r + b_bar.transpose() * p_next * b_bar + gamma_bb;
  t.theta = 0.5 * (t.theta + t.theta.transpose()).eval();
  return t;
}

Vec CautiousPolicy::input_update(int step, const Vec& current_error) const {
  if (step < 0 || step >= n_steps())
    throw std::out_of_range("policy step index out of range");
  const auto j = static_cast<std::size_t>(step);
  return feedforward[j] + gains[j] * (current_error - anchors[j]);
}

CautiousPolicy cautious_backward_pass(const ModelBelief& belief,
                                      const CostWeights& weights,
                                      const std::vector<Vec>& prev_errors) {
  const int n = belief.n_steps();
  const auto anchors = anchors_or_zero(prev_errors, n, belief.dims.state_dim);
  auto core = backward_core(belief, weights);

  CautiousPolicy policy;
  policy.gains = std::move(core.gains);
  policy.riccati = std::move(core.riccati);
  policy.feedforward.resize(static_cast<std::size_t>(n));
  policy.nu.resize(static_cast<std::size_t>(n) + 1);
  policy.anchors.assign(anchors.begin(), anchors.end() - 1);

  policy.nu.back() = weights.q_mats.back() * anchors.back();
  for (int j = n - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    const Mat a_bar = belief.mean_a(j);
    const Mat b_bar = belief.mean_b(j);
    policy.feedforward[ju] =
        -core.theta_facts[ju].solve(b_bar.transpose() * policy.nu[ju + 1]);
    policy.nu[ju] =
        (a_bar + b_bar * policy.gains[ju]).transpose() * policy.nu[ju + 1] +
        weights.q_mats[ju] * anchors[ju];
    check_finite(policy.nu[ju], "nu", j);
  }
  return policy;
}

CautiousPolicy cautious_backward_pass(const ModelBelief& belief,
                                      const CostWeights& weights,
                                      const TrialRecord& prev_trial) {
  return cautious_backward_pass(belief, weights, prev_trial.filtered_errors);
}

CautiousPolicy full_backward_pass_with_disturbance(
    const ModelBelief& belief, const CostWeights& weights,
    const std::vector<Vec>& prev_errors, const std::vector<Vec>& prev_inputs,
    const std::vector<Vec>& disturbances) {
  const int n = belief.n_steps();
  const int s = belief.dims.state_dim;
  const auto anchors = anchors_or_zero(prev_errors, n, s);
  require(static_cast<int>(prev_inputs.size()) == n,
          "full backward pass: previous inputs must hold N entries");
  require(static_cast<int>(disturbances.size()) == n,
          "full backward pass: disturbances must hold N entries");
  for (const auto& u : prev_inputs)
    require(u.size() == belief.dims.input_dim && u.allFinite(),
            "full backward pass: previous input has wrong size or is "
            "non-finite");
  for (const auto& d : disturbances)
    require(d.size() == s && d.allFinite(),
            "full backward pass: disturbance has wrong size or is non-finite");

  auto core = backward_core(belief, weights);

  CautiousPolicy policy;
  policy.gains = std::move(core.gains);
  policy.riccati = std::move(core.riccati);
  policy.feedforward.resize(static_cast<std::size_t>(n));
  policy.nu.resize(static_cast<std::size_t>(n) + 1);
  policy.anchors.assign(anchors.begin(), anchors.end() - 1);

  Vec b_next = Vec::Zero(s);
  policy.nu.back() = policy.riccati.back() * anchors.back();  // b_N = 0
  for (int j = n - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    const Mat a_bar = belief.mean_a(j);
    const Mat b_bar = belief.mean_b(j);
    const Mat& p_next = policy.riccati[ju + 1];
    const auto& t = core.terms[ju];
    const Mat& gain = policy.gains[ju];

    const Vec driven = b_bar * prev_inputs[ju] + disturbances[ju];
    const Vec alpha = b_bar.transpose() * (p_next * driven + b_next) -
                      t.gamma_ba * anchors[ju];
    policy.feedforward[ju] =
        gain * anchors[ju] - core.theta_facts[ju].solve(alpha);

    const Vec b_cur =
        (a_bar + b_bar * gain).transpose() * (b_next + p_next * driven) -
        (t.gamma_aa + gain.transpose() * t.gamma_ba) * anchors[ju];
    check_finite(b_cur, "linear value term", j);
    policy.nu[ju] = b_cur + policy.riccati[ju] * anchors[ju];
    b_next = b_cur;
  }
  return policy;
}

double markov_caution_bound(double prev_norm_sq, double expected_next_cost) {
  require(prev_norm_sq >= 0.0 && expected_next_cost >= 0.0,
          "markov_caution_bound: costs must be non-negative");
  if (prev_norm_sq == 0.0) return std::numeric_limits<double>::infinity();
  return expected_next_cost / prev_norm_sq;
}

}  // namespace bilc
