#pragma once
// Expected-cost backward pass over an uncertain LTV error model. Parameter
// covariances enter the Riccati recursion as additional quadratic terms, so
// large model uncertainty automatically shrinks both the feedback gains and
// the feedforward compensations ("caution"). Two algebraically equivalent
// forms are provided:
//
//   * cautious_backward_pass      — the production form. Disturbances never
//     appear; the previous trial's filtered errors drive a linear recursion
//     in nu_j, and the planned update is
//         du_j(e) = feedforward_j + K_j (e_j - anchor_j),
//     with anchor_j the previous trial's error at step j.
//   * full_backward_pass_with_disturbance — the unsimplified recursion with
//     explicit disturbance estimates d_{j+1} and linear term b_j, retained to
//     cross-check the simplification. When the supplied disturbances are the
//     mean residuals of the previous trial, d_{j+1} = e^_{j+1} - A e^_j -
//     B u_j, the two passes coincide through the identity
//     nu_j = b_j + P_j e^_j, to machine precision.
//
// Both passes use the full joint covariance of vec([A B]); the disturbance
// fluctuation implied by the previous trial is correlated with [A B], which
// contributes the cross-covariance corrections in the full form.

#include "bilc/belief.hpp"
#include "bilc/types.hpp"

namespace bilc {

/// Expectations of the quadratic forms of one backward step, evaluated from
/// the step belief and the next Riccati matrix P:
///   theta = R + E[B'PB],  psi = E[B'PA],  m_mat = E[A'PA].
/// gamma_ba and gamma_aa are the bare covariance contractions
/// <P, Cov(col, col)> (the E[...] minus its mean part), needed by the
/// disturbance-explicit recursion.
struct ExpectationTerms {
  Mat theta;     // m x m, symmetric PD (contains R)
  Mat psi;       // m x s
  Mat m_mat;     // s x s, symmetric PSD for P PSD
  Mat gamma_ba;  // m x s
  Mat gamma_aa;  // s x s
};

/// Evaluate the expectation terms for one step. Covariance entries are
/// located by the column-major parameter layout: Cov(A(c,a), A(d,b)) sits at
/// Sigma(a*s + c, b*s + d) and B blocks are offset by s^2 (see belief.hpp).
/// Throws if the belief is not dimensioned s*(s+m) or shapes disagree.
ExpectationTerms expectation_terms(const GaussianBelief& step_belief,
                                   const Dimensions& dims, const Mat& p_next,
                                   const Mat& r);

/// Time-varying affine policy produced by a backward pass. For j = 0..N-1
/// the planned input update is
///   du_j(e) = feedforward[j] + gains[j] * (e - anchors[j]);
/// riccati (P_j) and nu (nu_j) have N+1 entries with P_N the terminal weight.
struct CautiousPolicy {
  std::vector<Mat> gains;        // N, m x s
  std::vector<Vec> feedforward;  // N, m
  std::vector<Vec> anchors;      // N, s — previous-trial errors
  std::vector<Mat> riccati;      // N+1, s x s, symmetric PSD
  std::vector<Vec> nu;           // N+1, s

  int n_steps() const { return static_cast<int>(gains.size()); }
  /// feedforward[step] + gains[step] * (current_error - anchors[step]).
  Vec input_update(int step, const Vec& current_error) const;
};

/// Disturbance-free simplified backward pass. `prev_errors` holds the N+1
/// filtered errors of the previous trial (pass {} before the first trial:
/// zero anchors give zero feedforward and pure cautious feedback).
///   P_N = Q_N, nu_N = Q_N e^_N;
///   j = N-1..0:  K_j = -theta^-1 psi,
///                feedforward_j = -theta^-1 Bmean' nu_{j+1},
///                P_j  = Q_j + m_mat - psi' theta^-1 psi,
///                nu_j = (Amean + Bmean K_j)' nu_{j+1} + Q_j e^_j.
/// theta solves use a Cholesky factorization with a jitter escalation
/// (0, 1e-12, 1e-10, 1e-8) and throw if still indefinite. Throws on
/// non-finite intermediates, naming the step.
CautiousPolicy cautious_backward_pass(const ModelBelief& belief,
                                      const CostWeights& weights,
                                      const std::vector<Vec>& prev_errors);

/// Convenience overload reading the filtered errors of a trial record.
CautiousPolicy cautious_backward_pass(const ModelBelief& belief,
                                      const CostWeights& weights,
                                      const TrialRecord& prev_trial);

/// Unsimplified backward pass with explicit disturbance estimates.
/// `disturbances[j]` is d_{j+1}, the disturbance entering the step-j
/// transition; `prev_errors` (N+1) and `prev_inputs` (N) are the previous
/// trial's filtered errors and total applied inputs.
///   b_N = 0;
///   j = N-1..0:  alpha_j = Bmean' P_{j+1} (Bmean u_j + d_{j+1})
///                          - gamma_ba e^_j + Bmean' b_{j+1},
///                feedforward_j = K_j e^_j - theta^-1 alpha_j  (normalized to
///                                the same difference form as above),
///                b_j = (Amean + Bmean K_j)' (b_{j+1}
///                          + P_{j+1} (Bmean u_j + d_{j+1}))
///                      - (gamma_aa + K_j' gamma_ba) e^_j.
/// The returned nu field stores b_j + P_j e^_j so the two passes are
/// field-by-field comparable.
CautiousPolicy full_backward_pass_with_disturbance(
    const ModelBelief& belief, const CostWeights& weights,
    const std::vector<Vec>& prev_errors, const std::vector<Vec>& prev_inputs,
    const std::vector<Vec>& disturbances);

/// Markov-inequality diagnostic: an upper bound on the probability that the
/// next trial's step cost exceeds the previous one,
///   P(e'Qe >= e^'Qe^) <= E[e'Qe] / e^'Qe^.
/// Returns +infinity when the previous cost is zero (bound undefined).
double markov_caution_bound(double prev_norm_sq, double expected_next_cost);

}  // namespace bilc
