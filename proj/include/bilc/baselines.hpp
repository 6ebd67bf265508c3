#pragma once
// Comparison update laws: batch lifted-pseudoinverse ILC, PD-type ILC, plain
// (certainty-equivalent) recursive ILC, and standalone finite-horizon LQR
// design. lqr_design is implemented independently of the cautious pass so the
// two can serve as oracles for each other.

#include "bilc/cautious.hpp"
#include "bilc/lifted.hpp"
#include "bilc/types.hpp"

#include <string>

namespace bilc {

enum class LawKind { kBatchPinv, kPdType, kRecursivePlain, kBayesCautious };

std::string law_kind_name(LawKind kind);
LawKind parse_law_kind(const std::string& name);

/// Update-law selection plus the scalar parameters the variants need.
struct IlcUpdateLaw {
  LawKind kind = LawKind::kBayesCautious;
  double rate = 1.0;    // batch law learning rate, in (0, 1]
  double p_gain = 0.0;  // PD law proportional gain
  double d_gain = 0.0;  // PD law derivative gain

  void validate() const;  // throws std::invalid_argument
};

/// Batch lifted update U_next = U - rate * pinv(F) * E with E the stacked
/// errors e_1..e_N and U the stacked inputs u_0..u_{N-1}. The pseudoinverse
/// truncates singular values below rel_tolerance * sigma_max; pass a
/// negative rel_tolerance for the default max(rows, cols) * machine epsilon.
/// Throws (with the condition estimate in the message) if the result is not
/// finite.
Vec batch_ilc_update(const LiftedModel& lifted, const Vec& stacked_errors,
                     const Vec& stacked_inputs, double rate,
                     double rel_tolerance = -1.0);

/// PD-type feedforward compensations du_j = p*e_j + d*(e_{j+1} - e_j)/dt for
/// j = 0..N-1 (forward differences; every step has a successor). Requires
/// input and error dimensions to coincide. `errors` holds N+1 entries.
std::vector<Vec> pd_ilc_update(const std::vector<Vec>& errors, double p_gain,
                               double d_gain, double dt);

/// Finite-horizon time-varying LQR gains by the standard Riccati backward
/// recursion: P_N = Q_N; K_j = -(R_j + B'PB)^-1 B'PA;
/// P_j = Q_j + A'PA + A'PB K_j. Returns N gain matrices (m x s).
std::vector<Mat> lqr_design(const LtvModel& model, const CostWeights& weights);

/// Certainty-equivalent recursive ILC: the cautious backward pass run on a
/// zero-covariance belief centered on `model`.
CautiousPolicy recursive_plain_update(const LtvModel& model,
                                      const CostWeights& weights,
                                      const std::vector<Vec>& prev_errors);
CautiousPolicy recursive_plain_update(const LtvModel& model,
                                      const CostWeights& weights,
                                      const TrialRecord& prev_trial);

/// Stack errors e_1..e_N (dropping the reset error e_0) into one vector.
Vec stack_tail_errors(const std::vector<Vec>& errors);
/// Stack inputs u_0..u_{N-1} into one vector.
Vec stack_inputs(const std::vector<Vec>& inputs);
/// Split a stacked input vector back into N pieces of size m.
std::vector<Vec> unstack_inputs(const Vec& stacked, int n_steps,
                                int input_dim);

}  // namespace bilc
