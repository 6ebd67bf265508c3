#pragma once
// Core containers for discrete linear time-varying (LTV) tracking problems.
//
// Conventions used throughout the library:
//   * a horizon of N steps has N+1 knot points j = 0..N and N input slots
//     j = 0..N-1;
//   * error dynamics   e_{j+1} = A_j e_j + B_j du_j + d_{j+1};
//   * the tracking objective sums e_j' Q_j e_j over j = 1..N plus
//     du_j' R_j du_j over j = 0..N-1 (the j = 0 error is fixed by the reset
//     and never enters the cost).

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace bilc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Discrete horizon: N transitions of duration dt. Throws on N < 2 or
/// dt <= 0.
struct Horizon {
  int n_steps;
  double dt;

  Horizon(int n_steps, double dt);
  double duration() const { return n_steps * dt; }
};

/// Problem dimensions: state (error) size s and input size m, both >= 1.
struct Dimensions {
  int state_dim;
  int input_dim;

  Dimensions(int state_dim, int input_dim);
  /// Length of vec([A B]) for one step, s*(s+m).
  int param_dim() const { return state_dim * (state_dim + input_dim); }
};

/// Time-varying discrete model: A_j (s x s) and B_j (s x m) for j = 0..N-1.
struct LtvModel {
  Horizon horizon;
  Dimensions dims;
  std::vector<Mat> a_mats;
  std::vector<Mat> b_mats;

  LtvModel(Horizon horizon, Dimensions dims, std::vector<Mat> a_mats,
           std::vector<Mat> b_mats);
};

/// Reference trajectory (N+1 points) plus the nominal inputs that should
/// realize it under the nominal model (N points; zero for abstract plants).
struct Trajectory {
  std::vector<Vec> refs;
  std::vector<Vec> nominal_inputs;

  Trajectory() = default;
  Trajectory(std::vector<Vec> refs, std::vector<Vec> nominal_inputs);
};

/// Tracking weights. Q_j (j = 0..N, PSD; Q_0 is carried for uniform indexing
/// but never enters the cost) and R_j (j = 0..N-1, PD).
struct CostWeights {
  std::vector<Mat> q_mats;
  std::vector<Mat> r_mats;

  CostWeights(std::vector<Mat> q_mats, std::vector<Mat> r_mats);
  /// Constant Q = q_scale*I_s, R = r_scale*I_m over an N-step horizon.
  static CostWeights uniform(int n_steps, int state_dim, int input_dim,
                             double q_scale, double r_scale);
};

/// Weighted error norm sqrt(sum_{j=1..N} e_j' Q_j e_j). `errors` holds N+1
/// entries including the (excluded) j = 0 reset error.
double error_norm(const std::vector<Vec>& errors, const CostWeights& weights);

/// Everything recorded about one executed trial. `applied_inputs` are the
/// *total* compensations relative to the nominal inputs, i.e. feedforward
/// plus whatever feedback was realized online; storing totals (rather than a
/// feedforward/feedback split) is what makes the difference-form feedback
/// K(e_new - e_hat_prev) compose across iterations without double counting.
struct TrialRecord {
  int iteration;
  std::vector<Vec> raw_errors;       // N+1
  std::vector<Vec> filtered_errors;  // N+1
  std::vector<Vec> applied_inputs;   // N
  double error_norm;                 // of filtered errors, recomputed here
  bool diverged;

  TrialRecord(int iteration, std::vector<Vec> raw_errors,
              std::vector<Vec> filtered_errors,
              std::vector<Vec> applied_inputs, const CostWeights& weights,
              bool diverged = false);
};

}  // namespace bilc
