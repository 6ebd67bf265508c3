#pragma once
// Stacked ("lifted") representation of an LTV horizon: the block matrix F
// mapping stacked inputs (u_0 ... u_{N-1}) to their contribution to stacked
// errors (e_1 ... e_N). Block (i, j), 1-based, is
//   A_{i-1} ... A_j B_{j-1}   for j < i,
//   B_{j-1}                   for j = i,
//   0                         for j > i.
// Useful for one-shot pseudoinverse updates and as a conditioning probe; the
// condition number grows roughly exponentially with the horizon, which is
// exactly why the recursive formulation exists.

#include "bilc/types.hpp"

namespace bilc {

struct LiftedModel {
  Mat f_matrix;               // (N*s) x (N*m), block lower triangular
  double condition_estimate;  // sigma_max / sigma_min (inf if singular)
};

LiftedModel build_lifted(const LtvModel& model);

/// Just the stacked F matrix, without the (SVD-priced) condition estimate.
Mat lifted_f_matrix(const LtvModel& model);

/// Forward accumulation of the error trajectory under the model:
/// e_{j+1} = A_j e_j + B_j u_j + w_{j+1}. `disturbances` holds w_1..w_N (may
/// be empty for none). Returns e_0..e_N.
std::vector<Vec> roll_out(const LtvModel& model, const Vec& e0,
                          const std::vector<Vec>& inputs,
                          const std::vector<Vec>& disturbances = {});

}  // namespace bilc
