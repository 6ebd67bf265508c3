#pragma once
// Forward-Euler discretization of continuous-time linear(ized) dynamics.
// Chosen over exact integration so the model class matches what the
// structured adaptation laws assume; the O(dt^2) defect is part of the
// model error the learning absorbs.

#include "bilc/types.hpp"

namespace bilc {

/// x_{j+1} = (I + dt*A_c) x_j + dt*B_c u_j.
struct DiscretePair {
  Mat a;
  Mat b;
};

DiscretePair discretize_euler(const Mat& cont_a, const Mat& cont_b, double dt);

/// Exact zero-order-hold discretization via the exponential of the augmented
/// matrix [[A_c, B_c], [0, 0]] * dt. Optional alternative to the Euler
/// default; also serves as the convergence oracle for it.
DiscretePair discretize_exact(const Mat& cont_a, const Mat& cont_b, double dt);

}  // namespace bilc
