#include "bilc/lifted.hpp"

#include <limits>
#include <stdexcept>

namespace bilc {

Mat lifted_f_matrix(const LtvModel& model) {
  const int n = model.horizon.n_steps;
  const int s = model.dims.state_dim;
  const int m = model.dims.input_dim;

  Mat f = Mat::Zero(static_cast<Eigen::Index>(n) * s,
                    static_cast<Eigen::Index>(n) * m);
  // Fill column-block by column-block, accumulating the A-products downward.
  for (int c = 0; c < n; ++c) {
    Mat block = model.b_mats[c];
    f.block(static_cast<Eigen::Index>(c) * s, static_cast<Eigen::Index>(c) * m,
            s, m) = block;
    for (int r = c + 1; r < n; ++r) {
      block = model.a_mats[r] * block;
      f.block(static_cast<Eigen::Index>(r) * s,
              static_cast<Eigen::Index>(c) * m, s, m) = block;
    }
  }
  return f;
}

LiftedModel build_lifted(const LtvModel& model) {
  Mat f = lifted_f_matrix(model);
  Eigen::BDCSVD<Mat> svd(f);
  const auto& sv = svd.singularValues();
  double cond = std::numeric_limits<double>::infinity();
  if (sv.size() > 0 && sv[sv.size() - 1] > 0.0) cond = sv[0] / sv[sv.size() - 1];

  return LiftedModel{std::move(f), cond};
}

std::vector<Vec> roll_out(const LtvModel& model, const Vec& e0,
                          const std::vector<Vec>& inputs,
                          const std::vector<Vec>& disturbances) {
  const std::size_t n = static_cast<std::size_t>(model.horizon.n_steps);
  if (inputs.size() != n)
    throw std::invalid_argument("roll_out: need one input per step");
  if (!disturbances.empty() && disturbances.size() != n)
    throw std::invalid_argument("roll_out: need one disturbance per step");
  std::vector<Vec> errs(n + 1);
  errs[0] = e0;
  for (std::size_t j = 0; j < n; ++j) {
    errs[j + 1] = model.a_mats[j] * errs[j] + model.b_mats[j] * inputs[j];
    if (!disturbances.empty()) errs[j + 1] += disturbances[j];
  }
  return errs;
}

}  // namespace bilc
