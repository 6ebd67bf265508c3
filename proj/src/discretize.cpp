#include "bilc/discretize.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <stdexcept>

namespace bilc {

DiscretePair discretize_euler(const Mat& cont_a, const Mat& cont_b,
                              double dt) {
  if (cont_a.rows() != cont_a.cols())
    throw std::invalid_argument("discretize_euler: A must be square");
  if (cont_b.rows() != cont_a.rows())
    throw std::invalid_argument("discretize_euler: B row count must match A");
  if (!(dt > 0.0)) throw std::invalid_argument("discretize_euler: dt <= 0");
  return DiscretePair{Mat::Identity(cont_a.rows(), cont_a.cols()) + dt * cont_a,
                      dt * cont_b};
}

DiscretePair discretize_exact(const Mat& cont_a, const Mat& cont_b,
                              double dt) {
  if (cont_a.rows() != cont_a.cols())
    throw std::invalid_argument("discretize_exact: A must be square");
  if (cont_b.rows() != cont_a.rows())
    throw std::invalid_argument("discretize_exact: B row count must match A");
  if (!(dt > 0.0)) throw std::invalid_argument("discretize_exact: dt <= 0");

  const Eigen::Index s = cont_a.rows();
  const Eigen::Index m = cont_b.cols();
  Mat aug = Mat::Zero(s + m, s + m);
  aug.topLeftCorner(s, s) = dt * cont_a;
  aug.topRightCorner(s, m) = dt * cont_b;
  const Mat e = aug.exp();
  return DiscretePair{e.topLeftCorner(s, s), e.topRightCorner(s, m)};
}

}  // namespace bilc

