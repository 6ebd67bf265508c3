#include "bilc/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bilc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool is_finite(const Mat& m) { return m.allFinite(); }

void check_symmetric_psd(const Mat& q, const std::string& name) {
  require(q.rows() == q.cols(), name + " must be square");
  double scale = std::max(1.0, q.cwiseAbs().maxCoeff());
  require((q - q.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
          name + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(q, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() >= -1e-10 * scale,
          name + " must be positive semidefinite");
}

void check_symmetric_pd(const Mat& r, const std::string& name) {
  require(r.rows() == r.cols(), name + " must be square");
  double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  require((r - r.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
          name + " must be symmetric");
  Eigen::LLT<Mat> llt(r);
  require(llt.info() == Eigen::Success,
          name + " must be positive definite");
}

}  // namespace

Horizon::Horizon(int n_steps_, double dt_) : n_steps(n_steps_), dt(dt_) {
  require(n_steps >= 2, "horizon must have at least 2 steps");
  require(dt > 0.0 && std::isfinite(dt), "step duration must be positive");
}

Dimensions::Dimensions(int state_dim_, int input_dim_)
    : state_dim(state_dim_), input_dim(input_dim_) {
  require(state_dim >= 1 && input_dim >= 1, "dimensions must be >= 1");
}

LtvModel::LtvModel(Horizon horizon_, Dimensions dims_,
                   std::vector<Mat> a_mats_, std::vector<Mat> b_mats_)
    : horizon(horizon_),
      dims(dims_),
      a_mats(std::move(a_mats_)),
      b_mats(std::move(b_mats_)) {
  const std::size_t n = static_cast<std::size_t>(horizon.n_steps);
  require(a_mats.size() == n && b_mats.size() == n,
          "model needs one (A, B) pair per step");
  for (std::size_t j = 0; j < n; ++j) {
    require(a_mats[j].rows() == dims.state_dim &&
                a_mats[j].cols() == dims.state_dim,
            "A_" + std::to_string(j) + " has wrong shape");
    require(b_mats[j].rows() == dims.state_dim &&
                b_mats[j].cols() == dims.input_dim,
            "B_" + std::to_string(j) + " has wrong shape");
    require(is_finite(a_mats[j]) && is_finite(b_mats[j]),
            "model matrices must be finite");
  }
}

Trajectory::Trajectory(std::vector<Vec> refs_,
                       std::vector<Vec> nominal_inputs_)
    : refs(std::move(refs_)), nominal_inputs(std::move(nominal_inputs_)) {
  require(!refs.empty() && refs.size() == nominal_inputs.size() + 1,
          "trajectory needs N+1 references and N nominal inputs");
}

CostWeights::CostWeights(std::vector<Mat> q_mats_, std::vector<Mat> r_mats_)
    : q_mats(std::move(q_mats_)), r_mats(std::move(r_mats_)) {
  require(q_mats.size() == r_mats.size() + 1,
          "weights need N+1 Q matrices and N R matrices");
  require(r_mats.size() >= 1, "weights need at least one step");
  for (std::size_t j = 0; j < q_mats.size(); ++j)
    check_symmetric_psd(q_mats[j], "Q_" + std::to_string(j));
  for (std::size_t j = 0; j < r_mats.size(); ++j)
    check_symmetric_pd(r_mats[j], "R_" + std::to_string(j));
}

CostWeights CostWeights::uniform(int n_steps, int state_dim, int input_dim,
                                 double q_scale, double r_scale) {
  std::vector<Mat> qs(static_cast<std::size_t>(n_steps) + 1,
                      q_scale * Mat::Identity(state_dim, state_dim));
  std::vector<Mat> rs(static_cast<std::size_t>(n_steps),
                      r_scale * Mat::Identity(input_dim, input_dim));
  return CostWeights(std::move(qs), std::move(rs));
}

double error_norm(const std::vector<Vec>& errors, const CostWeights& weights) {
  require(errors.size() == weights.q_mats.size(),
          "error_norm: need one error per knot point");
  double acc = 0.0;
  for (std::size_t j = 1; j < errors.size(); ++j)
    acc += errors[j].dot(weights.q_mats[j] * errors[j]);
  return std::sqrt(acc);
}

TrialRecord::TrialRecord(int iteration_, std::vector<Vec> raw_errors_,
                         std::vector<Vec> filtered_errors_,
                         std::vector<Vec> applied_inputs_,
                         const CostWeights& weights, bool diverged_)
    : iteration(iteration_),
      raw_errors(std::move(raw_errors_)),
      filtered_errors(std::move(filtered_errors_)),
      applied_inputs(std::move(applied_inputs_)),
      error_norm(0.0),
      diverged(diverged_) {
  require(raw_errors.size() == filtered_errors.size(),
          "trial: raw and filtered error counts differ");
  require(raw_errors.size() == applied_inputs.size() + 1,
          "trial: need N+1 errors and N inputs");
  error_norm = bilc::error_norm(filtered_errors, weights);
}

}  // namespace bilc
