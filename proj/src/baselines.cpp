#include "bilc/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bilc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

std::string law_kind_name(LawKind kind) {
  switch (kind) {
    case LawKind::kBatchPinv:
      return "batch_pinv";
    case LawKind::kPdType:
      return "pd_type";
    case LawKind::kRecursivePlain:
      return "recursive_plain";
    case LawKind::kBayesCautious:
      return "bayes_cautious";
  }
  throw std::invalid_argument("unknown law kind");
}

LawKind parse_law_kind(const std::string& name) {
  if (name == "batch_pinv") return LawKind::kBatchPinv;
  if (name == "pd_type") return LawKind::kPdType;
  if (name == "recursive_plain") return LawKind::kRecursivePlain;
  if (name == "bayes_cautious") return LawKind::kBayesCautious;
  throw std::invalid_argument("unknown update law '" + name + "'");
}

void IlcUpdateLaw::validate() const {
  require(rate > 0.0 && rate <= 1.0, "learning rate must be in (0, 1]");
  require(std::isfinite(p_gain) && std::isfinite(d_gain),
          "PD gains must be finite");
}

Vec batch_ilc_update(const LiftedModel& lifted, const Vec& stacked_errors,
                     const Vec& stacked_inputs, double rate,
                     double rel_tolerance) {
  const Mat& f = lifted.f_matrix;
  require(stacked_errors.size() == f.rows(),
          "batch update: stacked errors do not match the lifted model");
  require(stacked_inputs.size() == f.cols(),
          "batch update: stacked inputs do not match the lifted model");
  require(rate > 0.0 && rate <= 1.0, "batch update: rate must be in (0, 1]");

  Eigen::BDCSVD<Mat> svd(f, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double tol = rel_tolerance >= 0.0
                         ? rel_tolerance
                         : static_cast<double>(std::max(f.rows(), f.cols())) *
                               std::numeric_limits<double>::epsilon();
  svd.setThreshold(tol);
  const Vec correction = svd.solve(stacked_errors);

  if (!correction.allFinite()) {
    std::ostringstream msg;
    msg << "batch update: pseudoinverse produced non-finite values "
           "(condition estimate "
        << lifted.condition_estimate << ")";
    throw std::runtime_error(msg.str());
  }
  return stacked_inputs - rate * correction;
}

std::vector<Vec> pd_ilc_update(const std::vector<Vec>& errors, double p_gain,
                               double d_gain, double dt) {
  require(errors.size() >= 2, "PD update: need at least two error samples");
  require(dt > 0.0, "PD update: dt must be > 0");
  std::vector<Vec> out;
  out.reserve(errors.size() - 1);
  for (std::size_t j = 0; j + 1 < errors.size(); ++j)
    out.push_back(p_gain * errors[j] +
                  (d_gain / dt) * (errors[j + 1] - errors[j]));
  return out;
}

std::vector<Mat> lqr_design(const LtvModel& model, const CostWeights& weights) {
  const int n = model.horizon.n_steps;
  require(static_cast<int>(weights.q_mats.size()) == n + 1 &&
              static_cast<int>(weights.r_mats.size()) == n,
          "lqr_design: weights horizon does not match the model");

  std::vector<Mat> gains(static_cast<std::size_t>(n));
  Mat p = weights.q_mats.back();
  for (int j = n - 1; j >= 0; --j) {
    const auto ju = static_cast<std::size_t>(j);
    const Mat& a = model.a_mats[ju];
    const Mat& b = model.b_mats[ju];
    const Mat bpb = weights.r_mats[ju] + b.transpose() * p * b;
    Eigen::LLT<Mat> llt(bpb);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("lqr_design: R + B'PB not positive definite");
    gains[ju] = -llt.solve(b.transpose() * p * a);
    p = weights.q_mats[ju] + a.transpose() * p * (a + b * gains[ju]);
    p = 0.5 * (p + p.transpose()).eval();
  }
  return gains;
}

CautiousPolicy recursive_plain_update(const LtvModel& model,
                                      const CostWeights& weights,
                                      const std::vector<Vec>& prev_errors) {
  return cautious_backward_pass(
      ModelBelief::from_model(model, /*prior_var=*/0.0, /*noise_var=*/1.0,
                              /*forget=*/1.0),
      weights, prev_errors);
}

CautiousPolicy recursive_plain_update(const LtvModel& model,
                                      const CostWeights& weights,
                                      const TrialRecord& prev_trial) {
  return recursive_plain_update(model, weights, prev_trial.filtered_errors);
}

Vec stack_tail_errors(const std::vector<Vec>& errors) {
  require(errors.size() >= 2, "stack_tail_errors: need at least two entries");
  const Eigen::Index s = errors.front().size();
  Vec out(static_cast<Eigen::Index>(errors.size() - 1) * s);
  for (std::size_t j = 1; j < errors.size(); ++j)
    out.segment(static_cast<Eigen::Index>(j - 1) * s, s) = errors[j];
  return out;
}

Vec stack_inputs(const std::vector<Vec>& inputs) {
  require(!inputs.empty(), "stack_inputs: empty sequence");
  const Eigen::Index m = inputs.front().size();
  Vec out(static_cast<Eigen::Index>(inputs.size()) * m);
  for (std::size_t j = 0; j < inputs.size(); ++j)
    out.segment(static_cast<Eigen::Index>(j) * m, m) = inputs[j];
  return out;
}

std::vector<Vec> unstack_inputs(const Vec& stacked, int n_steps,
                                int input_dim) {
  require(stacked.size() == static_cast<Eigen::Index>(n_steps) * input_dim,
          "unstack_inputs: length mismatch");
  std::vector<Vec> out(static_cast<std::size_t>(n_steps));
  for (int j = 0; j < n_steps; ++j)
    out[static_cast<std::size_t>(j)] =
        stacked.segment(static_cast<Eigen::Index>(j) * input_dim, input_dim);
  return out;
}

}  // namespace bilc
