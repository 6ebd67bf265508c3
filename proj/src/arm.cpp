#include "bilc/arm.hpp"

#include "bilc/discretize.hpp"
#include "bilc/seeding.hpp"
#include "bilc/signal.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>

namespace bilc {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// The seven theta entries that reach the planar dynamics.
struct ActiveParams {
  double i1;   // link-1 I_zz about joint 1
  double h1x;  // link-1 first moment, link frame
  double h1y;
  double m2;   // outboard mass
  double h2x;  // link-2 first moment, link frame
  double h2y;
  double i2;   // link-2 I_zz about joint 2
};

ActiveParams active(const TwoLinkArm& arm) {
  return ActiveParams{arm.theta[9],  arm.theta[1],  arm.theta[2],
                      arm.theta[10], arm.theta[11], arm.theta[12],
                      arm.theta[19]};
}

void check_arm(const TwoLinkArm& arm) {
  require(arm.theta.size() == 20, "arm parameter vector must have 20 entries");
  require(arm.viscous.size() == 2, "arm needs one viscous coefficient per joint");
  require(arm.l1 > 0.0 && arm.l2 > 0.0, "link lengths must be positive");
  require(arm.theta.allFinite() && arm.viscous.allFinite() &&
              std::isfinite(arm.gravity),
          "arm parameters must be finite");
}

void check_joint_vec(const Vec& v, const char* what) {
  require(v.size() == 2, std::string(what) + " must have 2 entries");
}

// Geometry-dependent shorthands: k2 rotates the link-2 first moment onto the
// link-1 axis, w2 onto its normal.
struct Trig {
  double s1, c1, s2, c2, s12, c12, k2, w2;
};

Trig trig(const TwoLinkArm& arm, const Vec& q) {
  const ActiveParams p = active(arm);
  Trig t;
  t.s1 = std::sin(q[0]);
  t.c1 = std::cos(q[0]);
  t.s2 = std::sin(q[1]);
  t.c2 = std::cos(q[1]);
  t.s12 = std::sin(q[0] + q[1]);
  t.c12 = std::cos(q[0] + q[1]);
  t.k2 = p.h2x * t.c2 - p.h2y * t.s2;
  t.w2 = p.h2x * t.s2 + p.h2y * t.c2;
  return t;
}

Mat mass_matrix_impl(const TwoLinkArm& arm, const Trig& t) {
  const ActiveParams p = active(arm);
  Mat m(2, 2);
  m(0, 0) = p.i1 + p.m2 * arm.l1 * arm.l1 + p.i2 + 2.0 * arm.l1 * t.k2;
  m(0, 1) = p.i2 + arm.l1 * t.k2;
  m(1, 0) = m(0, 1);
  m(1, 1) = p.i2;
  return m;
}

// Velocity-product torques C(q, qd) qd.
Vec coriolis_vector(const TwoLinkArm& arm, const Trig& t, const Vec& qd) {
  Vec c(2);
  c[0] = -arm.l1 * t.w2 * qd[1] * (2.0 * qd[0] + qd[1]);
  c[1] = arm.l1 * t.w2 * qd[0] * qd[0];
  return c;
}

Vec gravity_vector(const TwoLinkArm& arm, const Trig& t) {
  const ActiveParams p = active(arm);
  Vec g(2);
  g[0] = arm.gravity * (p.h1x * t.c1 - p.h1y * t.s1 +
                        p.m2 * arm.l1 * t.c1 + p.h2x * t.c12 - p.h2y * t.s12);
  g[1] = arm.gravity * (p.h2x * t.c12 - p.h2y * t.s12);
  return g;
}

Mat inverse_2x2(const Mat& m) {
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  const double scale = m.cwiseAbs().maxCoeff();
  if (!(std::abs(det) > 1e-12 * std::max(1.0, scale * scale)))
    throw std::runtime_error("inertia matrix is numerically singular");
  Mat inv(2, 2);
  inv(0, 0) = m(1, 1) / det;
  inv(0, 1) = -m(0, 1) / det;
  inv(1, 0) = -m(1, 0) / det;
  inv(1, 1) = m(0, 0) / det;
  return inv;
}

Vec state_derivative(const TwoLinkArm& arm, const Vec& state, const Vec& tau) {
  Vec out(4);
  out.head(2) = state.tail(2);
  out.tail(2) = forward_dynamics(arm, state.head(2), state.tail(2), tau);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// TwoLinkArm
// ---------------------------------------------------------------------------

const std::vector<int>& TwoLinkArm::active_indices() {
  static const std::vector<int> idx = {1, 2, 9, 10, 11, 12, 19};
  return idx;
}

TwoLinkArm TwoLinkArm::default_true() {
  TwoLinkArm arm;
  arm.l1 = 0.5;
  arm.l2 = 0.4;
  arm.gravity = 9.81;
  arm.theta = Vec::Zero(20);
  // Point masses at the link tips: h = m*l along the link axis, I_zz = m*l^2
  // about the joint.
  const double m1 = 2.0, m2 = 1.0;
  arm.theta[0] = m1;
  arm.theta[1] = m1 * arm.l1;           // h1x
  arm.theta[9] = m1 * arm.l1 * arm.l1;  // I1zz
  arm.theta[10] = m2;
  arm.theta[11] = m2 * arm.l2;           // h2x
  arm.theta[19] = m2 * arm.l2 * arm.l2;  // I2zz
  arm.viscous = Vec::Constant(2, 0.1);
  return arm;
}

TwoLinkArm TwoLinkArm::perturbed(double lo, double hi,
                                 std::uint64_t seed) const {
  require(lo > 0.0 && hi >= lo, "perturbation range must satisfy 0 < lo <= hi");
  TwoLinkArm out = *this;
  std::mt19937_64 rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  for (int idx : active_indices()) out.theta[idx] *= unif(rng);
  out.viscous.setZero();  // friction is never part of the model
  return out;
}

void TwoLinkArm::validate() const {
  check_arm(*this);
  for (int link = 0; link < 2; ++link) {
    const int base = 10 * link;
    require(theta[base] > 0.0, "link masses must be positive");
    Mat inertia(3, 3);
    inertia << theta[base + 4], theta[base + 5], theta[base + 6],
        theta[base + 5], theta[base + 7], theta[base + 8],
        theta[base + 6], theta[base + 8], theta[base + 9];
    Eigen::SelfAdjointEigenSolver<Mat> es(inertia);
    const double scale = std::max(1.0, inertia.cwiseAbs().maxCoeff());
    require(es.eigenvalues().minCoeff() >= -1e-12 * scale,
            "assembled link inertia tensor must be PSD");
  }
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

Mat mass_matrix(const TwoLinkArm& arm, const Vec& q) {
  check_arm(arm);
  check_joint_vec(q, "joint positions");
  return mass_matrix_impl(arm, trig(arm, q));
}

Vec forward_dynamics(const TwoLinkArm& arm, const Vec& q, const Vec& qd,
                     const Vec& tau) {
  check_arm(arm);
  check_joint_vec(q, "joint positions");
  check_joint_vec(qd, "joint velocities");
  check_joint_vec(tau, "joint torques");
  const Trig t = trig(arm, q);
  const Vec bias = coriolis_vector(arm, t, qd) + gravity_vector(arm, t) +
                   arm.viscous.cwiseProduct(qd);
  return inverse_2x2(mass_matrix_impl(arm, t)) * (tau - bias);
}

Vec inverse_dynamics(const TwoLinkArm& arm, const Vec& q, const Vec& qd,
                     const Vec& qdd) {
  check_arm(arm);
  check_joint_vec(q, "joint positions");
  check_joint_vec(qd, "joint velocities");
  check_joint_vec(qdd, "joint accelerations");
  const Trig t = trig(arm, q);
  return mass_matrix_impl(arm, t) * qdd + coriolis_vector(arm, t, qd) +
         gravity_vector(arm, t) + arm.viscous.cwiseProduct(qd);
}

Mat inverse_dynamics_regressor(const TwoLinkArm& arm, const Vec& q,
                               const Vec& qd, const Vec& qdd) {
  check_arm(arm);
  check_joint_vec(q, "joint positions");
  check_joint_vec(qd, "joint velocities");
  check_joint_vec(qdd, "joint accelerations");
  const Trig t = trig(arm, q);
  const double g = arm.gravity;
  const double l1 = arm.l1;
  const double vel1 = qd[1] * (2.0 * qd[0] + qd[1]);

  Mat phi = Mat::Zero(2, 20);
  // Row 0: joint-1 torque.
  phi(0, 1) = g * t.c1;                                       // h1x
  phi(0, 2) = -g * t.s1;                                      // h1y
  phi(0, 9) = qdd[0];                                         // I1zz
  phi(0, 10) = l1 * l1 * qdd[0] + g * l1 * t.c1;              // m2
  phi(0, 11) = l1 * t.c2 * (2.0 * qdd[0] + qdd[1]) -
               l1 * t.s2 * vel1 + g * t.c12;                  // h2x
  phi(0, 12) = -l1 * t.s2 * (2.0 * qdd[0] + qdd[1]) -
               l1 * t.c2 * vel1 - g * t.s12;                  // h2y
  phi(0, 19) = qdd[0] + qdd[1];                               // I2zz
  // Row 1: joint-2 torque.
  phi(1, 11) = l1 * t.c2 * qdd[0] + l1 * t.s2 * qd[0] * qd[0] + g * t.c12;
  phi(1, 12) = -l1 * t.s2 * qdd[0] + l1 * t.c2 * qd[0] * qd[0] - g * t.s12;
  phi(1, 19) = qdd[0] + qdd[1];
  return phi;
}

double total_energy(const TwoLinkArm& arm, const Vec& q, const Vec& qd) {
  check_arm(arm);
  check_joint_vec(q, "joint positions");
  check_joint_vec(qd, "joint velocities");
  const ActiveParams p = active(arm);
  const Trig t = trig(arm, q);
  const double w2dot = qd[0] + qd[1];
  const double kinetic = 0.5 * (p.i1 + p.m2 * arm.l1 * arm.l1) * qd[0] * qd[0] +
                         0.5 * p.i2 * w2dot * w2dot +
                         arm.l1 * t.k2 * qd[0] * w2dot;
  const double potential =
      arm.gravity * (p.h1x * t.s1 + p.h1y * t.c1 + p.m2 * arm.l1 * t.s1 +
                     p.h2x * t.s12 + p.h2y * t.c12);
  return kinetic + potential;
}

ArmLinearization linearize(const TwoLinkArm& arm, const Vec& q, const Vec& qd,
                           const Vec& tau) {
  check_arm(arm);
  check_joint_vec(q, "joint positions");
  check_joint_vec(qd, "joint velocities");
  check_joint_vec(tau, "joint torques");
  const ActiveParams p = active(arm);
  const Trig t = trig(arm, q);
  const Mat m_inv = inverse_2x2(mass_matrix_impl(arm, t));
  const Vec bias = coriolis_vector(arm, t, qd) + gravity_vector(arm, t) +
                   arm.viscous.cwiseProduct(qd);
  const Vec qdd = m_inv * (tau - bias);
  const double g = arm.gravity;
  const double l1 = arm.l1;

  // d/dq of (M qdd + C qd + G) at fixed qd, qdd. Only q2 moves M and C.
  const double grav12 = g * (-p.h2x * t.s12 - p.h2y * t.c12);
  Vec dq1(2);  // gravity only
  dq1[0] = g * (-p.h1x * t.s1 - p.h1y * t.c1 - p.m2 * l1 * t.s1) + grav12;
  dq1[1] = grav12;
  Vec dq2(2);
  // dM/dq2 * qdd with dk2/dq2 = -w2:
  dq2[0] = -l1 * t.w2 * (2.0 * qdd[0] + qdd[1]);
  dq2[1] = -l1 * t.w2 * qdd[0];
  // d(C qd)/dq2 with dw2/dq2 = k2:
  dq2[0] += -l1 * t.k2 * qd[1] * (2.0 * qd[0] + qd[1]);
  dq2[1] += l1 * t.k2 * qd[0] * qd[0];
  dq2[0] += grav12;
  dq2[1] += grav12;

  // d/dqd of (C qd + viscous .* qd).
  Mat dqd(2, 2);
  dqd(0, 0) = -2.0 * l1 * t.w2 * qd[1] + arm.viscous[0];
  dqd(0, 1) = -2.0 * l1 * t.w2 * (qd[0] + qd[1]);
  dqd(1, 0) = 2.0 * l1 * t.w2 * qd[0];
  dqd(1, 1) = arm.viscous[1];

  ArmLinearization lin;
  lin.a_c = Mat::Zero(4, 4);
  lin.a_c.topRightCorner(2, 2) = Mat::Identity(2, 2);
  Mat dq(2, 2);
  dq.col(0) = dq1;
  dq.col(1) = dq2;
  lin.a_c.bottomLeftCorner(2, 2) = -m_inv * dq;
  lin.a_c.bottomRightCorner(2, 2) = -m_inv * dqd;
  lin.b_c = Mat::Zero(4, 2);
  lin.b_c.bottomRows(2) = m_inv;
  return lin;
}

LtvModel linearize_along(const TwoLinkArm& arm, const Trajectory& trajectory,
                         const Horizon& horizon) {
  const int n = horizon.n_steps;
  require(static_cast<int>(trajectory.refs.size()) == n + 1 &&
              static_cast<int>(trajectory.nominal_inputs.size()) == n,
          "trajectory length does not match the horizon");
  std::vector<Mat> a_mats(n), b_mats(n);
  for (int j = 0; j < n; ++j) {
    const Vec& x = trajectory.refs[j];
    require(x.size() == 4, "trajectory states must be [q; qd] (4 entries)");
    const ArmLinearization lin =
        linearize(arm, x.head(2), x.tail(2), trajectory.nominal_inputs[j]);
    const DiscretePair d = discretize_euler(lin.a_c, lin.b_c, horizon.dt);
    a_mats[j] = d.a;
    b_mats[j] = d.b;
  }
  return LtvModel(horizon, Dimensions(4, 2), std::move(a_mats),
                  std::move(b_mats));
}

Vec rk4_step(const TwoLinkArm& arm, const Vec& state, const Vec& tau,
             double dt, int substeps) {
  require(state.size() == 4, "arm state must be [q; qd] (4 entries)");
  require(dt > 0.0 && substeps >= 1, "need dt > 0 and at least one substep");
  const double h = dt / substeps;
  Vec x = state;
  for (int i = 0; i < substeps; ++i) {
    const Vec k1 = state_derivative(arm, x, tau);
    const Vec k2 = state_derivative(arm, x + 0.5 * h * k1, tau);
    const Vec k3 = state_derivative(arm, x + 0.5 * h * k2, tau);
    const Vec k4 = state_derivative(arm, x + h * k3, tau);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Strikes
// ---------------------------------------------------------------------------

StrikePolynomial::StrikePolynomial(Vec q0_, Vec qd0_, Vec qf_, Vec qdf_,
                                   double duration_)
    : q0(std::move(q0_)),
      qd0(std::move(qd0_)),
      qf(std::move(qf_)),
      qdf(std::move(qdf_)),
      duration(duration_) {
  require(duration > 0.0, "strike duration must be positive");
  const Eigen::Index n = q0.size();
  require(n >= 1 && qd0.size() == n && qf.size() == n && qdf.size() == n,
          "strike endpoints must share one joint dimension");
  require(q0.allFinite() && qd0.allFinite() && qf.allFinite() &&
              qdf.allFinite(),
          "strike endpoints must be finite");
  const double t1 = 1.0 / duration;
  const double t2 = t1 * t1;
  const double t3 = t2 * t1;
  a3 = 2.0 * t3 * (q0 - qf) + t2 * (qd0 + qdf);
  a2 = 3.0 * t2 * (qf - q0) - t1 * (qdf + 2.0 * qd0);
}

Vec StrikePolynomial::position(double t) const {
  return q0 + t * qd0 + (t * t) * a2 + (t * t * t) * a3;
}

Vec StrikePolynomial::velocity(double t) const {
  return qd0 + (2.0 * t) * a2 + (3.0 * t * t) * a3;
}

Vec StrikePolynomial::acceleration(double t) const {
  return 2.0 * a2 + (6.0 * t) * a3;
}

namespace {

std::vector<Vec> idm_along(const TwoLinkArm& arm, const StrikePolynomial& poly,
                           const Horizon& horizon) {
  std::vector<Vec> inputs(horizon.n_steps);
  for (int j = 0; j < horizon.n_steps; ++j) {
    const double t = j * horizon.dt;
    inputs[j] = inverse_dynamics(arm, poly.position(t), poly.velocity(t),
                                 poly.acceleration(t));
  }
  return inputs;
}

Trajectory sample_strike(const TwoLinkArm& arm, const StrikePolynomial& poly,
                         const Horizon& horizon) {
  std::vector<Vec> refs(horizon.n_steps + 1);
  for (int j = 0; j <= horizon.n_steps; ++j) {
    const double t = j * horizon.dt;
    Vec x(4);
    x.head(2) = poly.position(t);
    x.tail(2) = poly.velocity(t);
    refs[j] = x;
  }
  return Trajectory(std::move(refs), idm_along(arm, poly, horizon));
}

}  // namespace

std::pair<StrikePolynomial, Trajectory> generate_strike(
    const TwoLinkArm& arm, const Vec& q0, const Vec& qd0, const Vec& qf,
    const Vec& qdf, double duration, const Horizon& horizon) {
  check_arm(arm);
  require(duration > 0.0, "strike duration must be positive");
  require(std::abs(duration - horizon.duration()) <=
              1e-9 * std::max(1.0, duration),
          "horizon must span the strike duration");
  StrikePolynomial poly(q0, qd0, qf, qdf, duration);
  require(poly.q0.size() == 2, "the two-link arm has two joints");
  Trajectory traj = sample_strike(arm, poly, horizon);
  return {std::move(poly), std::move(traj)};
}

AdaptedStrike adapt_to_initial_state(const StrikePolynomial& strike,
                                     const Vec& q0_new, const Vec& qd0_new,
                                     const TwoLinkArm& arm,
                                     const std::vector<Vec>& current_inputs,
                                     const Horizon& horizon) {
  check_arm(arm);
  require(static_cast<int>(current_inputs.size()) == horizon.n_steps,
          "need one current input per horizon step");
  require(std::abs(strike.duration - horizon.duration()) <=
              1e-9 * std::max(1.0, strike.duration),
          "horizon must span the strike duration");
  StrikePolynomial updated(q0_new, qd0_new, strike.qf, strike.qdf,
                           strike.duration);
  AdaptedStrike out{updated, sample_strike(arm, updated, horizon), {}};
  const std::vector<Vec> idm_old = idm_along(arm, strike, horizon);
  const std::vector<Vec> idm_new = idm_along(arm, updated, horizon);
  out.inputs.resize(current_inputs.size());
  for (std::size_t j = 0; j < current_inputs.size(); ++j) {
    require(current_inputs[j].size() == 2, "inputs must be joint torques");
    // Grouped so an unchanged strike carries the inputs over bit-for-bit.
    out.inputs[j] = current_inputs[j] + (idm_new[j] - idm_old[j]);
  }
  return out;
}

double final_state_cost(const TrialRecord& trial, const Trajectory& trajectory,
                        const Vec& qf, const Vec& qdf) {
  check_joint_vec(qf, "hitting positions");
  check_joint_vec(qdf, "hitting velocities");
  require(!trial.raw_errors.empty() &&
              trial.raw_errors.size() == trajectory.refs.size(),
          "trial and trajectory lengths disagree");
  Vec target(4);
  target.head(2) = qf;
  target.tail(2) = qdf;
  const Vec terminal = trajectory.refs.back() + trial.raw_errors.back();
  return (terminal - target).norm();
}

// ---------------------------------------------------------------------------
// Link-parameter adaptation
// ---------------------------------------------------------------------------

LinkParams::LinkParams(Vec theta_, Mat cov_, double noise_var_, double forget_)
    : theta(std::move(theta_)),
      cov(std::move(cov_)),
      noise_var(noise_var_),
      forget(forget_) {
  require(theta.size() > 0 && theta.size() % 10 == 0,
          "link parameters come in blocks of 10 per link");
  require(cov.rows() == theta.size() && cov.cols() == theta.size(),
          "covariance shape must match theta");
  require(theta.allFinite() && cov.allFinite(),
          "link parameter belief must be finite");
  require(noise_var > 0.0, "noise variance must be > 0");
  require(forget > 0.0 && forget <= 1.0, "forgetting factor must be in (0, 1]");
}

LinkParams LinkParams::isotropic(const Vec& theta, double prior_var,
                                 double noise_var, double forget) {
  require(prior_var >= 0.0, "prior variance must be >= 0");
  return LinkParams(theta,
                    prior_var * Mat::Identity(theta.size(), theta.size()),
                    noise_var, forget);
}

LinkParams adapt_link_params(const LinkParams& params,
                             const TrialRecord& trial, const TwoLinkArm& arm,
                             const Trajectory& trajectory,
                             const Horizon& horizon) {
  check_arm(arm);
  require(params.theta.size() == 20, "two-link adaptation needs 20 parameters");
  if (trial.applied_inputs.empty()) return params;
  const int n = static_cast<int>(trial.applied_inputs.size());
  require(n == horizon.n_steps &&
              static_cast<int>(trajectory.refs.size()) == n + 1 &&
              static_cast<int>(trajectory.nominal_inputs.size()) == n &&
              trial.filtered_errors.size() == trajectory.refs.size(),
          "trial, trajectory and horizon lengths disagree");

  // Reconstruct the (filtered) measured joint states and differentiate the
  // velocities for acceleration estimates, one per torque slot.
  std::vector<Vec> velocities(n + 1);
  std::vector<Vec> states(n + 1);
  for (int j = 0; j <= n; ++j) {
    require(trajectory.refs[j].size() == 4 &&
                trial.filtered_errors[j].size() == 4,
            "arm states must be [q; qd] (4 entries)");
    states[j] = trajectory.refs[j] + trial.filtered_errors[j];
    velocities[j] = states[j].tail(2);
  }
  const std::vector<Vec> accels = discrete_derivative(velocities, horizon.dt);

  Mat design(2 * n, 20);
  Vec target(2 * n);
  for (int j = 0; j < n; ++j) {
    design.middleRows(2 * j, 2) = inverse_dynamics_regressor(
        arm, states[j].head(2), states[j].tail(2), accels[j]);
    target.segment(2 * j, 2) =
        trajectory.nominal_inputs[j] + trial.applied_inputs[j];
  }

  // Identifiability diagnostic. Of the seven parameters that reach the
  // torques, only six directions are distinguishable even in principle: the
  // outboard mass enters every torque exactly as l1^2 * (its I_zz column) +
  // l1 * (its h_x column), the usual base-parameter lumping of serial arms.
  // Warn when a trial excites fewer than those six.
  constexpr int kBaseParamCount = 6;
  const auto& act = TwoLinkArm::active_indices();
  Mat active_cols(2 * n, static_cast<Eigen::Index>(act.size()));
  for (std::size_t c = 0; c < act.size(); ++c)
    active_cols.col(static_cast<Eigen::Index>(c)) = design.col(act[c]);
  Eigen::JacobiSVD<Mat> svd(active_cols);
  const Vec sing = svd.singularValues();
  const double tol = 1e-10 * sing[0];
  int rank = 0;
  for (Eigen::Index i = 0; i < sing.size(); ++i)
    if (sing[i] > tol) ++rank;
  if (rank < kBaseParamCount)
    std::cerr << "warning: trial excites only " << rank << " of "
              << kBaseParamCount
              << " identifiable parameter directions; prior fills the rest\n";

  const GaussianBelief post =
      lbr_update(GaussianBelief(params.theta, params.cov), design, target,
                 params.noise_var, params.forget);
  return LinkParams(post.mean, post.cov, params.noise_var, params.forget);
}

ModelBelief sample_link_derivatives(const LinkParams& params,
                                    const TwoLinkArm& base,
                                    const Trajectory& trajectory,
                                    const Horizon& horizon, int n_samples,
                                    std::uint64_t seed, double noise_var,
                                    double forget) {
  check_arm(base);
  require(params.theta.size() == 20, "two-link sampling needs 20 parameters");
  require(n_samples >= 2, "need at least two samples for a covariance");
  const int n = horizon.n_steps;
  require(static_cast<int>(trajectory.refs.size()) == n + 1 &&
              static_cast<int>(trajectory.nominal_inputs.size()) == n,
          "trajectory length does not match the horizon");

  // The linearization depends on theta only through six lumped base
  // parameters (the usual serial-arm lumping: I1 + m2*l1^2, h1x + m2*l1,
  // h1y, h2x, h2y, I2). Sampling therefore happens in that six-dimensional
  // subspace with the remaining directions completed at the mean; the
  // pushforward distribution is exactly the same (only the lumped marginal
  // reaches the dynamics), while wide data-shaped posteriors -- which keep
  // the prior's enormous variance in directions no torque can test -- still
  // yield buildable sample arms instead of rejecting everything.
  Mat lumped = Mat::Zero(20, 6);
  lumped(9, 0) = 1.0;
  lumped(10, 0) = base.l1 * base.l1;
  lumped(1, 1) = 1.0;
  lumped(10, 1) = base.l1;
  lumped(2, 2) = 1.0;
  lumped(11, 3) = 1.0;
  lumped(12, 4) = 1.0;
  lumped(19, 5) = 1.0;
  const Mat proj = lumped * (lumped.transpose() * lumped)
                                .ldlt()
                                .solve(lumped.transpose());
  const Mat cov_eff =
      proj * (0.5 * (params.cov + params.cov.transpose())) * proj;

  // Square root of the projected covariance (eigendecomposition tolerates
  // exactly-singular covariances, including zero).
  Eigen::SelfAdjointEigenSolver<Mat> es(cov_eff);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("parameter covariance decomposition failed");
  const Mat sqrt_cov =
      es.eigenvectors() *
      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  // A draw must describe a buildable rigid body: positive masses and, per
  // link, a first moment no larger than the mass/inertia admit
  // (hx^2 + hy^2 <= m*Izz, the planar second-moment PSD condition). That
  // containment also guarantees a positive-definite inertia matrix
  // everywhere, so the singularity guard below is only a backstop. The
  // point-mass defaults sit exactly on this boundary, so a sizeable
  // fraction of Gaussian draws around them gets rejected.
  const auto physical = [](const Vec& th) {
    for (int link = 0; link < 2; ++link) {
      const int base_idx = 10 * link;
      const double m = th[base_idx];
      const double hx = th[base_idx + 1], hy = th[base_idx + 2];
      const double izz = th[base_idx + 9];
      if (!(m > 0.0) || hx * hx + hy * hy > m * izz) return false;
    }
    return true;
  };
  const auto jacobians_along = [&](const TwoLinkArm& candidate,
                                   std::vector<Vec>& per_step) {
    for (int j = 0; j < n; ++j) {
      const Vec& x = trajectory.refs[j];
      try {
        const ArmLinearization lin = linearize(
            candidate, x.head(2), x.tail(2), trajectory.nominal_inputs[j]);
        const DiscretePair d = discretize_euler(lin.a_c, lin.b_c, horizon.dt);
        per_step[j] = vectorize_pair(d.a, d.b);
      } catch (const std::runtime_error&) {
        return false;  // singular inertia along the trajectory
      }
    }
    return true;
  };

  const Dimensions dims(4, 2);

  // A certain belief needs no sampling; return the analytic linearization
  // with exactly-zero covariances.
  if (sqrt_cov.cwiseAbs().maxCoeff() == 0.0) {
    TwoLinkArm mean_arm = base;
    mean_arm.theta = params.theta;
    std::vector<Vec> per_step(n);
    if (!physical(params.theta) || !jacobians_along(mean_arm, per_step))
      throw std::runtime_error(
          "link-parameter mean is not a physical arm and the belief has no "
          "spread to sample around it");
    std::vector<GaussianBelief> steps;
    steps.reserve(n);
    for (int j = 0; j < n; ++j)
      steps.emplace_back(per_step[j],
                         Mat::Zero(dims.param_dim(), dims.param_dim()));
    return ModelBelief(dims, noise_var, forget, std::move(steps));
  }

  std::mt19937_64 rng = make_rng(seed, kStreamSampling);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int max_attempts = 10 * n_samples;

  // Per step, per accepted sample: vec([A_j B_j]).
  std::vector<std::vector<Vec>> draws(n);
  int accepted = 0;
  for (int attempt = 0; attempt < max_attempts && accepted < n_samples;
       ++attempt) {
    Vec z(params.theta.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
    TwoLinkArm candidate = base;
    candidate.theta = params.theta + sqrt_cov * z;
    if (!physical(candidate.theta)) continue;
    std::vector<Vec> per_step(n);
    if (!jacobians_along(candidate, per_step)) continue;
    for (int j = 0; j < n; ++j) draws[j].push_back(std::move(per_step[j]));
    ++accepted;
  }
  if (accepted < n_samples)
    throw std::runtime_error(
        "link-parameter belief is too infeasible to sample: fewer than 10% of "
        "draws give a physical arm");

  std::vector<GaussianBelief> steps;
  steps.reserve(n);
  for (int j = 0; j < n; ++j) {
    Vec mean = Vec::Zero(dims.param_dim());
    for (const Vec& v : draws[j]) mean += v;
    mean /= static_cast<double>(n_samples);
    Mat cov = Mat::Zero(dims.param_dim(), dims.param_dim());
    for (const Vec& v : draws[j]) {
      const Vec c = v - mean;
      cov.noalias() += c * c.transpose();
    }
    cov /= static_cast<double>(n_samples - 1);
    GaussianBelief b(std::move(mean), std::move(cov));
    b.repair();
    steps.push_back(std::move(b));
  }
  return ModelBelief(dims, noise_var, forget, std::move(steps));
}

// ---------------------------------------------------------------------------
// Plant oracle
// ---------------------------------------------------------------------------

StrikeSpec StrikeSpec::random(std::uint64_t seed) {
  std::mt19937_64 rng = make_rng(seed, kStreamArm);
  std::uniform_real_distribution<double> start(-0.3, 0.3);
  std::uniform_real_distribution<double> travel(-0.7, 0.7);
  std::uniform_real_distribution<double> speed(-1.5, 1.5);
  StrikeSpec spec;
  spec.q0 = Vec(2);
  spec.q0 << -M_PI / 2.0 + start(rng), start(rng);
  spec.qd0 = Vec::Zero(2);
  spec.qf = Vec(2);
  spec.qf << spec.q0[0] + travel(rng), spec.q0[1] + travel(rng);
  spec.qdf = Vec(2);
  spec.qdf << speed(rng), speed(rng);
  spec.duration = 1.0;
  return spec;
}

ArmPlantSim::ArmPlantSim(TwoLinkArm true_arm, TwoLinkArm nominal_arm,
                         StrikePolynomial strike, Trajectory reference,
                         const Horizon& horizon)
    : true_arm_(std::move(true_arm)),
      nominal_arm_(std::move(nominal_arm)),
      strike_(std::move(strike)),
      reference_(std::move(reference)),
      horizon_(horizon),
      nominal_model_(linearize_along(nominal_arm_, reference_, horizon_)) {
  check_arm(true_arm_);
  check_arm(nominal_arm_);
}

Vec ArmPlantSim::initial_state() const { return reference_.refs.front(); }

Vec ArmPlantSim::step(int j, const Vec& state, const Vec& total_input) const {
  (void)j;
  return rk4_step(true_arm_, state, total_input, horizon_.dt);
}

std::unique_ptr<ArmPlantSim> make_arm_plant(const StrikeSpec& spec,
                                            const Horizon& horizon,
                                            std::uint64_t seed) {
  TwoLinkArm truth = TwoLinkArm::default_true();
  TwoLinkArm nominal = truth.perturbed(0.8, 1.2, mix_seed(seed, kStreamArm));
  auto [poly, traj] = generate_strike(nominal, spec.q0, spec.qd0, spec.qf,
                                      spec.qdf, spec.duration, horizon);
  return std::make_unique<ArmPlantSim>(std::move(truth), std::move(nominal),
                                       std::move(poly), std::move(traj),
                                       horizon);
}

}  // namespace bilc
