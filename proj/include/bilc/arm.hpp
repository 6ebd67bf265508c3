#pragma once
// Two-link planar arm (vertical plane): rigid-body dynamics linear in the
// standard ten-per-link inertial parameters, analytic linearization along a
// trajectory, third-order striking polynomials, and the plant oracle that
// runs it all under fixed-step RK4.
//
// Parameterization: theta holds, per link,
//   [m, h_x, h_y, h_z, I_xx, I_xy, I_xz, I_yy, I_yz, I_zz]
// where h = m * (center-of-mass offset in the link frame) is the first
// moment and I is the inertia about the link-frame *origin* (the joint
// axis), so the dynamics are exactly linear in theta. For planar motion only
// seven entries act: I_zz of both links, h_x/h_y of both links, and the mass
// of the outboard link (the base link's mass enters only through its own h
// and I). Joint viscous friction is additive and deliberately *not* part of
// theta: it models unparameterized dynamics present in the true plant only.

#include "bilc/belief.hpp"
#include "bilc/benchgen.hpp"
#include "bilc/types.hpp"

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace bilc {

struct TwoLinkArm {
  double l1 = 0.5;       // link lengths (known geometry, never adapted)
  double l2 = 0.4;
  Vec theta;             // 20 inertial parameters as documented above
  double gravity = 9.81;
  Vec viscous;           // per-joint viscous coefficients (2)

  /// Point masses 2.0 / 1.0 kg at the link tips, friction 0.1 per joint.
  static TwoLinkArm default_true();
  /// Copy with each *active* theta entry scaled by an independent
  /// Uniform(lo, hi) draw and the friction zeroed: the imperfect model an
  /// ILC would start from. Geometry and gravity stay exact.
  TwoLinkArm perturbed(double lo, double hi, std::uint64_t seed) const;
  /// Masses positive, assembled 3x3 link inertia tensors PSD.
  void validate() const;

  /// Indices of theta entries that affect planar dynamics.
  static const std::vector<int>& active_indices();
};

/// Inertia matrix M(q), symmetric 2x2. Throws only on bad dimensions.
Mat mass_matrix(const TwoLinkArm& arm, const Vec& q);

/// qdd = M(q)^-1 (tau - C(q, qd) qd - G(q) - viscous .* qd).
/// Throws std::runtime_error if M is numerically singular (cannot happen
/// for positive point masses; guarded anyway).
Vec forward_dynamics(const TwoLinkArm& arm, const Vec& q, const Vec& qd,
                     const Vec& tau);

/// tau = M(q) qdd + C(q, qd) qd + G(q) + viscous .* qd.
Vec inverse_dynamics(const TwoLinkArm& arm, const Vec& q, const Vec& qd,
                     const Vec& qdd);

/// The 2 x 20 regressor of the rigid-body part:
///   inverse_dynamics = regressor * theta + viscous .* qd.
/// Columns outside active_indices() are identically zero.
Mat inverse_dynamics_regressor(const TwoLinkArm& arm, const Vec& q,
                               const Vec& qd, const Vec& qdd);

/// Kinetic plus potential energy (potential zero at q = 0 height datum of
/// the joint axis). Conserved under zero torque and zero friction.
double total_energy(const TwoLinkArm& arm, const Vec& q, const Vec& qd);

/// Analytic continuous-time linearization of the state-space dynamics
/// x = [q; qd], xdot = [qd; forward_dynamics] at (q, qd, tau):
///   A_c = [[0, I], [d qdd/d q, d qdd/d qd]],  B_c = [[0], [M^-1]].
struct ArmLinearization {
  Mat a_c;  // 4 x 4
  Mat b_c;  // 4 x 2
};
ArmLinearization linearize(const TwoLinkArm& arm, const Vec& q, const Vec& qd,
                           const Vec& tau);

/// Per-step Euler-discretized linearization along a trajectory of states
/// [q; qd] (N+1 knots) and torques (N): A_j = I + dt A_c, B_j = dt B_c,
/// evaluated at knot j.
LtvModel linearize_along(const TwoLinkArm& arm, const Trajectory& trajectory,
                         const Horizon& horizon);

/// One zero-order-hold RK4 step of duration dt, internally subdivided.
Vec rk4_step(const TwoLinkArm& arm, const Vec& state, const Vec& tau,
             double dt, int substeps = 10);

// ---------------------------------------------------------------------------
// Striking trajectories
// ---------------------------------------------------------------------------

/// Per-joint cubic q(t) = q0 + qd0 t + a2 t^2 + a3 t^3 meeting
/// (q0, qd0) at t = 0 and (qf, qdf) at t = T exactly:
///   a3 = (2/T^3)(q0 - qf) + (1/T^2)(qd0 + qdf),
///   a2 = (3/T^2)(qf - q0) - (1/T)(qdf + 2 qd0).
struct StrikePolynomial {
  Vec q0, qd0, qf, qdf;
  Vec a2, a3;
  double duration;

  StrikePolynomial(Vec q0, Vec qd0, Vec qf, Vec qdf, double duration);
  Vec position(double t) const;
  Vec velocity(double t) const;
  Vec acceleration(double t) const;
};

/// Samples the polynomial on the horizon (refs = [q; qd] knots) and fills
/// the nominal inputs with `arm`'s inverse dynamics along it. The horizon
/// must span the strike duration (N dt == T within 1e-9 relative).
std::pair<StrikePolynomial, Trajectory> generate_strike(
    const TwoLinkArm& arm, const Vec& q0, const Vec& qd0, const Vec& qf,
    const Vec& qdf, double duration, const Horizon& horizon);

/// Rebuilds the strike from a perturbed start toward the *same* hitting
/// state and returns the regenerated trajectory plus the feedforward
/// commands carried over: adjusted_j = current_j + idm(new)_j - idm(old)_j,
/// so everything learned so far survives the reference change.
struct AdaptedStrike {
  StrikePolynomial strike;
  Trajectory trajectory;
  std::vector<Vec> inputs;
};
AdaptedStrike adapt_to_initial_state(const StrikePolynomial& strike,
                                     const Vec& q0_new, const Vec& qd0_new,
                                     const TwoLinkArm& arm,
                                     const std::vector<Vec>& current_inputs,
                                     const Horizon& horizon);

/// 2-norm of the terminal-state deviation from the hitting state:
/// || (reference_N + raw_error_N) - [qf; qdf] ||.
double final_state_cost(const TrialRecord& trial,
                        const Trajectory& trajectory, const Vec& qf,
                        const Vec& qdf);

// ---------------------------------------------------------------------------
// Link-parameter adaptation (acts on theta directly)
// ---------------------------------------------------------------------------

/// Gaussian belief over the 20 inertial parameters plus its regression
/// hyperparameters.
struct LinkParams {
  Vec theta;       // 20
  Mat cov;         // 20 x 20, symmetric PSD
  double noise_var = 1.0;
  double forget = 1.0;

  LinkParams(Vec theta, Mat cov, double noise_var = 1.0, double forget = 1.0);
  static LinkParams isotropic(const Vec& theta, double prior_var,
                              double noise_var = 1.0, double forget = 1.0);
};

/// One Bayesian update of theta from a whole trial: joint states are
/// reference + filtered errors, accelerations come from differentiating the
/// filtered velocities, torques are nominal + recorded compensations, and
/// the stacked 2N x 20 regressor enters one lbr_update (a single forgetting
/// application per trial). Emits a warning to stderr when the active
/// columns of the stacked regressor are rank-deficient (the update is still
/// well-posed; the prior fills the null space). An empty trial returns the
/// parameters unchanged.
LinkParams adapt_link_params(const LinkParams& params,
                             const TrialRecord& trial, const TwoLinkArm& arm,
                             const Trajectory& trajectory,
                             const Horizon& horizon);

/// Propagates theta uncertainty to per-step discrete model beliefs by Monte
/// Carlo: draws n_samples parameter vectors from N(theta, cov), linearizes
/// the candidate arm at every trajectory knot, Euler-discretizes, and takes
/// the empirical mean and covariance of vec([A_j B_j]). The dynamics depend
/// on theta only through six lumped base parameters, so draws vary exactly
/// those directions (the rest completed at the mean — same pushforward
/// distribution, and posteriors that stay prior-wide in directions no
/// torque can test remain sampleable). Draws that are not buildable rigid
/// bodies (non-positive mass, or a first moment exceeding what mass and
/// inertia admit, hx^2+hy^2 > m*Izz — which is also what makes inertia
/// matrices singular) are rejected and redrawn (at most 10x oversampling,
/// then std::runtime_error). A zero covariance skips the sampling and
/// returns the analytic linearization with zero covariances.
ModelBelief sample_link_derivatives(const LinkParams& params,
                                    const TwoLinkArm& base,
                                    const Trajectory& trajectory,
                                    const Horizon& horizon, int n_samples,
                                    std::uint64_t seed, double noise_var = 1.0,
                                    double forget = 1.0);

// ---------------------------------------------------------------------------
// Plant oracle
// ---------------------------------------------------------------------------

/// Strike endpoints; `random` draws a desk-scale strike (start near the
/// hanging rest pose, moderate hitting velocity).
struct StrikeSpec {
  Vec q0, qd0, qf, qdf;
  double duration = 1.0;

  static StrikeSpec random(std::uint64_t seed);
};

/// The arm as an executable plant: truth integrates the friction-bearing
/// true arm with RK4; the nominal model is the analytic linearization of
/// the perturbed (friction-free) arm along the strike reference, whose
/// inverse dynamics also provide the nominal feedforward. The plant starts
/// exactly on the reference; initial-state perturbations enter through the
/// execution setup.
class ArmPlantSim final : public PlantOracle {
 public:
  ArmPlantSim(TwoLinkArm true_arm, TwoLinkArm nominal_arm,
              StrikePolynomial strike, Trajectory reference,
              const Horizon& horizon);

  const std::string& name() const override { return name_; }
  Dimensions dims() const override { return Dimensions(4, 2); }
  Horizon horizon() const override { return horizon_; }
  const Trajectory& reference() const override { return reference_; }
  const LtvModel& nominal_model() const override { return nominal_model_; }
  Vec initial_state() const override;
  Vec step(int j, const Vec& state, const Vec& total_input) const override;

  const TwoLinkArm& true_arm() const { return true_arm_; }
  const TwoLinkArm& nominal_arm() const { return nominal_arm_; }
  const StrikePolynomial& strike() const { return strike_; }

 private:
  std::string name_ = "two_link_arm";
  TwoLinkArm true_arm_;
  TwoLinkArm nominal_arm_;
  StrikePolynomial strike_;
  Trajectory reference_;
  Horizon horizon_;
  LtvModel nominal_model_;
};

/// Assembles the standard arm benchmark plant: true arm with friction,
/// nominal arm with theta perturbed by Uniform(0.8, 1.2) per active entry.
std::unique_ptr<ArmPlantSim> make_arm_plant(const StrikeSpec& spec,
                                            const Horizon& horizon,
                                            std::uint64_t seed);

}  // namespace bilc
