#pragma once
// Randomized benchmark plants and the trial simulator that runs them.
//
// Two families of abstract plants are generated here:
//   * random LTV systems whose matrix entries follow independent GP sample
//     paths over time, paired with a nominal model whose lifted-form
//     deviation is calibrated to a prescribed spectral-norm mismatch;
//   * nonlinear plants whose true vector field is the frozen posterior mean
//     of "oracle" GPs conditioned on randomized rollouts, together with a
//     nominal LTV model (and its parameter covariance) extracted from
//     separate "model" GPs via analytic kernel derivatives.
//
// Everything is a pure function of its seed. Plants are immutable once
// built; trials never mutate the plant, so independent repetitions can run
// in parallel against shared plant objects.

#include "bilc/gp.hpp"
#include "bilc/types.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace bilc {

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Randomized squared-exponential hyperparameters:
///   lengthscale ~ |Normal(lengthscale_mean, lengthscale_sd)|,
///   signal sd   ~ |Normal(signal_sd_mean, signal_sd_sd)|,
/// observation noise fixed at `noise_var`. The defaults center the
/// lengthscale on half the horizon duration so drawn paths vary a few times
/// over the horizon.
struct GpHyperPrior {
  double lengthscale_mean = 0.5;
  double lengthscale_sd = 0.1;
  double signal_sd_mean = 1.0;
  double signal_sd_sd = 0.2;
  double noise_var = 0.0;

  static GpHyperPrior for_duration(double duration);
  GpSpec draw(std::mt19937_64& rng) const;
};

/// Time-varying model whose every matrix entry is one sample path from its
/// own GP (fresh hyperparameters per entry) over step times t_j = j*dt.
/// Deterministic given the seed.
LtvModel draw_random_ltv(const Dimensions& dims, const Horizon& horizon,
                         const GpHyperPrior& prior, std::uint64_t seed);

/// True/nominal pair with calibrated model mismatch.
struct RandomLtvPlant {
  LtvModel true_model;
  LtvModel nominal_model;
  double mismatch_alpha;
  std::uint64_t seed;
};

/// Draws a perturbation model from the same GP scheme and rescales it (by
/// bisection on the lifted-difference spectral norm, which is nonlinear in
/// the per-step perturbation) so that
///   || F(true) - F(nominal) ||_2 = alpha * sigma_min(F(true))
/// within 1e-6 relative. alpha = 0 returns an exact copy. Throws
/// std::runtime_error when sigma_min(F(true)) < 1e-14 (degenerate plant).
/// Cost is one SVD of F per bisection step; intended for moderate horizons.
RandomLtvPlant make_mismatched_pair(const LtvModel& true_model, double alpha,
                                    std::uint64_t seed);

/// One GP sample path per state coordinate over the N+1 knot times, with
/// all-zero nominal inputs (abstract plants track from rest). A
/// zero-signal-variance spec yields the exactly-zero trajectory.
Trajectory draw_reference_trajectory(const Dimensions& dims,
                                     const Horizon& horizon,
                                     const GpSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// GP-oracle nonlinear dynamics
// ---------------------------------------------------------------------------

/// Randomization scheme for the oracle construction.
struct GpOracleConfig {
  GpHyperPrior oracle_hyper;   // hyperparameters of the n derivative GPs
  GpHyperPrior control_hyper;  // hyperparameters of the m control GPs (time)
  GpHyperPrior model_hyper;    // hyperparameters of the n model GPs
  double mean_weight_sd = 0.5;       // oracle linear prior mean w ~ N(0, sd^2)
  double noise_sd_halfnormal = 0.01;  // oracle noise sd ~ |N(0, this)|

  static GpOracleConfig for_horizon(const Horizon& horizon);
};

/// Frozen nonlinear benchmark dynamics. The true plant is the posterior
/// *mean* vector field of the conditioned state GPs,
///   xdot_i = state_gps[i].mean_at([x; u]),
/// immutable after construction; the stored rollouts are the conditioning
/// data that shaped it.
struct GpDynamicsOracle {
  Dimensions dims;
  Horizon horizon;
  GpOracleConfig config;
  std::vector<GaussianProcess> state_gps;       // n GPs over R^{s+m}
  std::vector<GpSpec> control_specs;            // m specs for control draws
  std::vector<std::vector<Vec>> rollout_states;  // K x (N+1)
  std::vector<std::vector<Vec>> rollout_inputs;  // K x N
  std::vector<std::vector<Vec>> rollout_derivs;  // K x N sampled targets
  std::uint64_t seed = 0;

  /// Posterior-mean derivative at (x, u).
  Vec mean_derivative(const Vec& state, const Vec& input) const;
  /// One forward-Euler step of the frozen mean dynamics.
  Vec euler_step(const Vec& state, const Vec& input) const;
};

/// Performs `k_rollouts` sequential conditioned rollouts from the zero state
/// under fresh control-GP inputs, sampling each state derivative from the
/// current oracle posterior and conditioning on it (so the oracle stays
/// self-consistent across rollouts). Throws std::runtime_error if a rollout
/// leaves the |x| <= 1e6 box or a kernel factorization fails.
GpDynamicsOracle build_gp_oracle(const Dimensions& dims,
                                 const Horizon& horizon, int k_rollouts,
                                 std::uint64_t seed);
GpDynamicsOracle build_gp_oracle(const Dimensions& dims,
                                 const Horizon& horizon, int k_rollouts,
                                 std::uint64_t seed,
                                 const GpOracleConfig& config);

/// Nominal LTV model extracted from model GPs: a fresh proxy rollout through
/// the oracle mean dynamics provides (state, input) -> derivative data; the
/// model GPs condition on it and their analytic posterior derivative at each
/// proxy point is discretized to A_j = I + dt*d/dx, B_j = dt*d/du, with the
/// posterior derivative covariance scaled by dt^2 landing on the matching
/// rows of the per-step parameter covariance (rows are independent GPs).
struct NominalFromOracle {
  LtvModel model;
  std::vector<Mat> covariances;   // N matrices of size s(s+m) x s(s+m)
  std::vector<Vec> proxy_states;  // N+1 linearization points
  std::vector<Vec> proxy_inputs;  // N
};

NominalFromOracle build_nominal_from_oracle(const GpDynamicsOracle& oracle,
                                            std::uint64_t seed);

// ---------------------------------------------------------------------------
// Plant oracles and the trial simulator
// ---------------------------------------------------------------------------

/// Feedback acting on measured errors during a trial:
/// correction_j = gains[j] * (e_measured_j - anchors[j]). Null anchors mean
/// zero anchors (pure state feedback on the error).
struct PolicyFeedback {
  const std::vector<Mat>* gains = nullptr;    // N of input_dim x state_dim
  const std::vector<Vec>* anchors = nullptr;  // N of state_dim
};

/// Per-trial execution knobs.
struct ExecutionSetup {
  double noise_sd = 0.0;          // iid measurement noise per coordinate
  bool filter = false;            // zero-phase filter the recorded errors
  double filter_cutoff_ratio = 0.2;  // fraction of Nyquist
  std::uint64_t noise_seed = 0;
  Vec init_offset;                // added to the initial state; empty = none
};

/// An immutable executable plant: reference, nominal model (with optional
/// parameter covariances and analytic truth), and the true state-transition
/// map. Implementations must be safe to share across threads.
class PlantOracle {
 public:
  virtual ~PlantOracle() = default;

  virtual const std::string& name() const = 0;
  virtual Dimensions dims() const = 0;
  virtual Horizon horizon() const = 0;
  virtual const Trajectory& reference() const = 0;
  virtual const LtvModel& nominal_model() const = 0;
  /// Per-step prior covariance of vec([A_j B_j]), when the generator
  /// provides one (GP-extracted nominals do); null otherwise.
  virtual const std::vector<Mat>* model_covariances() const { return nullptr; }
  /// Analytic true LTV model when one exists (abstract LTV plants); null for
  /// nonlinear plants.
  virtual const LtvModel* true_model() const { return nullptr; }

  /// True initial state before any perturbation offset.
  virtual Vec initial_state() const = 0;
  /// One true-plant transition x_{j+1} = step(j, x_j, total input at j).
  virtual Vec step(int j, const Vec& state, const Vec& total_input) const = 0;
};

/// Executes one trial: forward-simulates the true plant under
/// (nominal inputs + compensations + feedback on measured errors), records
/// measured (noisy) errors, optionally zero-phase filters them, and stores
/// the *realized total* compensations. A state leaving the |x| <= 1e6 box
/// (or turning non-finite) freezes at its last good value and flags the
/// record as diverged instead of throwing: blow-ups are data, not errors.
TrialRecord simulate_trial(const PlantOracle& plant, int iteration,
                           const std::vector<Vec>& compensations,
                           const PolicyFeedback* feedback,
                           const CostWeights& weights,
                           const ExecutionSetup& setup);

/// Abstract linear time-varying plant simulated in state coordinates
/// (x_0 = 0, so the initial error is exactly -reference_0).
class LtvPlantSim final : public PlantOracle {
 public:
  LtvPlantSim(std::string name, LtvModel true_model, LtvModel nominal_model,
              Trajectory reference, std::vector<Mat> model_covariances = {});

  const std::string& name() const override { return name_; }
  Dimensions dims() const override { return true_model_.dims; }
  Horizon horizon() const override { return true_model_.horizon; }
  const Trajectory& reference() const override { return reference_; }
  const LtvModel& nominal_model() const override { return nominal_model_; }
  const std::vector<Mat>* model_covariances() const override {
    return covariances_.empty() ? nullptr : &covariances_;
  }
  const LtvModel* true_model() const override { return &true_model_; }
  Vec initial_state() const override;
  Vec step(int j, const Vec& state, const Vec& total_input) const override;

 private:
  std::string name_;
  LtvModel true_model_;
  LtvModel nominal_model_;
  Trajectory reference_;
  std::vector<Mat> covariances_;
};

/// Nonlinear plant driven by the frozen oracle mean dynamics under forward
/// Euler (x_0 = 0).
class GpPlantSim final : public PlantOracle {
 public:
  GpPlantSim(std::string name, std::shared_ptr<const GpDynamicsOracle> oracle,
             NominalFromOracle nominal, Trajectory reference);

  const std::string& name() const override { return name_; }
  Dimensions dims() const override { return oracle_->dims; }
  Horizon horizon() const override { return oracle_->horizon; }
  const Trajectory& reference() const override { return reference_; }
  const LtvModel& nominal_model() const override { return nominal_.model; }
  const std::vector<Mat>* model_covariances() const override {
    return &nominal_.covariances;
  }
  Vec initial_state() const override;
  Vec step(int j, const Vec& state, const Vec& total_input) const override;

  const GpDynamicsOracle& oracle() const { return *oracle_; }
  const NominalFromOracle& nominal_extraction() const { return nominal_; }

 private:
  std::string name_;
  std::shared_ptr<const GpDynamicsOracle> oracle_;
  NominalFromOracle nominal_;
  Trajectory reference_;
};

/// Assembles the standard abstract LTV benchmark plant: true model and
/// reference drawn from per-seed streams, nominal calibrated to
/// `mismatch_alpha`.
std::unique_ptr<PlantOracle> make_random_ltv_plant(const Dimensions& dims,
                                                   const Horizon& horizon,
                                                   double mismatch_alpha,
                                                   std::uint64_t seed);

/// Assembles the GP-oracle benchmark plant: oracle conditioned on
/// `k_rollouts` rollouts, nominal model extracted from model GPs, and an
/// independently drawn reference.
std::unique_ptr<PlantOracle> make_gp_plant(const Dimensions& dims,
                                           const Horizon& horizon,
                                           int k_rollouts, std::uint64_t seed);

}  // namespace bilc
