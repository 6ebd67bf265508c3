#include "bilc/benchgen.hpp"

#include "bilc/lifted.hpp"
#include "bilc/seeding.hpp"
#include "bilc/signal.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace bilc {
namespace {

constexpr double kDivergenceBound = 1e6;
constexpr double kDegenerateSigma = 1e-14;
constexpr double kCalibrationRelTol = 1e-6;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double half_normal(std::mt19937_64& rng, double mean, double sd) {
  std::normal_distribution<double> gauss(mean, sd);
  return std::abs(gauss(rng));
}

std::vector<double> step_times(const Horizon& horizon, int count) {
  std::vector<double> times(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j)
    times[static_cast<std::size_t>(j)] = j * horizon.dt;
  return times;
}

double spectral_norm(const Mat& m) {
  if (!m.allFinite()) return std::numeric_limits<double>::infinity();
  return Eigen::BDCSVD<Mat>(m).singularValues()[0];
}

LtvModel shifted_model(const LtvModel& base, const LtvModel& delta,
                       double scale) {
  std::vector<Mat> a(base.a_mats), b(base.b_mats);
  for (std::size_t j = 0; j < a.size(); ++j) {
    a[j] += scale * delta.a_mats[j];
    b[j] += scale * delta.b_mats[j];
  }
  return LtvModel(base.horizon, base.dims, std::move(a), std::move(b));
}

/// || F(base + scale*delta) - F(base) ||_2 assembled directly from the
/// per-step deltas. Subtracting the two lifted matrices loses the answer to
/// cancellation whenever the transition products dwarf the difference (the
/// target here is alpha * sigma_min while product entries can be enormous),
/// so each block is built by the exact telescoping
///   D_c = scale * dB_c,   D_r = A'_r D_{r-1} + scale * dA_r P_{r-1},
/// where P_r is the unprimed product block: every term carries one
/// difference-scale factor and nothing large cancels.
double lifted_difference_norm(const LtvModel& base, const LtvModel& delta,
                              double scale) {
  const int n = base.horizon.n_steps;
  const int s = base.dims.state_dim;
  const int m = base.dims.input_dim;
  Mat diff = Mat::Zero(static_cast<Eigen::Index>(n) * s,
                       static_cast<Eigen::Index>(n) * m);
  for (int c = 0; c < n; ++c) {
    Mat p = base.b_mats[static_cast<std::size_t>(c)];
    Mat d = scale * delta.b_mats[static_cast<std::size_t>(c)];
    diff.block(static_cast<Eigen::Index>(c) * s,
               static_cast<Eigen::Index>(c) * m, s, m) = d;
    for (int r = c + 1; r < n; ++r) {
      const Mat& a = base.a_mats[static_cast<std::size_t>(r)];
      const Mat da = scale * delta.a_mats[static_cast<std::size_t>(r)];
      d = (a + da) * d + da * p;
      p = a * p;
      diff.block(static_cast<Eigen::Index>(r) * s,
                 static_cast<Eigen::Index>(c) * m, s, m) = d;
    }
  }
  return spectral_norm(diff);
}

}  // namespace

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

GpHyperPrior GpHyperPrior::for_duration(double duration) {
  require(duration > 0.0, "hyperprior duration must be positive");
  GpHyperPrior prior;
  prior.lengthscale_mean = 0.5 * duration;
  prior.lengthscale_sd = 0.1 * duration;
  return prior;
}

GpSpec GpHyperPrior::draw(std::mt19937_64& rng) const {
  GpSpec spec;
  spec.lengthscale = half_normal(rng, lengthscale_mean, lengthscale_sd);
  const double sd = half_normal(rng, signal_sd_mean, signal_sd_sd);
  spec.signal_var = sd * sd;
  spec.noise_var = noise_var;
  spec.validate();
  return spec;
}

LtvModel draw_random_ltv(const Dimensions& dims, const Horizon& horizon,
                         const GpHyperPrior& prior, std::uint64_t seed) {
  const int s = dims.state_dim;
  const int m = dims.input_dim;
  const int n = horizon.n_steps;
  const std::vector<double> times = step_times(horizon, n);

  auto rng = make_rng(seed);
  std::vector<Mat> a(static_cast<std::size_t>(n), Mat::Zero(s, s));
  std::vector<Mat> b(static_cast<std::size_t>(n), Mat::Zero(s, m));
  // One independent GP path per matrix entry, fresh hyperparameters each.
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      const Vec path = sample_gp_path(prior.draw(rng), times, rng);
      for (int j = 0; j < n; ++j) a[static_cast<std::size_t>(j)](r, c) = path[j];
    }
  }
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < m; ++c) {
      const Vec path = sample_gp_path(prior.draw(rng), times, rng);
      for (int j = 0; j < n; ++j) b[static_cast<std::size_t>(j)](r, c) = path[j];
    }
  }
  return LtvModel(horizon, dims, std::move(a), std::move(b));
}

RandomLtvPlant make_mismatched_pair(const LtvModel& true_model, double alpha,
                                    std::uint64_t seed) {
  require(alpha >= 0.0, "mismatch alpha must be >= 0");
  if (alpha == 0.0)
    return RandomLtvPlant{true_model, true_model, 0.0, seed};

  const Mat f_true = lifted_f_matrix(true_model);
  const Vec sv = Eigen::BDCSVD<Mat>(f_true).singularValues();
  const double sigma_min = sv[sv.size() - 1];
  if (!(sigma_min >= kDegenerateSigma))
    throw std::runtime_error(
        "mismatch calibration: plant is degenerate (sigma_min < 1e-14)");
  const double target = alpha * sigma_min;

  const LtvModel delta = draw_random_ltv(true_model.dims, true_model.horizon,
                                         GpHyperPrior::for_duration(
                                             true_model.horizon.duration()),
                                         seed);
  const auto measure = [&](double scale) {
    return lifted_difference_norm(true_model, delta, scale);
  };

  // The lifted difference is nonlinear in the scale (A-products), so find
  // the calibrated scale by bracketing + bisection. measure(0) = 0 < target,
  // and measure can dwarf the target already at minuscule scales when the
  // lifted products are explosive, so the bracket moves by factors and the
  // bisection runs on the geometric mean: that resolves crossings anywhere
  // on the positive axis to full relative precision.
  double lo = 1.0, hi = 1.0;
  int guard = 0;
  while (measure(hi) < target) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 1100)
      throw std::runtime_error("mismatch calibration: expansion failed");
  }
  while (measure(lo) >= target) {
    hi = lo;
    lo *= 0.5;
    if (!(lo > 0.0) || ++guard > 1100)
      throw std::runtime_error("mismatch calibration: expansion failed");
  }
  double mid = hi, norm_mid = measure(hi);
  for (int it = 0; it < 200; ++it) {
    if (std::abs(norm_mid - target) <= kCalibrationRelTol * target) break;
    mid = std::sqrt(lo) * std::sqrt(hi);  // geometric mean, overflow-safe
    norm_mid = measure(mid);
    (norm_mid < target ? lo : hi) = mid;
  }
  if (std::abs(norm_mid - target) > kCalibrationRelTol * target)
    throw std::runtime_error("mismatch calibration: bisection stalled");
  return RandomLtvPlant{true_model, shifted_model(true_model, delta, mid),
                        alpha, seed};
}

Trajectory draw_reference_trajectory(const Dimensions& dims,
                                     const Horizon& horizon,
                                     const GpSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int n = horizon.n_steps;
  const std::vector<double> times = step_times(horizon, n + 1);
  auto rng = make_rng(seed);
  std::vector<Vec> refs(static_cast<std::size_t>(n) + 1,
                        Vec::Zero(dims.state_dim));
  for (int c = 0; c < dims.state_dim; ++c) {
    const Vec path = sample_gp_path(spec, times, rng);
    for (int j = 0; j <= n; ++j) refs[static_cast<std::size_t>(j)][c] = path[j];
  }
  return Trajectory(std::move(refs),
                    std::vector<Vec>(static_cast<std::size_t>(n),
                                     Vec::Zero(dims.input_dim)));
}

// ---------------------------------------------------------------------------
// GP-oracle nonlinear dynamics
// ---------------------------------------------------------------------------

GpOracleConfig GpOracleConfig::for_horizon(const Horizon& horizon) {
  GpOracleConfig config;
  config.oracle_hyper = GpHyperPrior::for_duration(horizon.duration());
  config.control_hyper = config.oracle_hyper;
  config.model_hyper = config.oracle_hyper;
  return config;
}

Vec GpDynamicsOracle::mean_derivative(const Vec& state,
                                      const Vec& input) const {
  Vec z(state.size() + input.size());
  z << state, input;
  Vec d(dims.state_dim);
  for (int i = 0; i < dims.state_dim; ++i)
    d[i] = state_gps[static_cast<std::size_t>(i)].mean_at(z);
  return d;
}

Vec GpDynamicsOracle::euler_step(const Vec& state, const Vec& input) const {
  return state + horizon.dt * mean_derivative(state, input);
}

GpDynamicsOracle build_gp_oracle(const Dimensions& dims,
                                 const Horizon& horizon, int k_rollouts,
                                 std::uint64_t seed) {
  return build_gp_oracle(dims, horizon, k_rollouts, seed,
                         GpOracleConfig::for_horizon(horizon));
}

GpDynamicsOracle build_gp_oracle(const Dimensions& dims,
                                 const Horizon& horizon, int k_rollouts,
                                 std::uint64_t seed,
                                 const GpOracleConfig& config) {
  require(k_rollouts >= 1, "need at least one oracle rollout");
  const int s = dims.state_dim;
  const int m = dims.input_dim;
  const int n = horizon.n_steps;

  GpDynamicsOracle oracle{dims,
                          horizon,
                          config,
                          {},
                          {},
                          {},
                          {},
                          {},
                          seed};
  auto rng = make_rng(seed, kStreamOracle);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Draw order is part of the reproducibility contract: state-GP specs
  // (hyper, noise, linear mean) first, then control specs, then rollouts.
  oracle.state_gps.reserve(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    GpSpec spec = config.oracle_hyper.draw(rng);
    const double noise_sd = half_normal(rng, 0.0, config.noise_sd_halfnormal);
    spec.noise_var = noise_sd * noise_sd;
    Vec w(s + m);
    for (int d = 0; d < s + m; ++d)
      w[d] = config.mean_weight_sd * gauss(rng);
    oracle.state_gps.emplace_back(spec, s + m, std::move(w), 0.0);
  }
  oracle.control_specs.reserve(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c)
    oracle.control_specs.push_back(config.control_hyper.draw(rng));

  const std::vector<double> times = step_times(horizon, n);
  for (int k = 0; k < k_rollouts; ++k) {
    std::vector<Vec> inputs(static_cast<std::size_t>(n), Vec::Zero(m));
    for (int c = 0; c < m; ++c) {
      const Vec path = sample_gp_path(oracle.control_specs[
                                          static_cast<std::size_t>(c)],
                                      times, rng);
      for (int j = 0; j < n; ++j) inputs[static_cast<std::size_t>(j)][c] =
          path[j];
    }

    std::vector<Vec> states;
    std::vector<Vec> derivs;
    states.reserve(static_cast<std::size_t>(n) + 1);
    derivs.reserve(static_cast<std::size_t>(n));
    Vec x = Vec::Zero(s);
    states.push_back(x);
    for (int j = 0; j < n; ++j) {
      Vec z(s + m);
      z << x, inputs[static_cast<std::size_t>(j)];
      Vec d(s);
      for (int i = 0; i < s; ++i)
        d[i] = oracle.state_gps[static_cast<std::size_t>(i)].sample_at(z, rng);
      x += horizon.dt * d;
      if (!x.allFinite() || x.norm() > kDivergenceBound)
        throw std::runtime_error(
            "oracle construction: conditioning rollout diverged");
      derivs.push_back(std::move(d));
      states.push_back(x);
    }
    oracle.rollout_inputs.push_back(std::move(inputs));
    oracle.rollout_states.push_back(std::move(states));
    oracle.rollout_derivs.push_back(std::move(derivs));
  }
  return oracle;
}

NominalFromOracle build_nominal_from_oracle(const GpDynamicsOracle& oracle,
                                            std::uint64_t seed) {
  const int s = oracle.dims.state_dim;
  const int m = oracle.dims.input_dim;
  const int n = oracle.horizon.n_steps;
  const double dt = oracle.horizon.dt;
  auto rng = make_rng(seed, kStreamNominal);

  // Model GPs: fresh hyperparameters, zero prior mean, no observation noise.
  // Not telling them the oracle's secret linear mean is deliberate - the
  // extracted nominal is supposed to be an approximation, not the truth.
  std::vector<GaussianProcess> model_gps;
  model_gps.reserve(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i)
    model_gps.emplace_back(oracle.config.model_hyper.draw(rng), s + m);

  // Fresh proxy controls, rollout through the frozen oracle mean dynamics.
  const std::vector<double> times = step_times(oracle.horizon, n);
  std::vector<Vec> inputs(static_cast<std::size_t>(n), Vec::Zero(m));
  for (int c = 0; c < m; ++c) {
    const Vec path = sample_gp_path(oracle.control_specs[
                                        static_cast<std::size_t>(c)],
                                    times, rng);
    for (int j = 0; j < n; ++j) inputs[static_cast<std::size_t>(j)][c] =
        path[j];
  }

  std::vector<Vec> states;
  states.reserve(static_cast<std::size_t>(n) + 1);
  Vec x = Vec::Zero(s);
  states.push_back(x);
  for (int j = 0; j < n; ++j) {
    Vec z(s + m);
    z << x, inputs[static_cast<std::size_t>(j)];
    const Vec d = oracle.mean_derivative(x, inputs[static_cast<std::size_t>(j)]);
    for (int i = 0; i < s; ++i)
      model_gps[static_cast<std::size_t>(i)].add_observation(z, d[i]);
    x += dt * d;
    if (!x.allFinite() || x.norm() > kDivergenceBound)
      throw std::runtime_error(
          "nominal extraction: proxy rollout diverged");
    states.push_back(x);
  }

  // Analytic posterior derivative at every proxy point -> Euler-discretized
  // nominal matrices and the per-step covariance of vec([A_j B_j]). Row i of
  // [A B] comes from model GP i alone, so its dt^2-scaled gradient
  // covariance lands on that row's parameter indices and rows stay
  // independent: A(i, a) sits at a*s + i, B(i, c) at s*s + c*s + i.
  std::vector<Mat> a_mats, b_mats, covs;
  const int p = oracle.dims.param_dim();
  for (int j = 0; j < n; ++j) {
    Vec z(s + m);
    z << states[static_cast<std::size_t>(j)],
        inputs[static_cast<std::size_t>(j)];
    Mat a = Mat::Identity(s, s);
    Mat b = Mat::Zero(s, m);
    Mat cov = Mat::Zero(p, p);
    for (int i = 0; i < s; ++i) {
      const Vec g = model_gps[static_cast<std::size_t>(i)].grad_mean(z);
      a.row(i) += dt * g.head(s).transpose();
      b.row(i) = dt * g.tail(m).transpose();
      const Mat gc = model_gps[static_cast<std::size_t>(i)].grad_cov(z);
      const auto param_index = [&](int reg) {
        return reg < s ? reg * s + i : s * s + (reg - s) * s + i;
      };
      for (int pr = 0; pr < s + m; ++pr)
        for (int pc = 0; pc < s + m; ++pc)
          cov(param_index(pr), param_index(pc)) = dt * dt * gc(pr, pc);
    }
    a_mats.push_back(std::move(a));
    b_mats.push_back(std::move(b));
    covs.push_back(std::move(cov));
  }

  return NominalFromOracle{LtvModel(oracle.horizon, oracle.dims,
                                    std::move(a_mats), std::move(b_mats)),
                           std::move(covs), std::move(states),
                           std::move(inputs)};
}

// ---------------------------------------------------------------------------
// Plant oracles and the trial simulator
// ---------------------------------------------------------------------------

TrialRecord simulate_trial(const PlantOracle& plant, int iteration,
                           const std::vector<Vec>& compensations,
                           const PolicyFeedback* feedback,
                           const CostWeights& weights,
                           const ExecutionSetup& setup) {
  const int s = plant.dims().state_dim;
  const int m = plant.dims().input_dim;
  const auto n = static_cast<std::size_t>(plant.horizon().n_steps);
  const Trajectory& traj = plant.reference();
  require(compensations.size() == n,
          "simulate_trial: need one compensation per step");
  for (const Vec& u : compensations)
    require(u.size() == m, "simulate_trial: compensation dimension mismatch");
  if (feedback != nullptr && feedback->gains != nullptr) {
    require(feedback->gains->size() == n,
            "simulate_trial: need one feedback gain per step");
    require(feedback->anchors == nullptr || feedback->anchors->size() >= n,
            "simulate_trial: need one feedback anchor per step");
  }
  require(setup.noise_sd >= 0.0, "simulate_trial: noise sd must be >= 0");

  Vec x = plant.initial_state();
  if (setup.init_offset.size() > 0) {
    require(setup.init_offset.size() == s,
            "simulate_trial: initial offset dimension mismatch");
    x += setup.init_offset;
  }

  std::mt19937_64 rng(setup.noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec> raw(n + 1);
  std::vector<Vec> applied(n, Vec::Zero(m));
  bool diverged = false;

  for (std::size_t j = 0; j <= n; ++j) {
    Vec e_meas = x - traj.refs[j];
    if (setup.noise_sd > 0.0)
      for (int i = 0; i < s; ++i) e_meas[i] += setup.noise_sd * gauss(rng);
    raw[j] = e_meas;
    if (j == n) break;

    Vec comp = compensations[j];
    if (feedback != nullptr && feedback->gains != nullptr) {
      const Vec anchor = feedback->anchors != nullptr
                             ? (*feedback->anchors)[j]
                             : Vec::Zero(s).eval();
      comp += (*feedback->gains)[j] * (e_meas - anchor);
    }
    applied[j] = comp;

    if (!diverged) {
      const Vec next = plant.step(static_cast<int>(j), x,
                                  traj.nominal_inputs[j] + comp);
      if (!next.allFinite() || next.norm() > kDivergenceBound)
        diverged = true;  // freeze at the last good state
      else
        x = next;
    }
  }

  std::vector<Vec> filtered =
      setup.filter ? zero_phase_filter(raw, setup.filter_cutoff_ratio) : raw;
  return TrialRecord(iteration, std::move(raw), std::move(filtered),
                     std::move(applied), weights, diverged);
}

LtvPlantSim::LtvPlantSim(std::string name, LtvModel true_model,
                         LtvModel nominal_model, Trajectory reference,
                         std::vector<Mat> model_covariances)
    : name_(std::move(name)),
      true_model_(std::move(true_model)),
      nominal_model_(std::move(nominal_model)),
      reference_(std::move(reference)),
      covariances_(std::move(model_covariances)) {
  require(true_model_.horizon.n_steps == nominal_model_.horizon.n_steps &&
              true_model_.dims.state_dim == nominal_model_.dims.state_dim &&
              true_model_.dims.input_dim == nominal_model_.dims.input_dim,
          "plant: true and nominal models must share shape");
  require(reference_.refs.size() ==
              static_cast<std::size_t>(true_model_.horizon.n_steps) + 1,
          "plant: reference length must match the horizon");
  for (const Vec& r : reference_.refs)
    require(r.size() == true_model_.dims.state_dim,
            "plant: reference dimension mismatch");
  require(covariances_.empty() ||
              covariances_.size() == true_model_.a_mats.size(),
          "plant: need one parameter covariance per step when provided");
}

Vec LtvPlantSim::initial_state() const {
  return Vec::Zero(true_model_.dims.state_dim);
}

Vec LtvPlantSim::step(int j, const Vec& state, const Vec& total_input) const {
  const auto ju = static_cast<std::size_t>(j);
  return true_model_.a_mats[ju] * state + true_model_.b_mats[ju] * total_input;
}

GpPlantSim::GpPlantSim(std::string name,
                       std::shared_ptr<const GpDynamicsOracle> oracle,
                       NominalFromOracle nominal, Trajectory reference)
    : name_(std::move(name)),
      oracle_(std::move(oracle)),
      nominal_(std::move(nominal)),
      reference_(std::move(reference)) {
  require(oracle_ != nullptr, "plant: oracle must not be null");
  require(reference_.refs.size() ==
              static_cast<std::size_t>(oracle_->horizon.n_steps) + 1,
          "plant: reference length must match the horizon");
}

Vec GpPlantSim::initial_state() const {
  return Vec::Zero(oracle_->dims.state_dim);
}

Vec GpPlantSim::step(int /*j*/, const Vec& state, const Vec& total_input) const {
  return oracle_->euler_step(state, total_input);
}

std::unique_ptr<PlantOracle> make_random_ltv_plant(const Dimensions& dims,
                                                   const Horizon& horizon,
                                                   double mismatch_alpha,
                                                   std::uint64_t seed) {
  const GpHyperPrior prior = GpHyperPrior::for_duration(horizon.duration());
  LtvModel truth =
      draw_random_ltv(dims, horizon, prior, mix_seed(seed, kStreamModel));
  RandomLtvPlant pair = make_mismatched_pair(truth, mismatch_alpha,
                                             mix_seed(seed, kStreamMismatch));
  auto ref_rng = make_rng(seed, kStreamReference);
  Trajectory reference = draw_reference_trajectory(
      dims, horizon, prior.draw(ref_rng), mix_seed(seed, kStreamReference));
  return std::make_unique<LtvPlantSim>(
      "random_ltv", std::move(pair.true_model), std::move(pair.nominal_model),
      std::move(reference));
}

std::unique_ptr<PlantOracle> make_gp_plant(const Dimensions& dims,
                                           const Horizon& horizon,
                                           int k_rollouts,
                                           std::uint64_t seed) {
  auto oracle = std::make_shared<GpDynamicsOracle>(
      build_gp_oracle(dims, horizon, k_rollouts, seed));
  NominalFromOracle nominal = build_nominal_from_oracle(*oracle, seed);
  auto ref_rng = make_rng(seed, kStreamReference);
  const GpHyperPrior prior = GpHyperPrior::for_duration(horizon.duration());
  Trajectory reference = draw_reference_trajectory(
      dims, horizon, prior.draw(ref_rng), mix_seed(seed, kStreamReference));
  return std::make_unique<GpPlantSim>("gp_oracle", std::move(oracle),
                                      std::move(nominal),
                                      std::move(reference));
}

}  // namespace bilc
