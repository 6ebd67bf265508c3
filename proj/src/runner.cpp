#include "bilc/runner.hpp"

#include "bilc/arm.hpp"
#include "bilc/baselines.hpp"
#include "bilc/belief.hpp"
#include "bilc/cautious.hpp"
#include "bilc/seeding.hpp"
#include "bilc/signal.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

namespace bilc {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

/// The belief means reassembled as a plain model (what certainty-equivalent
/// laws consume).
LtvModel mean_model(const ModelBelief& belief, const Horizon& horizon) {
  std::vector<Mat> a_mats, b_mats;
  a_mats.reserve(belief.steps.size());
  b_mats.reserve(belief.steps.size());
  for (int j = 0; j < belief.n_steps(); ++j) {
    a_mats.push_back(belief.mean_a(j));
    b_mats.push_back(belief.mean_b(j));
  }
  return LtvModel(horizon, belief.dims, std::move(a_mats), std::move(b_mats));
}

/// Fresh per-trial initial-state offset: a random direction over the
/// perturbed coordinates scaled to exactly `radius`. Arm states are
/// [q; qd] and only positions are physically perturbed; abstract plants
/// have no such split, so the whole state moves.
Vec draw_init_offset(double radius, int state_dim, bool positions_only,
                     std::uint64_t seed) {
  const int active = positions_only ? state_dim / 2 : state_dim;
  std::mt19937_64 rng = make_rng(seed, kStreamPerturbation);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec dir(active);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (int i = 0; i < active; ++i) dir[i] = gauss(rng);
    norm = dir.norm();
  }
  Vec offset = Vec::Zero(state_dim);
  offset.head(active) = dir * (radius / norm);
  return offset;
}

/// Per-repetition learning-loop state that depends on the adaptation law.
struct BeliefState {
  ModelBelief belief;                       // discrete per-step belief
  std::optional<LinkParams> link_params;    // link-parameter posterior
  std::vector<GaussianBelief> continuous;   // acceleration-level beliefs
};

BeliefState initial_beliefs(const ExperimentManifest& man,
                            const PlantOracle& plant,
                            const ArmPlantSim* arm_plant) {
  const Horizon horizon = plant.horizon();
  switch (man.adaptation) {
    case AdaptKind::kLinkParams: {
      // The parameter-space prior cannot be pushed through the dynamics
      // before any data at the enormous covariances used for first-trial
      // regression, so iteration 0 starts certainty-equivalent; sampled
      // caution enters with the first posterior.
      BeliefState state{ModelBelief::from_model(plant.nominal_model(), 0.0,
                                                man.noise_var, man.forget),
                        LinkParams::isotropic(arm_plant->nominal_arm().theta,
                                              man.prior_var, man.noise_var,
                                              man.forget),
                        {}};
      return state;
    }
    case AdaptKind::kLbrContinuous: {
      // Acceleration-level beliefs along the reference, discretized into
      // the per-step model belief.
      BeliefState state{ModelBelief::from_model(plant.nominal_model(), 0.0,
                                                man.noise_var, man.forget),
                        std::nullopt,
                        {}};
      const Trajectory& traj = plant.reference();
      const int n = horizon.n_steps;
      state.continuous.reserve(n);
      for (int j = 0; j < n; ++j) {
        const Vec& x = traj.refs[static_cast<std::size_t>(j)];
        const ArmLinearization lin =
            linearize(arm_plant->nominal_arm(), x.head(2), x.tail(2),
                      traj.nominal_inputs[static_cast<std::size_t>(j)]);
        Mat cont(2, 6);
        cont << lin.a_c.bottomRows(2), lin.b_c.bottomRows(2);
        const Eigen::Map<const Vec> mean(cont.data(), cont.size());
        state.continuous.emplace_back(mean,
                                      man.prior_var * Mat::Identity(12, 12));
        state.belief.steps[static_cast<std::size_t>(j)] = discretize_belief(
            state.continuous.back(), 2, 2, horizon.dt);
      }
      return state;
    }
    case AdaptKind::kNone:
    case AdaptKind::kLbrDiscrete:
      break;
  }
  if (man.prior_from_plant && plant.model_covariances())
    return BeliefState{ModelBelief::from_model(plant.nominal_model(),
                                               *plant.model_covariances(),
                                               man.noise_var, man.forget),
                       std::nullopt,
                       {}};
  return BeliefState{ModelBelief::from_model(plant.nominal_model(),
                                             man.prior_var, man.noise_var,
                                             man.forget),
                     std::nullopt,
                     {}};
}

/// Folds one executed trial into the beliefs. Diverged trials carry frozen,
/// meaningless tails and are skipped wholesale.
void update_beliefs(const ExperimentManifest& man, BeliefState& state,
                    const TrialRecord& trial,
                    const std::optional<TrialRecord>& previous,
                    const PlantOracle& plant, const ArmPlantSim* arm_plant,
                    std::uint64_t rep_seed) {
  if (trial.diverged) return;
  const Horizon horizon = plant.horizon();
  switch (man.adaptation) {
    case AdaptKind::kNone:
      return;
    case AdaptKind::kLbrDiscrete:
      if (previous && !previous->diverged)
        state.belief.absorb_trial_pair(trial, *previous);
      return;
    case AdaptKind::kLbrContinuous: {
      if (!previous || previous->diverged) return;
      const int n = horizon.n_steps;
      const auto velocity_errors = [&](const TrialRecord& t) {
        std::vector<Vec> v;
        v.reserve(t.filtered_errors.size());
        for (const Vec& e : t.filtered_errors) v.push_back(e.tail(2));
        return v;
      };
      const std::vector<Vec> acc_now =
          discrete_derivative(velocity_errors(trial), horizon.dt);
      const std::vector<Vec> acc_prev =
          discrete_derivative(velocity_errors(*previous), horizon.dt);
      for (int j = 0; j < n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const Vec accel_diff = acc_now[ju] - acc_prev[ju];
        const Vec error_diff =
            trial.filtered_errors[ju] - previous->filtered_errors[ju];
        const Vec input_diff =
            trial.applied_inputs[ju] - previous->applied_inputs[ju];
        state.continuous[ju] =
            adapt_continuous(state.continuous[ju], accel_diff, error_diff,
                             input_diff, man.noise_var, man.forget);
        state.belief.steps[ju] =
            discretize_belief(state.continuous[ju], 2, 2, horizon.dt);
      }
      return;
    }
    case AdaptKind::kLinkParams: {
      state.link_params = adapt_link_params(*state.link_params, trial,
                                            arm_plant->nominal_arm(),
                                            plant.reference(), horizon);
      try {
        state.belief = sample_link_derivatives(
            *state.link_params, arm_plant->nominal_arm(), plant.reference(),
            horizon, man.belief_samples,
            mix_seed(mix_seed(rep_seed, kStreamSampling),
                     static_cast<std::uint64_t>(trial.iteration)),
            man.noise_var, man.forget);
      } catch (const std::runtime_error&) {
        // A posterior still too wide to yield buildable sample arms keeps
        // the previous model belief; the parameter posterior above retains
        // the data either way.
      }
      return;
    }
  }
}

/// Executes one repetition. Deterministic in (manifest, rep).
std::vector<RunRow> run_one_rep(const ExperimentManifest& man, int rep) {
  const std::uint64_t rep_seed =
      mix_seed(man.seed, static_cast<std::uint64_t>(rep));
  std::unique_ptr<PlantOracle> base_plant = build_plant(man, rep_seed);
  const ArmPlantSim* arm_plant =
      dynamic_cast<const ArmPlantSim*>(base_plant.get());
  const Horizon horizon = base_plant->horizon();
  const Dimensions dims = base_plant->dims();
  const int n = horizon.n_steps;
  const CostWeights weights = CostWeights::uniform(
      n, dims.state_dim, dims.input_dim, man.q_scale, man.r_scale);

  // The active plant: strike adaptation swaps in a rebuilt one per trial.
  const PlantOracle* plant = base_plant.get();
  std::unique_ptr<ArmPlantSim> adapted_plant;
  std::optional<StrikePolynomial> current_strike;
  Vec hit_q, hit_qd;  // original hitting state, for the final-state cost
  if (arm_plant) {
    current_strike = arm_plant->strike();
    hit_q = current_strike->qf;
    hit_qd = current_strike->qdf;
  }

  BeliefState beliefs = initial_beliefs(man, *base_plant, arm_plant);

  std::vector<RunRow> rows;
  rows.reserve(static_cast<std::size_t>(man.iterations) + 1);
  std::vector<Vec> comp(static_cast<std::size_t>(n),
                        Vec::Zero(dims.input_dim));
  std::optional<TrialRecord> prev;

  for (int iter = 0; iter <= man.iterations; ++iter) {
    const auto tic = std::chrono::steady_clock::now();

    // -- Input update ------------------------------------------------------
    std::optional<CautiousPolicy> policy;
    std::vector<Mat> plain_gains;
    PolicyFeedback feedback;
    const PolicyFeedback* feedback_ptr = nullptr;
    bool update_failed = false;
    try {
      if (iter == 0) {
        // Initial rollout: feedback only. The cautious law designs it from
        // the prior belief (pure LQR at zero covariance); the others use
        // LQR on the nominal means.
        if (man.law.kind == LawKind::kBayesCautious) {
          policy = cautious_backward_pass(beliefs.belief, weights, {});
          feedback.gains = &policy->gains;
        } else {
          plain_gains =
              lqr_design(mean_model(beliefs.belief, horizon), weights);
          feedback.gains = &plain_gains;
        }
        feedback_ptr = &feedback;
      } else {
        switch (man.law.kind) {
          case LawKind::kBayesCautious:
            policy = cautious_backward_pass(beliefs.belief, weights,
                                            prev->filtered_errors);
            break;
          case LawKind::kRecursivePlain:
            policy = recursive_plain_update(mean_model(beliefs.belief, horizon),
                                            weights, prev->filtered_errors);
            break;
          case LawKind::kBatchPinv: {
            const LiftedModel lifted =
                build_lifted(mean_model(beliefs.belief, horizon));
            const Vec next = batch_ilc_update(
                lifted, stack_tail_errors(prev->filtered_errors),
                stack_inputs(prev->applied_inputs), man.law.rate);
            comp = unstack_inputs(next, n, dims.input_dim);
            break;
          }
          case LawKind::kPdType: {
            const std::vector<Vec> delta = pd_ilc_update(
                prev->filtered_errors, man.law.p_gain, man.law.d_gain,
                horizon.dt);
            for (int j = 0; j < n; ++j) {
              const auto ju = static_cast<std::size_t>(j);
              comp[ju] = prev->applied_inputs[ju] + delta[ju];
            }
            break;
          }
        }
        if (policy) {
          for (int j = 0; j < n; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            comp[ju] = prev->applied_inputs[ju] + policy->feedforward[ju];
          }
          feedback.gains = &policy->gains;
          feedback.anchors = &policy->anchors;
          feedback_ptr = &feedback;
        }
      }
    } catch (const std::exception&) {
      // A backward pass or pseudoinverse blowing up on non-finite numbers is
      // divergence of the learning loop; record it and move on.
      update_failed = true;
    }

    if (update_failed) {
      RunRow row;
      row.rep = rep;
      row.iter = iter;
      row.tracking_norm = prev ? prev->error_norm : kNan;
      row.ident_err = kNan;
      row.final_cost = kNan;
      row.diverged = true;
      row.wall_ms = ms_since(tic);
      rows.push_back(row);
      break;
    }

    // -- Initial-state perturbation ---------------------------------------
    ExecutionSetup setup;
    setup.noise_sd = man.noise_sd;
    setup.filter = man.filter;
    setup.filter_cutoff_ratio = man.filter_cutoff_ratio;
    setup.noise_seed = mix_seed(mix_seed(rep_seed, kStreamNoise),
                                static_cast<std::uint64_t>(iter));
    if (man.init_position_rad > 0.0) {
      const Vec offset = draw_init_offset(
          man.init_position_rad, dims.state_dim, arm_plant != nullptr,
          mix_seed(rep_seed, static_cast<std::uint64_t>(iter)));
      if (arm_plant && man.adapt_strike) {
        // Rebuild the strike from the perturbed start toward the original
        // hitting state and carry the learned inputs over; the plant then
        // starts exactly on the regenerated reference.
        std::vector<Vec> totals(static_cast<std::size_t>(n));
        const Trajectory& traj = plant->reference();
        for (int j = 0; j < n; ++j) {
          const auto ju = static_cast<std::size_t>(j);
          totals[ju] = traj.nominal_inputs[ju] + comp[ju];
        }
        const Vec q0_new =
            arm_plant->strike().q0 + offset.head(2);
        AdaptedStrike next = adapt_to_initial_state(
            *current_strike, q0_new, arm_plant->strike().qd0,
            arm_plant->nominal_arm(), totals, horizon);
        for (int j = 0; j < n; ++j) {
          const auto ju = static_cast<std::size_t>(j);
          comp[ju] = next.inputs[ju] - next.trajectory.nominal_inputs[ju];
        }
        current_strike = next.strike;
        adapted_plant = std::make_unique<ArmPlantSim>(
            arm_plant->true_arm(), arm_plant->nominal_arm(), next.strike,
            next.trajectory, horizon);
        plant = adapted_plant.get();
      } else {
        setup.init_offset = offset;
      }
    }

    // -- Trial -------------------------------------------------------------
    TrialRecord trial =
        simulate_trial(*plant, iter, comp, feedback_ptr, weights, setup);

    update_beliefs(man, beliefs, trial, prev, *plant, arm_plant, rep_seed);

    RunRow row;
    row.rep = rep;
    row.iter = iter;
    row.tracking_norm = trial.error_norm;
    row.ident_err = base_plant->true_model()
                        ? beliefs.belief.identification_error(
                              *base_plant->true_model())
                        : kNan;
    row.final_cost = arm_plant ? final_state_cost(trial, plant->reference(),
                                                  hit_q, hit_qd)
                               : kNan;
    row.diverged = trial.diverged;
    row.wall_ms = ms_since(tic);
    rows.push_back(row);

    if (trial.diverged) break;
    prev = std::move(trial);
    if (prev->error_norm < man.epsilon) break;
  }
  return rows;
}

double column_mean(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

double column_sd(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

}  // namespace

std::unique_ptr<PlantOracle> build_plant(const ExperimentManifest& man,
                                         std::uint64_t rep_seed) {
  const Horizon horizon(man.horizon_steps, man.dt);
  switch (man.plant) {
    case PlantKind::kRandomLtv:
      return make_random_ltv_plant(Dimensions(man.state_dim, man.input_dim),
                                   horizon, man.mismatch_alpha, rep_seed);
    case PlantKind::kGpOracle:
      return make_gp_plant(Dimensions(man.state_dim, man.input_dim), horizon,
                           man.gp_rollouts, rep_seed);
    case PlantKind::kTwoLinkArm: {
      if (std::abs(horizon.duration() - man.strike_duration) >
          1e-9 * std::max(1.0, man.strike_duration))
        throw std::invalid_argument(
            "manifest: horizon_steps * dt must equal strike_duration for "
            "two-link-arm runs");
      StrikeSpec spec = StrikeSpec::random(rep_seed);
      spec.duration = man.strike_duration;
      return make_arm_plant(spec, horizon, rep_seed);
    }
  }
  throw std::invalid_argument("manifest: unknown plant kind");
}

RunLog run_experiment(const ExperimentManifest& man, int workers) {
  man.validate();
  const int reps = man.reps;
  std::vector<std::vector<RunRow>> per_rep(static_cast<std::size_t>(reps));

  if (workers <= 1 || reps == 1) {
    for (int r = 0; r < reps; ++r)
      per_rep[static_cast<std::size_t>(r)] = run_one_rep(man, r);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&] {
      for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) {
        try {
          per_rep[static_cast<std::size_t>(r)] = run_one_rep(man, r);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(workers, reps);
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  RunLog log;
  for (const auto& rows : per_rep)
    log.rows.insert(log.rows.end(), rows.begin(), rows.end());
  return log;
}

void emit_csv(const RunLog& log, std::ostream& out) {
  out << "rep,iter,J,ident_err,final_cost,diverged,wall_ms\n";
  char buf[256];
  for (const RunRow& row : log.rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.12g,%.12g,%.12g,%d,%.12g\n",
                  row.rep, row.iter, row.tracking_norm, row.ident_err,
                  row.final_cost, row.diverged ? 1 : 0, row.wall_ms);
    out << buf;
  }
}

void emit_csv_file(const RunLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write '" + path + "'");
  emit_csv(log, out);
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<LawSummary> compare_laws(const ExperimentManifest& man,
                                     int workers) {
  man.validate();
  std::vector<LawKind> laws = man.compare_laws;
  if (laws.empty()) laws.push_back(man.law.kind);

  std::vector<LawSummary> summaries;
  summaries.reserve(laws.size());
  for (LawKind kind : laws) {
    ExperimentManifest variant = man;
    variant.law.kind = kind;
    variant.compare_laws.clear();

    LawSummary summary;
    summary.law = kind;
    summary.log = run_experiment(variant, workers);

    // Regroup rows per repetition.
    std::vector<std::vector<double>> traces(
        static_cast<std::size_t>(man.reps));
    std::vector<bool> rep_diverged(static_cast<std::size_t>(man.reps), false);
    for (const RunRow& row : summary.log.rows) {
      traces[static_cast<std::size_t>(row.rep)].push_back(row.tracking_norm);
      if (row.diverged)
        rep_diverged[static_cast<std::size_t>(row.rep)] = true;
    }

    std::size_t max_len = 0;
    for (const auto& t : traces) max_len = std::max(max_len, t.size());
    int monotone = 0;
    double final_sum = 0.0;
    for (std::size_t r = 0; r < traces.size(); ++r) {
      const auto& t = traces[r];
      bool ok = !rep_diverged[r] && !t.empty();
      for (std::size_t k = 0; ok && k + 1 < t.size(); ++k)
        if (t[k + 1] > t[k] * (1.0 + 1e-12)) ok = false;
      if (ok) ++monotone;
      if (!t.empty()) final_sum += t.back();
    }
    summary.monotone_fraction =
        static_cast<double>(monotone) / static_cast<double>(man.reps);
    summary.mean_final = final_sum / static_cast<double>(man.reps);

    summary.mean_tracking.resize(max_len, 0.0);
    summary.sd_tracking.resize(max_len, 0.0);
    for (std::size_t k = 0; k < max_len; ++k) {
      std::vector<double> column;
      column.reserve(traces.size());
      for (const auto& t : traces)
        if (!t.empty()) column.push_back(k < t.size() ? t[k] : t.back());
      const double mean = column_mean(column);
      summary.mean_tracking[k] = mean;
      summary.sd_tracking[k] = column_sd(column, mean);
    }
    summaries.push_back(std::move(summary));
  }
  return summaries;
}

std::string format_summary_table(const std::vector<LawSummary>& summaries) {
  std::ostringstream out;
  char buf[160];
  for (const LawSummary& s : summaries) {
    out << "law " << law_kind_name(s.law)
        << "  (monotone fraction " << s.monotone_fraction << ", mean final "
        << s.mean_final << ")\n";
    out << "  iter      mean_J        sd_J\n";
    for (std::size_t k = 0; k < s.mean_tracking.size(); ++k) {
      std::snprintf(buf, sizeof buf, "  %4zu  %12.6g  %10.4g\n", k,
                    s.mean_tracking[k], s.sd_tracking[k]);
      out << buf;
    }
  }
  return out.str();
}

}  // namespace bilc
