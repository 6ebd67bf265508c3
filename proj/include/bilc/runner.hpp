#pragma once
// Experiment orchestration: builds the configured plant per repetition, runs
// the learning loop (initial feedback-only rollout, then per iteration a
// backward pass / input update, a trial, and a belief update), logs one row
// per iteration, emits CSV, and compares update laws on seed-paired plants.
//
// Determinism: every random component derives from (manifest seed,
// repetition index, stream), so logs are byte-identical across runs and
// across worker counts (timing column aside).

#include "bilc/benchgen.hpp"
#include "bilc/manifest.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace bilc {

/// One iteration of one repetition. Quantities that do not apply hold NaN:
/// the identification error needs an analytic true model (abstract LTV
/// plants only), the final-state cost is an arm quantity.
struct RunRow {
  int rep = 0;
  int iter = 0;
  double tracking_norm = 0.0;  // weighted error norm of the trial
  double ident_err = 0.0;
  double final_cost = 0.0;
  bool diverged = false;
  double wall_ms = 0.0;  // wall time of this iteration (update + trial)
};

/// Rows ordered by (rep, iter); iterations within a repetition are
/// contiguous and start at 0 (the initial rollout).
struct RunLog {
  std::vector<RunRow> rows;
};

/// Builds the plant the manifest describes, deterministically from
/// `rep_seed`. Throws std::invalid_argument on inconsistent settings (e.g.
/// an arm horizon that does not span the strike duration).
std::unique_ptr<PlantOracle> build_plant(const ExperimentManifest& manifest,
                                         std::uint64_t rep_seed);

/// Runs the configured experiment over all repetitions, optionally across a
/// worker pool (repetitions are independent; rows merge in repetition
/// order). Stops a repetition early when the error norm drops below the
/// manifest epsilon or the plant diverges; later repetitions still run.
RunLog run_experiment(const ExperimentManifest& manifest, int workers = 1);

/// Writes `rep,iter,J,ident_err,final_cost,diverged,wall_ms` with 12
/// significant digits, one newline-terminated row per log entry.
void emit_csv(const RunLog& log, std::ostream& out);
void emit_csv_file(const RunLog& log, const std::string& path);

/// Per-law digest of a seed-paired comparison run.
struct LawSummary {
  LawKind law = LawKind::kBayesCautious;
  std::vector<double> mean_tracking;  // per iteration, across repetitions
  std::vector<double> sd_tracking;    // (repetitions that stopped early are
                                      //  carried at their last value)
  double monotone_fraction = 0.0;  // repetitions with non-increasing norms
  double mean_final = 0.0;         // mean of per-repetition final norms
  RunLog log;
};

/// Runs every law in manifest.compare_laws (or just manifest.law.kind when
/// the list is empty) on identical per-repetition plants and summarizes.
std::vector<LawSummary> compare_laws(const ExperimentManifest& manifest,
                                     int workers = 1);

/// Human-readable table: one block of per-iteration mean +- sd rows per law
/// plus the monotone fraction line.
std::string format_summary_table(const std::vector<LawSummary>& summaries);

}  // namespace bilc
