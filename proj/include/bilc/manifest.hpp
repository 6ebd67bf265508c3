#pragma once
// Experiment configuration. A manifest is a small INI-style text file --
// `[section]` headers over `key = value` lines, `#` comments -- describing
// the plant, the input-update law, the model-adaptation law, cost weights,
// execution knobs, and output location. Parsing is strict: unknown sections
// or keys, malformed values, and out-of-range settings raise
// std::invalid_argument naming the offender. Serialization emits every field
// with full double precision so a manifest round-trips losslessly.

#include "bilc/baselines.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace bilc {

enum class PlantKind { kRandomLtv, kGpOracle, kTwoLinkArm };
enum class AdaptKind { kNone, kLbrDiscrete, kLbrContinuous, kLinkParams };

std::string plant_kind_name(PlantKind kind);
PlantKind parse_plant_kind(const std::string& name);
std::string adapt_kind_name(AdaptKind kind);
AdaptKind parse_adapt_kind(const std::string& name);

/// Complete description of one experiment family. Field groups mirror the
/// file sections; defaults describe a small abstract-LTV run.
struct ExperimentManifest {
  // [plant]
  PlantKind plant = PlantKind::kRandomLtv;
  int state_dim = 2;
  int input_dim = 2;
  int horizon_steps = 120;
  double dt = 0.01;
  double mismatch_alpha = 100.0;  // random-ltv: nominal/true lifted mismatch
  int gp_rollouts = 3;            // gp-oracle: conditioning rollouts
  double strike_duration = 1.0;   // two-link-arm: strike time span

  // [law]
  IlcUpdateLaw law;
  std::vector<LawKind> compare_laws;  // optional list for law comparisons

  // [adaptation]
  AdaptKind adaptation = AdaptKind::kNone;
  double forget = 1.0;             // forgetting factor, in (0, 1]
  double prior_var = 1.0;          // isotropic prior parameter variance
  double noise_var = 1.0;          // regression observation noise variance
  bool prior_from_plant = false;   // use generator covariances when provided
  int belief_samples = 300;        // link-params Monte-Carlo sample count

  // [weights]
  double q_scale = 1.0;
  double r_scale = 1e-6;

  // [run]
  int iterations = 10;
  int reps = 10;
  std::uint64_t seed = 0;
  double epsilon = 1e-3;  // stop once the error norm drops below this

  // [filter]
  bool filter = false;
  double filter_cutoff_ratio = 0.2;

  // [noise]
  double noise_sd = 0.0;

  // [perturbation]
  double init_position_rad = 0.0;  // per-trial initial joint offset scale
  bool adapt_strike = false;       // rebuild the strike from the new start

  // [output]
  std::string out_dir = ".";

  /// Throws std::invalid_argument on any out-of-range or inconsistent
  /// setting (e.g. structured adaptation on a non-arm plant).
  void validate() const;
};

/// Parses a manifest from a stream / file. The result is validated.
ExperimentManifest parse_manifest(std::istream& in);
ExperimentManifest parse_manifest_file(const std::string& path);

/// Emits the full manifest (every field, `%.17g` doubles). Parsing the
/// result reproduces the struct exactly.
std::string serialize_manifest(const ExperimentManifest& manifest);
void write_manifest_file(const ExperimentManifest& manifest,
                         const std::string& path);

}  // namespace bilc
