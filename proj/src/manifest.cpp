#include "bilc/manifest.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bilc {
namespace {

[[noreturn]] void fail(const std::string& what) {
  throw std::invalid_argument("manifest: " + what);
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    fail("key '" + key + "' has non-numeric value '" + v + "'");
  }
  if (used != v.size()) fail("key '" + key + "' has trailing junk in '" + v + "'");
  if (!std::isfinite(out)) fail("key '" + key + "' must be finite");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    fail("key '" + key + "' has non-integer value '" + v + "'");
  }
  if (used != v.size()) fail("key '" + key + "' has trailing junk in '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    fail("key '" + key + "' has non-integer value '" + v + "'");
  }
  if (used != v.size()) fail("key '" + key + "' has trailing junk in '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("key '" + key + "' must be true/false, got '" + v + "'");
}

std::vector<LawKind> parse_law_list(const std::string& value) {
  std::vector<LawKind> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_law_kind(item));
  }
  return out;
}

}  // namespace

std::string plant_kind_name(PlantKind kind) {
  switch (kind) {
    case PlantKind::kRandomLtv:
      return "random-ltv";
    case PlantKind::kGpOracle:
      return "gp-oracle";
    case PlantKind::kTwoLinkArm:
      return "two-link-arm";
  }
  fail("unknown plant kind");
}

PlantKind parse_plant_kind(const std::string& name) {
  if (name == "random-ltv") return PlantKind::kRandomLtv;
  if (name == "gp-oracle") return PlantKind::kGpOracle;
  if (name == "two-link-arm") return PlantKind::kTwoLinkArm;
  fail("unknown plant kind '" + name + "'");
}

std::string adapt_kind_name(AdaptKind kind) {
  switch (kind) {
    case AdaptKind::kNone:
      return "none";
    case AdaptKind::kLbrDiscrete:
      return "lbr-discrete";
    case AdaptKind::kLbrContinuous:
      return "lbr-continuous";
    case AdaptKind::kLinkParams:
      return "link-params";
  }
  fail("unknown adaptation kind");
}

AdaptKind parse_adapt_kind(const std::string& name) {
  if (name == "none") return AdaptKind::kNone;
  if (name == "lbr-discrete") return AdaptKind::kLbrDiscrete;
  if (name == "lbr-continuous") return AdaptKind::kLbrContinuous;
  if (name == "link-params") return AdaptKind::kLinkParams;
  fail("unknown adaptation kind '" + name + "'");
}

void ExperimentManifest::validate() const {
  if (state_dim < 1) fail("plant.state_dim must be >= 1");
  if (input_dim < 1) fail("plant.input_dim must be >= 1");
  if (horizon_steps < 2) fail("plant.horizon_steps must be >= 2");
  if (!(dt > 0.0)) fail("plant.dt must be > 0");
  if (mismatch_alpha < 0.0) fail("plant.mismatch_alpha must be >= 0");
  if (gp_rollouts < 1) fail("plant.gp_rollouts must be >= 1");
  if (!(strike_duration > 0.0)) fail("plant.strike_duration must be > 0");
  if (plant == PlantKind::kTwoLinkArm &&
      (state_dim != 4 || input_dim != 2))
    fail("two-link-arm runs have state_dim = 4, input_dim = 2");

  try {
    law.validate();
    for (LawKind kind : compare_laws) (void)law_kind_name(kind);
  } catch (const std::exception& e) {
    fail(std::string("law: ") + e.what());
  }

  if (!(forget > 0.0) || forget > 1.0)
    fail("adaptation.forget must be in (0, 1]");
  if (prior_var < 0.0) fail("adaptation.prior_var must be >= 0");
  if (!(noise_var > 0.0)) fail("adaptation.noise_var must be > 0");
  if (belief_samples < 2) fail("adaptation.belief_samples must be >= 2");
  if ((adaptation == AdaptKind::kLbrContinuous ||
       adaptation == AdaptKind::kLinkParams) &&
      plant != PlantKind::kTwoLinkArm)
    fail("adaptation '" + adapt_kind_name(adaptation) +
         "' requires the two-link-arm plant");

  if (!(q_scale >= 0.0)) fail("weights.q_scale must be >= 0");
  if (!(r_scale > 0.0)) fail("weights.r_scale must be > 0");

  if (iterations < 0) fail("run.iterations must be >= 0");
  if (reps < 1) fail("run.reps must be >= 1");
  if (!(epsilon > 0.0)) fail("run.epsilon must be > 0");

  if (!(filter_cutoff_ratio > 0.0) || filter_cutoff_ratio >= 1.0)
    fail("filter.cutoff_ratio must be in (0, 1)");
  if (noise_sd < 0.0) fail("noise.sd must be >= 0");
  if (init_position_rad < 0.0) fail("perturbation.init_rad must be >= 0");
  if (out_dir.empty()) fail("output.dir must not be empty");
}

ExperimentManifest parse_manifest(std::istream& in) {
  ExperimentManifest m;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        fail("line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "plant" && section != "law" && section != "adaptation" &&
          section != "weights" && section != "run" && section != "filter" &&
          section != "noise" && section != "perturbation" &&
          section != "output")
        fail("unknown section '" + section + "'");
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) fail("key '" + key + "' appears before any section");
    const std::string qual = section + "." + key;

    if (qual == "plant.kind") {
      m.plant = parse_plant_kind(value);
    } else if (qual == "plant.state_dim") {
      m.state_dim = static_cast<int>(parse_int(qual, value));
    } else if (qual == "plant.input_dim") {
      m.input_dim = static_cast<int>(parse_int(qual, value));
    } else if (qual == "plant.horizon_steps") {
      m.horizon_steps = static_cast<int>(parse_int(qual, value));
    } else if (qual == "plant.dt") {
      m.dt = parse_double(qual, value);
    } else if (qual == "plant.mismatch_alpha") {
      m.mismatch_alpha = parse_double(qual, value);
    } else if (qual == "plant.gp_rollouts") {
      m.gp_rollouts = static_cast<int>(parse_int(qual, value));
    } else if (qual == "plant.strike_duration") {
      m.strike_duration = parse_double(qual, value);
    } else if (qual == "law.kind") {
      m.law.kind = parse_law_kind(value);
    } else if (qual == "law.rate") {
      m.law.rate = parse_double(qual, value);
    } else if (qual == "law.p_gain") {
      m.law.p_gain = parse_double(qual, value);
    } else if (qual == "law.d_gain") {
      m.law.d_gain = parse_double(qual, value);
    } else if (qual == "law.compare") {
      m.compare_laws = parse_law_list(value);
    } else if (qual == "adaptation.kind") {
      m.adaptation = parse_adapt_kind(value);
    } else if (qual == "adaptation.forget") {
      m.forget = parse_double(qual, value);
    } else if (qual == "adaptation.prior_var") {
      m.prior_var = parse_double(qual, value);
    } else if (qual == "adaptation.noise_var") {
      m.noise_var = parse_double(qual, value);
    } else if (qual == "adaptation.prior_from_plant") {
      m.prior_from_plant = parse_bool(qual, value);
    } else if (qual == "adaptation.belief_samples") {
      m.belief_samples = static_cast<int>(parse_int(qual, value));
    } else if (qual == "weights.q_scale") {
      m.q_scale = parse_double(qual, value);
    } else if (qual == "weights.r_scale") {
      m.r_scale = parse_double(qual, value);
    } else if (qual == "run.iterations") {
      m.iterations = static_cast<int>(parse_int(qual, value));
    } else if (qual == "run.reps") {
      m.reps = static_cast<int>(parse_int(qual, value));
    } else if (qual == "run.seed") {
      m.seed = parse_u64(qual, value);
    } else if (qual == "run.epsilon") {
      m.epsilon = parse_double(qual, value);
    } else if (qual == "filter.enabled") {
      m.filter = parse_bool(qual, value);
    } else if (qual == "filter.cutoff_ratio") {
      m.filter_cutoff_ratio = parse_double(qual, value);
    } else if (qual == "noise.sd") {
      m.noise_sd = parse_double(qual, value);
    } else if (qual == "perturbation.init_rad") {
      m.init_position_rad = parse_double(qual, value);
    } else if (qual == "perturbation.adapt_strike") {
      m.adapt_strike = parse_bool(qual, value);
    } else if (qual == "output.dir") {
      m.out_dir = value;
    } else {
      fail("unknown key '" + qual + "'");
    }
  }
  m.validate();
  return m;
}

ExperimentManifest parse_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  return parse_manifest(in);
}

std::string serialize_manifest(const ExperimentManifest& m) {
  std::ostringstream out;
  out << "[plant]\n"
      << "kind = " << plant_kind_name(m.plant) << "\n"
      << "state_dim = " << m.state_dim << "\n"
      << "input_dim = " << m.input_dim << "\n"
      << "horizon_steps = " << m.horizon_steps << "\n"
      << "dt = " << format_double(m.dt) << "\n"
      << "mismatch_alpha = " << format_double(m.mismatch_alpha) << "\n"
      << "gp_rollouts = " << m.gp_rollouts << "\n"
      << "strike_duration = " << format_double(m.strike_duration) << "\n\n";

  out << "[law]\n"
      << "kind = " << law_kind_name(m.law.kind) << "\n"
      << "rate = " << format_double(m.law.rate) << "\n"
      << "p_gain = " << format_double(m.law.p_gain) << "\n"
      << "d_gain = " << format_double(m.law.d_gain) << "\n";
  if (!m.compare_laws.empty()) {
    out << "compare = ";
    for (std::size_t i = 0; i < m.compare_laws.size(); ++i) {
      if (i) out << ",";
      out << law_kind_name(m.compare_laws[i]);
    }
    out << "\n";
  }
  out << "\n";

  out << "[adaptation]\n"
      << "kind = " << adapt_kind_name(m.adaptation) << "\n"
      << "forget = " << format_double(m.forget) << "\n"
      << "prior_var = " << format_double(m.prior_var) << "\n"
      << "noise_var = " << format_double(m.noise_var) << "\n"
      << "prior_from_plant = " << (m.prior_from_plant ? "true" : "false")
      << "\n"
      << "belief_samples = " << m.belief_samples << "\n\n";

  out << "[weights]\n"
      << "q_scale = " << format_double(m.q_scale) << "\n"
      << "r_scale = " << format_double(m.r_scale) << "\n\n";

  out << "[run]\n"
      << "iterations = " << m.iterations << "\n"
      << "reps = " << m.reps << "\n"
      << "seed = " << m.seed << "\n"
      << "epsilon = " << format_double(m.epsilon) << "\n\n";

  out << "[filter]\n"
      << "enabled = " << (m.filter ? "true" : "false") << "\n"
      << "cutoff_ratio = " << format_double(m.filter_cutoff_ratio) << "\n\n";

  out << "[noise]\n"
      << "sd = " << format_double(m.noise_sd) << "\n\n";

  out << "[perturbation]\n"
      << "init_rad = " << format_double(m.init_position_rad) << "\n"
      << "adapt_strike = " << (m.adapt_strike ? "true" : "false") << "\n\n";

  out << "[output]\n"
      << "dir = " << m.out_dir << "\n";
  return out.str();
}

void write_manifest_file(const ExperimentManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write '" + path + "'");
  out << serialize_manifest(m);
  if (!out) fail("write to '" + path + "' failed");
}

}  // namespace bilc
