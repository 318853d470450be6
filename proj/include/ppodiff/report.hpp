#pragma once

// Aggregation of finished runs into per-arm tables, paired tests against the
// vanilla arm, and static SVG figures.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppodiff/evalstats.hpp"

namespace ppodiff {

struct SeedRun {
  std::filesystem::path dir;
  std::uint64_t seed = 0;
  std::string mode;
  double budget = 0.0;
  double alc_fraction = 0.4;
  LearningCurve curve;
  std::map<std::string, std::vector<double>> runlog;
  double seconds_per_10k = 0.0;
};

/// Reads config.txt, curve.csv, runlog.csv and timing.txt from a run directory.
SeedRun load_seed_run(const std::filesystem::path& dir);

struct ArmRuns {
  std::string name;
  std::vector<SeedRun> runs;
};

/// `dir` is either one run directory or a directory of seed_* run directories.
ArmRuns load_arm(const std::filesystem::path& dir);

struct PairedTest {
  WilcoxonResult final_return;
  WilcoxonResult alc;
};

struct ArmSummary {
  std::string name;
  std::string mode;
  std::vector<std::uint64_t> seeds;
  std::vector<double> finals;
  std::vector<double> alcs;
  ConfidenceInterval final_ci;
  ConfidenceInterval alc_ci;
  std::optional<BoxSummary> k_policy;
  std::optional<BoxSummary> k_prior;  // iterations with adapter steps only
  double seconds_per_10k = 0.0;
  std::optional<PairedTest> vs_baseline;
};

struct Report {
  std::vector<ArmSummary> arms;
  std::string baseline;             // arm name of the vanilla_ppo arm, if any
  std::optional<double> overhead;   // full vs vanilla wall clock per 10k steps, as a fraction
  std::vector<std::string> warnings;
};

Report build_report(const std::vector<ArmRuns>& arms);

/// summary.json, summary.md, curves.svg and kl_box.svg in `out_dir`.
void write_report(const Report& report, const std::vector<ArmRuns>& arms,
                  const std::filesystem::path& out_dir);

}  // namespace ppodiff
