#pragma once

#include <nlohmann/json_fwd.hpp>

#include "faultloc/estimator.hpp"

namespace faultloc {

enum class ThresholdMode { Fixed, Calibrated };

struct LocatorConfig {
  double threshold = 500.0;  // identification threshold epsilon
  bool refine_laterals = true;
  ThresholdMode threshold_mode = ThresholdMode::Fixed;
  double calibration_quantile = 0.999;
  double calibration_safety = 2.0;
  int calibration_trials = 200;
  WlsConfig wls{1e-6, 20};
  /// Candidate fault positions for the per-edge split hypotheses; a local
  /// parabolic refinement follows the best grid point.
  std::vector<double> q_grid{0.1, 0.3, 0.5, 0.7, 0.9};
  double direct_branch_sigma = 5.0;  // KVL screen bound, multiples of sigma
  double tie_rel = 0.01;             // relative tie band for argmax J_K
  bool parallel_step_one = true;
};

struct SubgraphScores {
  std::vector<double> j;  // J_K, 1-based subgraph order
  int k_star = 0;
  bool tie = false;
};

struct LocationVerdict {
  enum class Kind { Branch, FirstBranch, DirectBranch, NoFault, NotFoundInSubgraph };
  Kind kind = Kind::NoFault;
  BranchId branch;
  int subgraph = 0;
  bool tie = false;
  /// Crossing never fired but the subgraph metric is anomalous; the verdict
  /// fell back to the best per-edge hypothesis.
  bool no_crossing = false;
  std::vector<double> subgraph_wmr;
  std::vector<double> path_wmr;
  std::vector<std::pair<BranchId, double>> hypothesis_wmr;  // per-edge best fit
  double threshold_used = 0.0;
  double step_one_ms = 0.0;
  double step_two_ms = 0.0;

  nlohmann::json to_json() const;
  std::string describe() const;
};

/// Step One: estimates every subgraph and picks the one with the anomalous
/// weighted residual. Ties go to the lowest index with the tie flag set.
SubgraphScores identify_faulted_subgraph(const FeederModel& model, const SubgraphPartition& part,
                                         const MeasurementSet& meas, const LocatorConfig& cfg);

/// Step Two: walks the path chain of the chosen subgraph. The reported
/// WMR_s is the best achievable fit under the hypothesis that the fault lies
/// beyond path s; it stays at the noise floor while the fault is outside
/// P_s and turns anomalous at the crossing. The verdict is refined inside
/// the crossing increment by the per-edge hypothesis fits.
LocationVerdict locate_faulted_line(const FeederModel& model, const SubgraphPartition& part,
                                    const PathChain& chain, const MeasurementSet& meas,
                                    const LocatorConfig& cfg,
                                    const SubgraphScores* scores = nullptr);

/// KVL screen for branches directly observable by PMUs at both ends.
/// Returns the faulted direct branch, if any.
std::optional<BranchId> screen_direct_branches(const FeederModel& model,
                                               const SubgraphPartition& part,
                                               const MeasurementSet& meas,
                                               const LocatorConfig& cfg);

/// End-to-end location: direct-branch screen, Step One, Step Two.
LocationVerdict locate(const FeederModel& model, const SubgraphPartition& part,
                       const MeasurementSet& meas, const LocatorConfig& cfg);

struct CalibrationResult {
  double epsilon = 0.0;
  int trials = 0;
  int excluded = 0;  // non-convergent trials
};

/// No-fault Monte Carlo over all paths of all subgraphs; epsilon is the
/// safety factor times the chosen quantile of the per-trial maximum WMR.
CalibrationResult calibrate_threshold(const FeederModel& model, const SubgraphPartition& part,
                                      const NoiseProfile& profile, int trials, uint64_t seed,
                                      const LocatorConfig& cfg);

}  // namespace faultloc
