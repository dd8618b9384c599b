#pragma once

#include <functional>

#include <nlohmann/json_fwd.hpp>

#include "faultloc/locator.hpp"

namespace faultloc {

/// One grid cell of a Monte Carlo campaign.
struct CampaignCell {
  FaultType type = FaultType::LG;
  double impedance_ohm = 0.0;
  BranchId branch;
  double position = 0.5;
};

struct Campaign {
  std::string feeder_path;
  std::vector<FaultType> fault_types{FaultType::LG};
  std::vector<double> impedances_ohm{50.0};
  std::vector<BranchId> branches;   // explicit grid axis, or
  int branches_per_subgraph = 0;    // depth-spread sampling per subgraph
  std::vector<double> positions{0.25, 0.5, 0.75};
  int trials = 50;                  // per cell
  NoiseProfile noise;
  double line_param_max_err = 0.0;  // estimator-side model error, fraction
  uint64_t seed = 1;
  LocatorConfig locator;
  int threads = 0;  // 0 = hardware concurrency

  static Campaign from_json(const nlohmann::json& doc);
  static Campaign load_file(const std::string& path);
};

struct CellStats {
  CampaignCell cell;
  int n0 = 0;       // exact
  int n1 = 0;       // adjacent
  int n_other = 0;  // wrong branch or missed
  int n_failed = 0; // trial raised an error
  int nt = 0;
  int max_hops = 0;
  std::vector<double> locate_ms;  // per successful trial

  double mean_ms() const;
  double p95_ms() const;
};

struct Tally {
  int n0 = 0, n1 = 0, n_other = 0, n_failed = 0, nt = 0;
  int max_hops = 0;
  double alpha() const { return nt ? static_cast<double>(n0) / nt : 0.0; }
  double beta() const { return nt ? static_cast<double>(n1) / nt : 0.0; }
};

struct AccuracyReport {
  std::vector<CellStats> cells;
  double threshold_used = 0.0;

  Tally total() const;
  Tally total_where(const std::function<bool(const CampaignCell&)>& pred) const;
  double mean_locate_ms() const;

  /// Deterministic accuracy report (no wall-clock columns).
  void write_csv(const std::string& path) const;
  /// Wall-clock statistics per cell; separate file so reports stay
  /// byte-identical across runs.
  void write_timing_csv(const std::string& path) const;
  nlohmann::json to_json(bool include_timing = false) const;
};

/// Fault phases used for a type on a branch: LG prefers phase a, LL and LLG
/// prefer b-c. Returns nullopt when the branch lacks enough phases.
std::optional<PhaseMask> fault_phases_for(FaultType type, PhaseMask available);

struct VerdictClass {
  int hops = 0;  // 0 exact, 1 adjacent, else tree distance between branches
  bool exact() const { return hops == 0; }
  bool adjacent() const { return hops == 1; }
};
VerdictClass classify_verdict(const FeederModel& model, const BranchId& truth,
                              const BranchId& verdict);

AccuracyReport run_campaign(const Campaign& campaign, const FeederModel* preloaded = nullptr);

}  // namespace faultloc
