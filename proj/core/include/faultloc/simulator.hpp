#pragma once

#include <map>
#include <optional>

#include "faultloc/feeder.hpp"
#include "faultloc/scenario.hpp"

namespace faultloc {

/// Converged solution of the three-phase power flow. Voltages and currents
/// are per-unit phasors; branch currents are sending-end values keyed by the
/// original branch ids (any fictitious fault node is hidden).
struct TruePhasorState {
  std::map<NodeId, Vec3c> node_voltage;
  std::map<BranchId, Vec3c> branch_current_sending;
  std::map<BranchId, Vec3c> branch_current_receiving;
  Vec3c fault_current = Vec3c::Zero();
  Vec3c fault_node_voltage = Vec3c::Zero();
  std::optional<FaultScenario> scenario;
  bool converged = false;
  int iterations = 0;
  double max_kcl_residual = 0.0;
  double max_kvl_residual = 0.0;
};

struct PowerflowOptions {
  double tol = 1e-9;       // max voltage change, p.u.
  int max_sweeps = 100;
  /// Constant-PQ load law with a low-voltage current limit: below this
  /// magnitude the dividing voltage is floored (angle preserved).
  double v_floor = 0.05;
  /// Bolted faults are stamped with this finite conductance (p.u.).
  double bolted_conductance = 1e6;
};

/// Forward-backward-sweep power flow with an optional shunt fault stamped at
/// a fractional position along a branch. Throws SimulationError on
/// non-convergence.
TruePhasorState run_powerflow(const FeederModel& model,
                              const FaultScenario* scenario = nullptr,
                              const PowerflowOptions& opts = {});

/// Total complex power: slack infeed, sum of actual load consumption, DG
/// production, series losses, and fault dissipation. For balance checks.
struct PowerAccount {
  Complex slack_in;
  Complex load;
  Complex dg;
  Complex losses;
  Complex fault;
};
PowerAccount power_account(const FeederModel& model, const TruePhasorState& state,
                           const PowerflowOptions& opts = {});

/// Writes per-node voltage phasors and per-branch sending currents as CSV.
void write_state_csv(const TruePhasorState& state, const std::string& path);

}  // namespace faultloc
