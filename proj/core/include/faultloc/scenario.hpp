#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "faultloc/feeder.hpp"

namespace faultloc {

enum class FaultType { LG, LL, LLG, LLL };

std::string to_string(FaultType t);
FaultType fault_type_from_string(const std::string& s);

/// Shunt fault at a fractional position along a branch.
struct FaultScenario {
  BranchId branch;
  double position = 0.5;  // fraction of line length, in (0, 1)
  FaultType type = FaultType::LG;
  PhaseMask phases;
  double impedance_ohm = 0.0;

  void validate(const FeederModel& model) const;

  static FaultScenario from_json(const nlohmann::json& doc);
  static FaultScenario load_file(const std::string& path);
  nlohmann::json to_json() const;

  std::string describe() const;
};

}  // namespace faultloc
