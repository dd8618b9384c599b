#include "faultloc/scenario.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace faultloc {

using nlohmann::json;

std::string to_string(FaultType t) {
  switch (t) {
    case FaultType::LG: return "LG";
    case FaultType::LL: return "LL";
    case FaultType::LLG: return "LLG";
    case FaultType::LLL: return "LLL";
  }
  return "?";
}

FaultType fault_type_from_string(const std::string& s) {
  if (s == "LG") return FaultType::LG;
  if (s == "LL") return FaultType::LL;
  if (s == "LLG") return FaultType::LLG;
  if (s == "LLL") return FaultType::LLL;
  throw ConfigError("unknown fault type '" + s + "'");
}

void FaultScenario::validate(const FeederModel& model) const {
  const BranchSpec* b = model.find_branch(branch);
  if (!b) throw ConfigError("fault scenario references unknown branch " + branch);
  if (!(position > 0.0 && position < 1.0))
    throw ConfigError("fault position must lie in (0,1), got " + std::to_string(position));
  if (impedance_ohm < 0.0) throw ConfigError("fault impedance must be nonnegative");
  int expected = 0;
  switch (type) {
    case FaultType::LG: expected = 1; break;
    case FaultType::LL: expected = 2; break;
    case FaultType::LLG: expected = 2; break;
    case FaultType::LLL: expected = 3; break;
  }
  if (phases.count() != expected)
    throw ConfigError("fault type " + to_string(type) + " needs " + std::to_string(expected) +
                      " phases, got '" + phases.to_string() + "'");
  if (!phases.subset_of(b->phases))
    throw ConfigError("fault phases '" + phases.to_string() + "' not present on branch " + branch);
}

FaultScenario FaultScenario::from_json(const json& doc) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& k = it.key();
    if (k != "branch" && k != "position" && k != "type" && k != "phases" && k != "impedance_ohm")
      throw ConfigError("unknown field '" + k + "' in fault scenario");
  }
  FaultScenario s;
  s.branch = doc.at("branch").get<std::string>();
  s.position = doc.at("position").get<double>();
  s.type = fault_type_from_string(doc.at("type").get<std::string>());
  s.phases = PhaseMask::from_string(doc.at("phases").get<std::string>());
  s.impedance_ohm = doc.at("impedance_ohm").get<double>();
  return s;
}

FaultScenario FaultScenario::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("scenario file " + path + ": " + e.what());
  }
  return from_json(doc);
}

json FaultScenario::to_json() const {
  return json{{"branch", branch},
              {"position", position},
              {"type", to_string(type)},
              {"phases", phases.to_string()},
              {"impedance_ohm", impedance_ohm}};
}

std::string FaultScenario::describe() const {
  std::ostringstream os;
  os << to_string(type) << " fault on " << branch << " at " << position << "L, phases "
     << phases.to_string() << ", " << impedance_ohm << " ohm";
  return os.str();
}

}  // namespace faultloc
