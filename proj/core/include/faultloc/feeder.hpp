#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "faultloc/types.hpp"

namespace faultloc {

/// Three-phase series branch. Impedance matrices are held in per-unit after
/// loading; rows/columns of absent phases are zero.
struct BranchSpec {
  BranchId id;
  NodeId from = 0;  // upstream endpoint (toward the slack) after normalization
  NodeId to = 0;
  double length_m = 0.0;
  Mat3 r = Mat3::Zero();  // per-unit
  Mat3 x = Mat3::Zero();  // per-unit
  PhaseMask phases;

  Mat3c z() const { return r.cast<Complex>() + Complex(0, 1) * x.cast<Complex>(); }
};

struct PmuPlacement {
  NodeId node = 0;
  std::set<BranchId> measured_branches;
};

struct BaseSpec {
  double kv_ll = 0.0;   // line-to-line voltage base, kV
  double mva = 0.0;     // three-phase power base, MVA

  double v_base_ln() const { return kv_ll * 1e3 / 1.7320508075688772; }
  double s_base_1ph() const { return mva * 1e6 / 3.0; }
  double z_base() const { return kv_ll * kv_ll * 1e6 / (mva * 1e6); }
  double i_base() const { return s_base_1ph() / v_base_ln(); }
};

/// Radial three-phase feeder graph rooted at the substation (slack) node.
/// Loads, DG injections, and branch impedances are stored in per-unit.
/// Immutable after construction; safe to share across threads.
class FeederModel {
 public:
  BaseSpec base;
  NodeId slack = 0;
  std::map<NodeId, PhaseMask> nodes;
  std::vector<BranchSpec> branches;
  std::map<NodeId, std::array<Complex, 3>> loads;  // consumption, per-unit per phase
  std::map<NodeId, std::array<Complex, 3>> dgs;    // injection, per-unit per phase
  std::vector<PmuPlacement> pmus;

  static FeederModel from_json(const nlohmann::json& doc);
  static FeederModel load_file(const std::string& path);
  nlohmann::json to_json() const;

  // -- tree structure (built by finalize) --
  const BranchSpec& branch(const BranchId& id) const;
  const BranchSpec* find_branch(const BranchId& id) const;
  bool has_node(NodeId n) const { return nodes.count(n) > 0; }
  /// Branch whose `to` endpoint is n; nullptr for the slack.
  const BranchSpec* parent_branch(NodeId n) const;
  /// Branch ids leaving node n away from the slack, in document order.
  const std::vector<BranchId>& child_branches(NodeId n) const;
  const std::vector<BranchId>& incident_branches(NodeId n) const;
  int depth(NodeId n) const;
  /// Branch ids on the tree path slack -> n, in slack-first order.
  std::vector<BranchId> path_from_slack(NodeId n) const;
  /// Nodes in breadth-first order from the slack.
  const std::vector<NodeId>& topo_order() const { return topo_order_; }
  /// Edge count of the tree path between two nodes.
  int node_distance(NodeId a, NodeId b) const;
  bool has_pmu(NodeId n) const;
  const PmuPlacement* pmu_at(NodeId n) const;

  std::array<Complex, 3> net_load(NodeId n) const;  // load minus DG, per phase

  /// Validates all invariants; called by from_json. Throws FeederError.
  void finalize();

 private:
  std::map<BranchId, int> branch_index_;
  std::map<NodeId, int> parent_;  // node -> branch index of parent branch
  std::map<NodeId, std::vector<BranchId>> children_;
  std::map<NodeId, std::vector<BranchId>> incident_;
  std::map<NodeId, int> depth_;
  std::vector<NodeId> topo_order_;
};

/// Split a branch impedance at fractional position q into the upstream and
/// downstream sub-impedances (q*Z, (1-q)*Z).
std::pair<Mat3c, Mat3c> split_impedance(const BranchSpec& b, double q);

}  // namespace faultloc
