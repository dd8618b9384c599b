#pragma once

#include <vector>

#include "faultloc/partition.hpp"

namespace faultloc {

/// One step of the radial expansion: the trunk edge reached at this depth
/// plus the complete laterals hanging off the newly reached trunk node.
struct PathIncrement {
  BranchId trunk_edge;
  std::vector<BranchId> lateral_edges;
  NodeId trunk_node = 0;  // the node the trunk edge reaches

  std::vector<BranchId> edges() const {
    std::vector<BranchId> e{trunk_edge};
    e.insert(e.end(), lateral_edges.begin(), lateral_edges.end());
    return e;
  }
};

/// Nested root-anchored paths P_1 c P_2 c ... c P_S of a subgraph; P_s is the
/// union of the first s increments and P_S covers the whole subgraph.
struct PathChain {
  int subgraph = 0;
  NodeId root = 0;
  std::vector<PathIncrement> increments;  // increments[s-1] forms P_s

  int path_count() const { return static_cast<int>(increments.size()); }

  /// Edge set of P_s (1-based s).
  std::vector<BranchId> path_edges(int s) const {
    std::vector<BranchId> e;
    for (int i = 0; i < s; ++i) {
      auto inc = increments[i].edges();
      e.insert(e.end(), inc.begin(), inc.end());
    }
    return e;
  }

  /// The un-included next trunk edge at path s's deepest node; empty for s = S.
  std::vector<BranchId> frontier(int s) const {
    if (s >= path_count()) return {};
    return {increments[s].trunk_edge};
  }
};

/// Enumerates the nested paths of subgraph K by walking the trunk from the
/// root, attaching whole laterals at each newly reached trunk node.
PathChain enumerate_paths(const FeederModel& model, const SubgraphPartition& part, int K);

}  // namespace faultloc
