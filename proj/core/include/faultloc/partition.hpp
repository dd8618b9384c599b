#pragma once

#include <map>
#include <set>
#include <vector>

#include "faultloc/feeder.hpp"

namespace faultloc {

/// Membership class of a node within a subgraph: the root carries only its
/// own PMU data, the far node carries the downstream PMU plus pseudo data,
/// interior nodes carry pseudo data only.
enum class NodeClass { RootPmu, FarPmu, Interior };

/// Feeder section between two adjacent PMUs. The trunk is the unique tree
/// path from the root PMU to the far PMU; laterals hanging off non-root trunk
/// nodes (including the far node) belong to the section.
struct Subgraph {
  int index = 0;  // 1-based
  NodeId root = 0;
  NodeId far_node = 0;
  std::vector<BranchId> trunk;   // root -> far order
  std::vector<BranchId> edges;   // trunk + laterals
  std::set<NodeId> node_set;     // includes root
  std::map<NodeId, NodeClass> node_class;
  /// Branches measured by the far PMU that leave the subgraph downstream.
  std::vector<BranchId> export_branches;

  bool contains_edge(const BranchId& id) const {
    for (const BranchId& e : edges)
      if (e == id) return true;
    return false;
  }
};

struct SubgraphPartition {
  std::vector<Subgraph> subgraphs;
  std::vector<BranchId> direct_branches;  // single branches joining two PMU nodes

  /// 1-based subgraph index owning the branch, or 0 for a direct branch.
  int subgraph_of(const BranchId& id) const;
  const Subgraph& at(int index) const;  // 1-based
};

/// Partitions the feeder into sections between adjacent PMUs. Requires at
/// least two PMUs. Throws PartitionError when a region of the feeder is not
/// bounded by PMUs (unobservable boundary).
SubgraphPartition partition(const FeederModel& model);

}  // namespace faultloc
