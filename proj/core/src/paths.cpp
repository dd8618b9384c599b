#include "faultloc/paths.hpp"

#include <algorithm>

namespace faultloc {

namespace {

void collect_subtree(const FeederModel& m, const Subgraph& g, const BranchId& branch,
                     std::vector<BranchId>& out) {
  if (!g.contains_edge(branch)) return;
  out.push_back(branch);
  NodeId to = m.branch(branch).to;
  for (const BranchId& c : m.child_branches(to)) collect_subtree(m, g, c, out);
}

}  // namespace

PathChain enumerate_paths(const FeederModel& model, const SubgraphPartition& part, int K) {
  const Subgraph& g = part.at(K);
  PathChain chain;
  chain.subgraph = K;
  chain.root = g.root;

  for (const BranchId& trunk_edge : g.trunk) {
    PathIncrement inc;
    inc.trunk_edge = trunk_edge;
    inc.trunk_node = model.branch(trunk_edge).to;
    for (const BranchId& c : model.child_branches(inc.trunk_node)) {
      if (std::find(g.trunk.begin(), g.trunk.end(), c) != g.trunk.end()) continue;
      collect_subtree(model, g, c, inc.lateral_edges);
    }
    chain.increments.push_back(std::move(inc));
  }
  return chain;
}

}  // namespace faultloc
