#include "faultloc/partition.hpp"

#include <algorithm>
#include <deque>

namespace faultloc {

int SubgraphPartition::subgraph_of(const BranchId& id) const {
  for (const Subgraph& g : subgraphs)
    if (g.contains_edge(id)) return g.index;
  for (const BranchId& d : direct_branches)
    if (d == id) return 0;
  throw PartitionError("branch " + id + " not covered by partition");
}

const Subgraph& SubgraphPartition::at(int index) const {
  for (const Subgraph& g : subgraphs)
    if (g.index == index) return g;
  throw PartitionError("no subgraph with index " + std::to_string(index));
}

namespace {

// Collects the whole subtree hanging below `branch`, inclusive.
void collect_lateral(const FeederModel& m, const BranchId& branch, std::vector<BranchId>& edges,
                     std::set<NodeId>& nodes) {
  const BranchSpec& b = m.branch(branch);
  edges.push_back(branch);
  nodes.insert(b.to);
  for (const BranchId& c : m.child_branches(b.to)) collect_lateral(m, c, edges, nodes);
}

}  // namespace

SubgraphPartition partition(const FeederModel& model) {
  if (model.pmus.size() < 2)
    throw PartitionError("partition requires at least 2 pmus, got " +
                         std::to_string(model.pmus.size()));

  std::set<NodeId> pmu_nodes;
  for (const PmuPlacement& p : model.pmus) pmu_nodes.insert(p.node);

  // Every PMU node except the slack terminates exactly one trunk: the tree
  // path up to the nearest PMU ancestor.
  struct TrunkSpec {
    NodeId root, far;
    std::vector<BranchId> trunk;  // root -> far
  };
  std::vector<TrunkSpec> trunks;
  for (const PmuPlacement& p : model.pmus) {
    if (p.node == model.slack) continue;
    TrunkSpec t;
    t.far = p.node;
    std::vector<BranchId> up;
    NodeId n = p.node;
    while (true) {
      const BranchSpec* pb = model.parent_branch(n);
      if (!pb)
        throw PartitionError("pmu node " + std::to_string(p.node) + " has no upstream pmu");
      up.push_back(pb->id);
      n = pb->from;
      if (pmu_nodes.count(n)) break;
    }
    t.root = n;
    t.trunk.assign(up.rbegin(), up.rend());
    trunks.push_back(std::move(t));
  }

  // Deterministic ordering: shallow roots first, then far node id.
  std::sort(trunks.begin(), trunks.end(), [&](const TrunkSpec& a, const TrunkSpec& b) {
    int da = model.depth(a.far), db = model.depth(b.far);
    if (model.depth(a.root) != model.depth(b.root))
      return model.depth(a.root) < model.depth(b.root);
    if (da != db) return da < db;
    return a.far < b.far;
  });

  SubgraphPartition part;
  int next_index = 1;
  for (TrunkSpec& t : trunks) {
    // Identify lateral attachment points: every trunk node except the root.
    std::vector<NodeId> trunk_nodes{t.root};
    for (const BranchId& e : t.trunk) trunk_nodes.push_back(model.branch(e).to);

    const bool single_edge = t.trunk.size() == 1;
    bool far_has_laterals = false;
    for (const BranchId& c : model.child_branches(t.far))
      if (!std::any_of(trunks.begin(), trunks.end(), [&](const TrunkSpec& o) {
            return !o.trunk.empty() && o.trunk.front() == c;
          }))
        far_has_laterals = true;

    if (single_edge && !far_has_laterals) {
      part.direct_branches.push_back(t.trunk.front());
      continue;
    }

    Subgraph g;
    g.index = next_index++;
    g.root = t.root;
    g.far_node = t.far;
    g.trunk = t.trunk;
    g.node_set.insert(trunk_nodes.begin(), trunk_nodes.end());
    g.edges = t.trunk;

    // Laterals at non-root trunk nodes (far node included). A child branch
    // is a lateral if it does not start another trunk.
    for (size_t i = 1; i < trunk_nodes.size(); ++i) {
      NodeId n = trunk_nodes[i];
      for (const BranchId& c : model.child_branches(n)) {
        if (std::find(g.trunk.begin(), g.trunk.end(), c) != g.trunk.end()) continue;
        bool starts_trunk = std::any_of(trunks.begin(), trunks.end(), [&](const TrunkSpec& o) {
          return !o.trunk.empty() && o.trunk.front() == c;
        });
        if (starts_trunk) continue;
        collect_lateral(model, c, g.edges, g.node_set);
      }
    }

    // No lateral may contain a PMU (it would have become a trunk).
    for (const BranchId& e : g.edges) {
      const BranchSpec& b = model.branch(e);
      if (pmu_nodes.count(b.to) && b.to != g.far_node)
        throw PartitionError("pmu node " + std::to_string(b.to) +
                             " lies inside subgraph " + std::to_string(g.index) +
                             " off the trunk");
    }

    for (NodeId n : g.node_set) {
      if (n == g.root)
        g.node_class[n] = NodeClass::RootPmu;
      else if (n == g.far_node)
        g.node_class[n] = NodeClass::FarPmu;
      else
        g.node_class[n] = NodeClass::Interior;
    }

    // Downstream branches measured by the far PMU that are not part of this
    // subgraph (the sending ends feeding the next sections).
    const PmuPlacement* far_pmu = model.pmu_at(t.far);
    for (const BranchId& c : model.child_branches(t.far)) {
      if (g.contains_edge(c)) continue;
      if (far_pmu && far_pmu->measured_branches.count(c)) g.export_branches.push_back(c);
    }

    part.subgraphs.push_back(std::move(g));
  }

  // Coverage: every branch belongs to exactly one subgraph or the direct
  // list. Subtrees hanging at the slack without a PMU below are the
  // uncovered case.
  std::map<BranchId, int> owners;
  for (const Subgraph& g : part.subgraphs)
    for (const BranchId& e : g.edges) owners[e]++;
  for (const BranchId& d : part.direct_branches) owners[d]++;
  for (const BranchSpec& b : model.branches) {
    auto it = owners.find(b.id);
    if (it == owners.end())
      throw PartitionError("region at branch " + b.id +
                           " is not bounded by pmus (unobservable boundary)");
    if (it->second > 1)
      throw PartitionError("branch " + b.id + " covered by multiple subgraphs");
  }

  return part;
}

}  // namespace faultloc
