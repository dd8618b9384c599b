#include "faultloc/feeder.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace faultloc {

using nlohmann::json;

namespace {

void reject_unknown_fields(const json& obj, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      throw FeederError("unknown field '" + it.key() + "' in " + where);
  }
}

Mat3 matrix_from_rowmajor(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.size() != 9)
    throw FeederError(where + ": expected 9 row-major entries");
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = arr[i * 3 + j].get<double>();
  return m;
}

json matrix_to_rowmajor(const Mat3& m) {
  json arr = json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) arr.push_back(m(i, j));
  return arr;
}

void check_phase_matrix(const Mat3& m, PhaseMask phases, const std::string& what,
                        const BranchId& id, bool positive_diagonal) {
  const double tol = 1e-12;
  if (!m.isApprox(m.transpose(), 1e-9))
    throw FeederError("branch " + id + ": " + what + " matrix not symmetric");
  for (Phase p : kPhases) {
    int i = static_cast<int>(p);
    if (phases.has(p)) {
      if (positive_diagonal && m(i, i) <= 0.0)
        throw FeederError("branch " + id + ": " + what + " diagonal must be positive on phase " +
                          std::string(1, phase_letter(p)));
    } else {
      for (int j = 0; j < 3; ++j) {
        if (std::abs(m(i, j)) > tol || std::abs(m(j, i)) > tol)
          throw FeederError("branch " + id + ": " + what + " has entries on absent phase " +
                            std::string(1, phase_letter(p)));
      }
    }
  }
}

std::array<Complex, 3> power_from_json(const json& p, const json& q) {
  if (!p.is_array() || p.size() != 3 || !q.is_array() || q.size() != 3)
    throw FeederError("per-phase power arrays must have 3 entries");
  std::array<Complex, 3> s;
  for (int i = 0; i < 3; ++i) s[i] = Complex(p[i].get<double>(), q[i].get<double>());
  return s;
}

}  // namespace

FeederModel FeederModel::from_json(const json& doc) {
  if (!doc.is_object()) throw FeederError("feeder document must be an object");
  reject_unknown_fields(doc, {"base", "slack", "nodes", "branches", "loads", "dgs", "pmus"},
                        "feeder document");
  for (const char* required : {"base", "slack", "nodes", "branches", "pmus"})
    if (!doc.contains(required))
      throw FeederError(std::string("feeder document missing section '") + required + "'");

  FeederModel m;

  const json& base = doc.at("base");
  reject_unknown_fields(base, {"kv_ll", "mva"}, "base");
  m.base.kv_ll = base.at("kv_ll").get<double>();
  m.base.mva = base.at("mva").get<double>();
  if (m.base.kv_ll <= 0 || m.base.mva <= 0) throw FeederError("base kv_ll and mva must be positive");

  m.slack = doc.at("slack").get<NodeId>();

  for (const json& n : doc.at("nodes")) {
    reject_unknown_fields(n, {"id", "phases"}, "node");
    NodeId id = n.at("id").get<NodeId>();
    if (m.nodes.count(id)) throw FeederError("duplicate node " + std::to_string(id));
    PhaseMask ph = PhaseMask::from_string(n.at("phases").get<std::string>());
    if (ph.empty()) throw FeederError("node " + std::to_string(id) + " has no phases");
    m.nodes[id] = ph;
  }

  const double z_base = m.base.z_base();
  for (const json& b : doc.at("branches")) {
    reject_unknown_fields(b, {"id", "from", "to", "length_m", "r_ohm", "x_ohm"}, "branch");
    BranchSpec spec;
    spec.id = b.at("id").get<std::string>();
    spec.from = b.at("from").get<NodeId>();
    spec.to = b.at("to").get<NodeId>();
    spec.length_m = b.at("length_m").get<double>();
    Mat3 r_ohm = matrix_from_rowmajor(b.at("r_ohm"), "branch " + spec.id + " r_ohm");
    Mat3 x_ohm = matrix_from_rowmajor(b.at("x_ohm"), "branch " + spec.id + " x_ohm");
    spec.r = r_ohm / z_base;
    spec.x = x_ohm / z_base;
    m.branches.push_back(std::move(spec));
  }

  const double s1 = m.base.s_base_1ph();
  if (doc.contains("loads")) {
    for (const json& l : doc.at("loads")) {
      reject_unknown_fields(l, {"node", "p_w", "q_var"}, "load");
      NodeId n = l.at("node").get<NodeId>();
      auto s = power_from_json(l.at("p_w"), l.at("q_var"));
      for (auto& v : s) v /= s1;
      if (m.loads.count(n)) throw FeederError("duplicate load at node " + std::to_string(n));
      m.loads[n] = s;
    }
  }
  if (doc.contains("dgs")) {
    for (const json& l : doc.at("dgs")) {
      reject_unknown_fields(l, {"node", "p_w", "q_var"}, "dg");
      NodeId n = l.at("node").get<NodeId>();
      auto s = power_from_json(l.at("p_w"), l.at("q_var"));
      for (auto& v : s) v /= s1;
      if (m.dgs.count(n)) throw FeederError("duplicate dg at node " + std::to_string(n));
      m.dgs[n] = s;
    }
  }

  for (const json& p : doc.at("pmus")) {
    reject_unknown_fields(p, {"node", "branches"}, "pmu");
    PmuPlacement pl;
    pl.node = p.at("node").get<NodeId>();
    for (const json& b : p.at("branches")) pl.measured_branches.insert(b.get<std::string>());
    m.pmus.push_back(std::move(pl));
  }

  m.finalize();
  return m;
}

FeederModel FeederModel::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FeederError("cannot open feeder file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FeederError("feeder file " + path + ": " + e.what());
  }
  return from_json(doc);
}

json FeederModel::to_json() const {
  json doc;
  doc["base"] = {{"kv_ll", base.kv_ll}, {"mva", base.mva}};
  doc["slack"] = slack;
  json ns = json::array();
  for (const auto& [id, ph] : nodes) ns.push_back({{"id", id}, {"phases", ph.to_string()}});
  doc["nodes"] = ns;
  const double z_base = base.z_base();
  json bs = json::array();
  for (const BranchSpec& b : branches) {
    bs.push_back({{"id", b.id},
                  {"from", b.from},
                  {"to", b.to},
                  {"length_m", b.length_m},
                  {"r_ohm", matrix_to_rowmajor(b.r * z_base)},
                  {"x_ohm", matrix_to_rowmajor(b.x * z_base)}});
  }
  doc["branches"] = bs;
  const double s1 = base.s_base_1ph();
  auto powers_to_json = [&](const std::map<NodeId, std::array<Complex, 3>>& src) {
    json out = json::array();
    for (const auto& [n, s] : src) {
      json p = json::array(), q = json::array();
      for (int i = 0; i < 3; ++i) {
        p.push_back(s[i].real() * s1);
        q.push_back(s[i].imag() * s1);
      }
      out.push_back({{"node", n}, {"p_w", p}, {"q_var", q}});
    }
    return out;
  };
  doc["loads"] = powers_to_json(loads);
  doc["dgs"] = powers_to_json(dgs);
  json ps = json::array();
  for (const PmuPlacement& p : pmus) {
    json bl = json::array();
    for (const BranchId& b : p.measured_branches) bl.push_back(b);
    ps.push_back({{"node", p.node}, {"branches", bl}});
  }
  doc["pmus"] = ps;
  return doc;
}

void FeederModel::finalize() {
  if (!nodes.count(slack)) throw FeederError("slack node " + std::to_string(slack) + " not defined");
  if (branches.size() + 1 != nodes.size())
    throw FeederError("not a tree: " + std::to_string(branches.size()) + " branches for " +
                      std::to_string(nodes.size()) + " nodes");

  branch_index_.clear();
  incident_.clear();
  for (size_t i = 0; i < branches.size(); ++i) {
    BranchSpec& b = branches[i];
    if (branch_index_.count(b.id)) throw FeederError("duplicate branch id " + b.id);
    if (!nodes.count(b.from) || !nodes.count(b.to))
      throw FeederError("branch " + b.id + " references undefined node");
    if (b.from == b.to) throw FeederError("branch " + b.id + " is a self-loop");
    branch_index_[b.id] = static_cast<int>(i);
    incident_[b.from].push_back(b.id);
    incident_[b.to].push_back(b.id);
  }

  // BFS from the slack; orients every branch root-outward and detects
  // cycles/disconnection.
  parent_.clear();
  children_.clear();
  depth_.clear();
  topo_order_.clear();
  std::map<NodeId, bool> seen;
  std::deque<NodeId> queue{slack};
  seen[slack] = true;
  depth_[slack] = 0;
  while (!queue.empty()) {
    NodeId n = queue.front();
    queue.pop_front();
    topo_order_.push_back(n);
    for (const BranchId& bid : incident_[n]) {
      int bi = branch_index_[bid];
      BranchSpec& b = branches[bi];
      NodeId other = (b.from == n) ? b.to : b.from;
      if (parent_.count(n) && branch_index_[branches[parent_[n]].id] == bi) continue;
      if (seen.count(other))
        throw FeederError("cycle detected at branch " + b.id);
      if (b.to == n) std::swap(b.from, b.to);  // orient away from the slack
      seen[other] = true;
      parent_[other] = bi;
      depth_[other] = depth_[n] + 1;
      children_[n].push_back(b.id);
      queue.push_back(other);
    }
  }
  if (topo_order_.size() != nodes.size()) {
    for (const auto& [n, ph] : nodes)
      if (!seen.count(n))
        throw FeederError("node " + std::to_string(n) + " not reachable from slack");
  }

  // Phase consistency and impedance structure.
  for (const BranchSpec& b : branches) {
    PhaseMask ph;
    for (Phase p : kPhases) {
      int i = static_cast<int>(p);
      if (b.r(i, i) != 0.0 || b.x(i, i) != 0.0) ph.set(p);
    }
    const_cast<BranchSpec&>(b).phases = ph;
    if (ph.empty()) throw FeederError("branch " + b.id + " has no phases");
    if (!ph.subset_of(nodes.at(b.from)) || !ph.subset_of(nodes.at(b.to)))
      throw FeederError("branch " + b.id + " phases " + ph.to_string() +
                        " not a subset of endpoint phases");
    check_phase_matrix(b.r, ph, "resistance", b.id, true);
    check_phase_matrix(b.x, ph, "reactance", b.id, false);
  }
  // Each non-slack node must be fed on every phase it carries.
  for (const auto& [n, ph] : nodes) {
    if (n == slack) continue;
    const BranchSpec* pb = parent_branch(n);
    if (!ph.subset_of(pb->phases))
      throw FeederError("node " + std::to_string(n) + " carries phases " + ph.to_string() +
                        " not supplied by parent branch " + pb->id);
  }

  for (const auto& [n, s] : loads)
    if (!nodes.count(n)) throw FeederError("load at undefined node " + std::to_string(n));
  for (const auto& [n, s] : dgs)
    if (!nodes.count(n)) throw FeederError("dg at undefined node " + std::to_string(n));

  bool slack_pmu = false;
  std::set<NodeId> pmu_nodes;
  for (const PmuPlacement& p : pmus) {
    if (!nodes.count(p.node)) throw FeederError("pmu at undefined node " + std::to_string(p.node));
    if (!pmu_nodes.insert(p.node).second)
      throw FeederError("duplicate pmu at node " + std::to_string(p.node));
    if (p.node == slack) slack_pmu = true;
    for (const BranchId& bid : p.measured_branches) {
      auto it = branch_index_.find(bid);
      if (it == branch_index_.end())
        throw FeederError("pmu at node " + std::to_string(p.node) + " measures unknown branch " + bid);
      const BranchSpec& b = branches[it->second];
      if (b.from != p.node && b.to != p.node)
        throw FeederError("pmu at node " + std::to_string(p.node) + " measures non-incident branch " + bid);
    }
  }
  if (!slack_pmu)
    throw FeederError("missing substation pmu at slack node " + std::to_string(slack));
}

const BranchSpec& FeederModel::branch(const BranchId& id) const {
  auto it = branch_index_.find(id);
  if (it == branch_index_.end()) throw FeederError("unknown branch " + id);
  return branches[it->second];
}

const BranchSpec* FeederModel::find_branch(const BranchId& id) const {
  auto it = branch_index_.find(id);
  return it == branch_index_.end() ? nullptr : &branches[it->second];
}

const BranchSpec* FeederModel::parent_branch(NodeId n) const {
  auto it = parent_.find(n);
  return it == parent_.end() ? nullptr : &branches[it->second];
}

const std::vector<BranchId>& FeederModel::child_branches(NodeId n) const {
  static const std::vector<BranchId> empty;
  auto it = children_.find(n);
  return it == children_.end() ? empty : it->second;
}

const std::vector<BranchId>& FeederModel::incident_branches(NodeId n) const {
  static const std::vector<BranchId> empty;
  auto it = incident_.find(n);
  return it == incident_.end() ? empty : it->second;
}

int FeederModel::depth(NodeId n) const { return depth_.at(n); }

std::vector<BranchId> FeederModel::path_from_slack(NodeId n) const {
  std::vector<BranchId> path;
  while (n != slack) {
    const BranchSpec* pb = parent_branch(n);
    path.push_back(pb->id);
    n = pb->from;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

int FeederModel::node_distance(NodeId a, NodeId b) const {
  int da = depth(a), db = depth(b), dist = 0;
  while (da > db) {
    a = parent_branch(a)->from;
    --da;
    ++dist;
  }
  while (db > da) {
    b = parent_branch(b)->from;
    --db;
    ++dist;
  }
  while (a != b) {
    a = parent_branch(a)->from;
    b = parent_branch(b)->from;
    dist += 2;
  }
  return dist;
}

bool FeederModel::has_pmu(NodeId n) const { return pmu_at(n) != nullptr; }

const PmuPlacement* FeederModel::pmu_at(NodeId n) const {
  for (const PmuPlacement& p : pmus)
    if (p.node == n) return &p;
  return nullptr;
}

std::array<Complex, 3> FeederModel::net_load(NodeId n) const {
  std::array<Complex, 3> s{Complex(0, 0), Complex(0, 0), Complex(0, 0)};
  auto it = loads.find(n);
  if (it != loads.end())
    for (int i = 0; i < 3; ++i) s[i] += it->second[i];
  auto jt = dgs.find(n);
  if (jt != dgs.end())
    for (int i = 0; i < 3; ++i) s[i] -= jt->second[i];
  return s;
}

std::pair<Mat3c, Mat3c> split_impedance(const BranchSpec& b, double q) {
  Mat3c z = b.z();
  return {q * z, (1.0 - q) * z};
}

}  // namespace faultloc
