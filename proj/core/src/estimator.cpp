#include "faultloc/estimator.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SparseCholesky>

namespace faultloc {

int EstimationProblem::node_index(NodeId id) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int>(i);
  return -1;
}

int EstimationProblem::branch_index_of(const BranchId& id, int split_part) const {
  for (size_t i = 0; i < branches.size(); ++i)
    if (branches[i].id == id && branches[i].split_part == split_part)
      return static_cast<int>(i);
  return -1;
}

Complex WlsResult::slack_voltage(const EstimationProblem& p, Phase ph) const {
  int col = p.slack_state[static_cast<int>(ph)];
  if (col < 0) return {0, 0};
  return {state(col), state(col + 1)};
}

Complex WlsResult::branch_current(const EstimationProblem& p, const BranchId& id, Phase ph,
                                  int split_part) const {
  int bi = p.branch_index_of(id, split_part);
  if (bi < 0) return {0, 0};
  int col = p.branch_state[bi][static_cast<int>(ph)];
  if (col < 0) return {0, 0};
  return {state(col), state(col + 1)};
}

namespace {

struct ScopeSpec {
  int K = 0;
  const Subgraph* g = nullptr;
  std::vector<BranchId> edges;
  std::vector<BranchId> anchored_stubs;  // interior frontier edges
  bool include_far = true;
  bool fold_far_boundary = false;
  std::optional<std::pair<BranchId, double>> split;
};

// Pseudo power entries at a node for one phase, loads positive.
std::vector<PseudoRef> pseudo_refs_at(const MeasurementSet& meas, NodeId n, Phase ph) {
  std::vector<PseudoRef> refs;
  for (const Measurement& e : meas.entries) {
    if (e.kind != MeasKind::PseudoPQ || e.node != n || e.phase != ph) continue;
    double sign = (e.source == PseudoSource::Dg) ? -1.0 : 1.0;
    refs.push_back({Complex(sign * e.a, sign * e.b), e.var_a, e.var_b});
  }
  return refs;
}

// Nodes of the subgraph strictly below `edge` (the subtree it feeds).
std::set<NodeId> nodes_below(const FeederModel& model, const Subgraph& g, const BranchId& edge) {
  std::set<NodeId> below;
  std::vector<BranchId> stack{edge};
  while (!stack.empty()) {
    BranchId b = stack.back();
    stack.pop_back();
    NodeId to = model.branch(b).to;
    below.insert(to);
    for (const BranchId& c : model.child_branches(to))
      if (g.contains_edge(c)) stack.push_back(c);
  }
  return below;
}

EstimationProblem build_problem(const FeederModel& model, const ScopeSpec& spec,
                                const MeasurementSet& meas) {
  const Subgraph& g = *spec.g;
  EstimationProblem p;
  p.subgraph = spec.K;

  // --- nodes and branches ---
  std::map<NodeId, int> nidx;
  auto add_node = [&](NodeId id, PhaseMask ph, bool root) {
    ScopeNode n;
    n.id = id;
    n.phases = ph;
    n.is_root = root;
    p.nodes.push_back(n);
    if (id >= 0) nidx[id] = static_cast<int>(p.nodes.size()) - 1;
    return static_cast<int>(p.nodes.size()) - 1;
  };
  add_node(g.root, model.nodes.at(g.root), true);
  for (const BranchId& e : spec.edges) {
    NodeId to = model.branch(e).to;
    if (!nidx.count(to)) add_node(to, model.nodes.at(to), false);
  }

  for (const BranchId& e : spec.edges) {
    const BranchSpec& b = model.branch(e);
    if (spec.split && spec.split->first == e) {
      double q = spec.split->second;
      int fict = add_node(-1, b.phases, false);
      auto [z1, z2] = split_impedance(b, q);
      p.branches.push_back({e, nidx.at(b.from), fict, z1, b.phases, false, 1});
      p.branches.push_back({e, fict, nidx.at(b.to), z2, b.phases, false, 2});
    } else {
      p.branches.push_back({e, nidx.at(b.from), nidx.at(b.to), b.z(), b.phases, false, 0});
    }
  }
  // frontier/export stubs: currents leaving the scope
  std::vector<int> anchored_stub_idx;
  for (const BranchId& e : spec.anchored_stubs) {
    const BranchSpec& b = model.branch(e);
    p.branches.push_back({e, nidx.at(b.from), -1, Mat3c::Zero(), b.phases, true, 0});
    anchored_stub_idx.push_back(static_cast<int>(p.branches.size()) - 1);
  }
  std::vector<int> export_stub_idx;
  if (spec.include_far && !spec.fold_far_boundary) {
    for (const BranchId& e : g.export_branches) {
      const BranchSpec& b = model.branch(e);
      p.branches.push_back({e, nidx.at(b.from), -1, Mat3c::Zero(), b.phases, true, 0});
      export_stub_idx.push_back(static_cast<int>(p.branches.size()) - 1);
    }
  }

  for (size_t bi = 0; bi < p.branches.size(); ++bi) {
    const ScopeBranch& b = p.branches[bi];
    p.nodes[b.from].child_branches.push_back(static_cast<int>(bi));
    if (b.to >= 0) p.nodes[b.to].parent_branch = static_cast<int>(bi);
  }
  p.topo.push_back(0);
  for (size_t k = 0; k < p.topo.size(); ++k)
    for (int bi : p.nodes[p.topo[k]].child_branches)
      if (p.branches[bi].to >= 0) p.topo.push_back(p.branches[bi].to);
  if (p.topo.size() != p.nodes.size())
    throw EstimationError("scope of subgraph " + std::to_string(spec.K) + " is not connected");

  // --- state layout ---
  int col = 0;
  for (Phase ph : kPhases) {
    if (p.nodes[0].phases.has(ph)) {
      p.slack_state[static_cast<int>(ph)] = col;
      col += 2;
    }
  }
  p.branch_state.assign(p.branches.size(), {-1, -1, -1});
  for (size_t bi = 0; bi < p.branches.size(); ++bi)
    for (Phase ph : kPhases)
      if (p.branches[bi].phases.has(ph)) {
        p.branch_state[bi][static_cast<int>(ph)] = col;
        col += 2;
      }
  p.n_states = col;

  // --- channels ---
  const PmuPlacement* root_pmu = model.pmu_at(g.root);
  if (!root_pmu)
    throw EstimationError("scope root " + std::to_string(g.root) + " carries no pmu");
  for (Phase ph : kPhases) {
    if (!p.nodes[0].phases.has(ph)) continue;
    const Measurement* mv = meas.find_voltage(g.root, ph);
    if (!mv)
      throw EstimationError("missing root voltage measurement at node " +
                            std::to_string(g.root));
    Channel c;
    c.type = ChannelType::Voltage;
    c.node = 0;
    c.phase = ph;
    c.z = Complex(mv->a, mv->b);
    c.var_re = std::max(mv->var_a, kVarianceFloor);
    c.var_im = std::max(mv->var_b, kVarianceFloor);
    p.channels.push_back(std::move(c));
  }
  if (spec.include_far) {
    int far_idx = nidx.count(g.far_node) ? nidx.at(g.far_node) : -1;
    if (far_idx >= 0) {
      for (Phase ph : kPhases) {
        if (!p.nodes[far_idx].phases.has(ph)) continue;
        const Measurement* mv = meas.find_voltage(g.far_node, ph);
        if (!mv)
          throw EstimationError("missing far voltage measurement at node " +
                                std::to_string(g.far_node));
        Channel c;
        c.type = ChannelType::Voltage;
        c.node = far_idx;
        c.phase = ph;
        c.z = Complex(mv->a, mv->b);
        c.var_re = std::max(mv->var_a, kVarianceFloor);
        c.var_im = std::max(mv->var_b, kVarianceFloor);
        p.channels.push_back(std::move(c));
      }
    }
  }

  // PMU current channels: any scope branch metered at its sending end
  bool root_current_seen = false;
  for (size_t bi = 0; bi < p.branches.size(); ++bi) {
    const ScopeBranch& b = p.branches[bi];
    if (b.stub || b.split_part == 2) continue;
    NodeId from_id = p.nodes[b.from].id;
    if (from_id < 0) continue;
    const PmuPlacement* pmu = model.pmu_at(from_id);
    if (!pmu || !pmu->measured_branches.count(b.id)) continue;
    for (Phase ph : kPhases) {
      if (!b.phases.has(ph)) continue;
      const Measurement* mi = meas.find_current(b.id, from_id, ph);
      if (!mi)
        throw EstimationError("missing current measurement on " + b.id + " at node " +
                              std::to_string(from_id));
      Channel c;
      c.type = ChannelType::Current;
      c.branch = static_cast<int>(bi);
      c.phase = ph;
      c.z = Complex(mi->a, mi->b);
      c.var_re = std::max(mi->var_a, kVarianceFloor);
      c.var_im = std::max(mi->var_b, kVarianceFloor);
      p.channels.push_back(std::move(c));
      if (b.from == 0) root_current_seen = true;
    }
  }
  if (!root_current_seen)
    throw EstimationError("scope of subgraph " + std::to_string(spec.K) +
                          " has no root branch current measurement");
  for (int bi : export_stub_idx) {
    const ScopeBranch& b = p.branches[bi];
    NodeId from_id = p.nodes[b.from].id;
    for (Phase ph : kPhases) {
      if (!b.phases.has(ph)) continue;
      const Measurement* mi = meas.find_current(b.id, from_id, ph);
      if (!mi)
        throw EstimationError("missing downstream current measurement on " + b.id);
      Channel c;
      c.type = ChannelType::Current;
      c.branch = bi;
      c.phase = ph;
      c.z = Complex(mi->a, mi->b);
      c.var_re = std::max(mi->var_a, kVarianceFloor);
      c.var_im = std::max(mi->var_b, kVarianceFloor);
      p.channels.push_back(std::move(c));
    }
  }

  // injection channels at every real non-root node
  for (size_t ni = 1; ni < p.nodes.size(); ++ni) {
    const ScopeNode& n = p.nodes[ni];
    if (n.id < 0) continue;  // fictitious fault node: free injection
    for (Phase ph : kPhases) {
      if (!n.phases.has(ph)) continue;
      Channel c;
      c.type = ChannelType::Injection;
      c.node = static_cast<int>(ni);
      c.eval_node = static_cast<int>(ni);
      c.phase = ph;
      c.pseudos = pseudo_refs_at(meas, n.id, ph);
      if (spec.fold_far_boundary && n.id == g.far_node) {
        for (const BranchId& ex : g.export_branches) {
          if (!model.branch(ex).phases.has(ph)) continue;
          const Measurement* mi = meas.find_current(ex, g.far_node, ph);
          if (!mi)
            throw EstimationError("missing downstream current measurement on " + ex);
          c.fixed_part += Complex(mi->a, mi->b);
          c.fixed_var_re += mi->var_a;
          c.fixed_var_im += mi->var_b;
        }
      }
      p.channels.push_back(std::move(c));
    }
  }

  // anchored frontier currents: aggregate of everything below the cut
  for (int bi : anchored_stub_idx) {
    const ScopeBranch& b = p.branches[bi];
    std::set<NodeId> below = nodes_below(model, g, b.id);
    for (Phase ph : kPhases) {
      if (!b.phases.has(ph)) continue;
      Channel c;
      c.type = ChannelType::Anchor;
      c.branch = bi;
      c.node = b.from;
      c.eval_node = b.from;
      c.phase = ph;
      for (NodeId nb : below) {
        auto refs = pseudo_refs_at(meas, nb, ph);
        c.pseudos.insert(c.pseudos.end(), refs.begin(), refs.end());
      }
      for (const BranchId& ex : g.export_branches) {
        if (!model.branch(ex).phases.has(ph)) continue;
        const Measurement* mi = meas.find_current(ex, g.far_node, ph);
        if (mi) {
          c.fixed_part += Complex(mi->a, mi->b);
          c.fixed_var_re += mi->var_a;
          c.fixed_var_im += mi->var_b;
        }
      }
      p.channels.push_back(std::move(c));
    }
  }

  return p;
}

Complex clamp_voltage(Complex v, Phase ph) {
  double mag = std::abs(v);
  if (mag >= 1e-3) return v;
  return (mag > 1e-12) ? v * (1e-3 / mag) : nominal_unit_phasor(ph) * 1e-3;
}

// Re-evaluate injection/anchor values at the current voltage estimates.
void refresh_channels(EstimationProblem& p, const std::vector<Vec3c>& v_nodes) {
  for (Channel& c : p.channels) {
    if (c.type != ChannelType::Injection && c.type != ChannelType::Anchor) continue;
    Complex v = clamp_voltage(v_nodes[c.eval_node](static_cast<int>(c.phase)), c.phase);
    Complex z = c.fixed_part;
    double vr = c.fixed_var_re, vx = c.fixed_var_im;
    for (const PseudoRef& ref : c.pseudos) {
      CurrentEstimate ce = to_equivalent_current(ref.s, ref.var_p, ref.var_q, v);
      z += ce.value;
      vr += ce.var_re;
      vx += ce.var_im;
    }
    c.z = z;
    c.var_re = std::max(vr, kVarianceFloor);
    c.var_im = std::max(vx, kVarianceFloor);
  }
}

std::vector<BranchId> unreferenced_states(const EstimationProblem& p,
                                          const Eigen::SparseMatrix<double>& h) {
  std::vector<int> nnz(p.n_states, 0);
  for (int k = 0; k < h.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(h, k); it; ++it) nnz[it.col()]++;
  std::vector<BranchId> missing;
  for (size_t bi = 0; bi < p.branches.size(); ++bi)
    for (Phase ph : kPhases) {
      int col = p.branch_state[bi][static_cast<int>(ph)];
      if (col >= 0 && (nnz[col] == 0 || nnz[col + 1] == 0))
        missing.push_back(p.branches[bi].id + "/" + std::string(1, phase_letter(ph)));
    }
  return missing;
}

}  // namespace

EstimationProblem build_subgraph_problem(const FeederModel& model, const SubgraphPartition& part,
                                         int K, const MeasurementSet& meas) {
  const Subgraph& g = part.at(K);
  ScopeSpec spec;
  spec.K = K;
  spec.g = &g;
  spec.edges = g.edges;
  spec.include_far = true;
  spec.fold_far_boundary = true;
  return build_problem(model, spec, meas);
}

EstimationProblem build_path_problem(const FeederModel& model, const SubgraphPartition& part,
                                     const PathChain& chain, int s, const MeasurementSet& meas) {
  if (s < 1 || s > chain.path_count())
    throw EstimationError("invalid path index " + std::to_string(s));
  const Subgraph& g = part.at(chain.subgraph);
  ScopeSpec spec;
  spec.K = chain.subgraph;
  spec.g = &g;
  spec.edges = chain.path_edges(s);
  spec.anchored_stubs = chain.frontier(s);
  spec.include_far = (s == chain.path_count());
  spec.fold_far_boundary = false;
  return build_problem(model, spec, meas);
}

EstimationProblem build_split_problem(const FeederModel& model, const SubgraphPartition& part,
                                      int K, const MeasurementSet& meas, const BranchId& edge,
                                      double q) {
  const Subgraph& g = part.at(K);
  if (!g.contains_edge(edge))
    throw EstimationError("branch " + edge + " not in subgraph " + std::to_string(K));
  if (!(q > 0.0 && q < 1.0)) throw EstimationError("split position must lie in (0,1)");
  ScopeSpec spec;
  spec.K = K;
  spec.g = &g;
  spec.edges = g.edges;
  spec.include_far = true;
  spec.fold_far_boundary = false;
  spec.split = std::make_pair(edge, q);
  return build_problem(model, spec, meas);
}

JacobianMatrix assemble(const EstimationProblem& p) {
  std::vector<Eigen::Triplet<double>> trips;
  auto state_of = [&](int branch, Phase ph) { return p.branch_state[branch][static_cast<int>(ph)]; };

  for (size_t ci = 0; ci < p.channels.size(); ++ci) {
    const Channel& c = p.channels[ci];
    int row = 2 * static_cast<int>(ci);
    int phi = static_cast<int>(c.phase);
    switch (c.type) {
      case ChannelType::Voltage: {
        int vcol = p.slack_state[phi];
        trips.emplace_back(row, vcol, 1.0);
        trips.emplace_back(row + 1, vcol + 1, 1.0);
        // drop terms along the scope path root -> node
        int ni = c.node;
        while (ni != 0) {
          int bi = p.nodes[ni].parent_branch;
          const ScopeBranch& b = p.branches[bi];
          for (Phase psi : kPhases) {
            if (!b.phases.has(psi)) continue;
            int col = state_of(bi, psi);
            double R = b.z(phi, static_cast<int>(psi)).real();
            double X = b.z(phi, static_cast<int>(psi)).imag();
            if (R != 0.0) {
              trips.emplace_back(row, col, -R);
              trips.emplace_back(row + 1, col + 1, -R);
            }
            if (X != 0.0) {
              trips.emplace_back(row, col + 1, X);
              trips.emplace_back(row + 1, col, -X);
            }
          }
          ni = p.branches[bi].from;
        }
        break;
      }
      case ChannelType::Current:
      case ChannelType::Anchor: {
        int col = state_of(c.branch, c.phase);
        trips.emplace_back(row, col, 1.0);
        trips.emplace_back(row + 1, col + 1, 1.0);
        break;
      }
      case ChannelType::Injection: {
        const ScopeNode& n = p.nodes[c.node];
        int pb = n.parent_branch;
        if (p.branches[pb].phases.has(c.phase)) {
          int col = state_of(pb, c.phase);
          trips.emplace_back(row, col, 1.0);
          trips.emplace_back(row + 1, col + 1, 1.0);
        }
        for (int cb : n.child_branches) {
          if (!p.branches[cb].phases.has(c.phase)) continue;
          int col = state_of(cb, c.phase);
          trips.emplace_back(row, col, -1.0);
          trips.emplace_back(row + 1, col + 1, -1.0);
        }
        break;
      }
    }
  }

  JacobianMatrix jac;
  jac.h.resize(p.rows(), p.n_states);
  jac.h.setFromTriplets(trips.begin(), trips.end());
  jac.weights.resize(p.rows());
  for (size_t ci = 0; ci < p.channels.size(); ++ci) {
    jac.weights(2 * ci) = 1.0 / p.channels[ci].var_re;
    jac.weights(2 * ci + 1) = 1.0 / p.channels[ci].var_im;
  }
  return jac;
}

std::vector<Vec3c> forward_sweep_voltages(const EstimationProblem& p,
                                          const Eigen::VectorXd& state) {
  std::vector<Vec3c> v(p.nodes.size(), Vec3c::Zero());
  for (Phase ph : kPhases) {
    int col = p.slack_state[static_cast<int>(ph)];
    if (col >= 0) v[0](static_cast<int>(ph)) = Complex(state(col), state(col + 1));
  }
  for (int ni : p.topo) {
    if (ni == 0) continue;
    int bi = p.nodes[ni].parent_branch;
    const ScopeBranch& b = p.branches[bi];
    Vec3c i = Vec3c::Zero();
    for (Phase ph : kPhases) {
      int col = p.branch_state[bi][static_cast<int>(ph)];
      if (col >= 0) i(static_cast<int>(ph)) = Complex(state(col), state(col + 1));
    }
    Vec3c drop = b.z * i;
    for (Phase ph : kPhases) {
      int k = static_cast<int>(ph);
      if (p.nodes[ni].phases.has(ph)) v[ni](k) = v[b.from](k) - drop(k);
    }
  }
  return v;
}

WlsResult estimate(EstimationProblem& p, const WlsConfig& config) {
  const int m = p.rows();
  const int n = p.n_states;

  // root voltage from the measured channels; initial V_k equals V_root
  Vec3c v_root = Vec3c::Zero();
  for (const Channel& c : p.channels)
    if (c.type == ChannelType::Voltage && c.node == 0) v_root(static_cast<int>(c.phase)) = c.z;
  std::vector<Vec3c> v_nodes(p.nodes.size());
  for (size_t ni = 0; ni < p.nodes.size(); ++ni) {
    v_nodes[ni] = Vec3c::Zero();
    for (Phase ph : kPhases)
      if (p.nodes[ni].phases.has(ph)) v_nodes[ni](static_cast<int>(ph)) = v_root(static_cast<int>(ph));
  }
  refresh_channels(p, v_nodes);

  JacobianMatrix jac = assemble(p);
  {
    auto missing = unreferenced_states(p, jac.h);
    if (!missing.empty()) {
      std::string what = "unobservable scope: no measurement touches state(s)";
      for (const auto& s : missing) what += " " + s;
      throw EstimationError(what);
    }
  }

  // backward-sweep initial state
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (Phase ph : kPhases) {
    int col = p.slack_state[static_cast<int>(ph)];
    if (col >= 0) {
      x(col) = v_root(static_cast<int>(ph)).real();
      x(col + 1) = v_root(static_cast<int>(ph)).imag();
    }
  }
  {
    // stub currents from their channel values
    for (const Channel& c : p.channels) {
      if (c.type != ChannelType::Anchor &&
          !(c.type == ChannelType::Current && p.branches[c.branch].stub))
        continue;
      int col = p.branch_state[c.branch][static_cast<int>(c.phase)];
      x(col) = c.z.real();
      x(col + 1) = c.z.imag();
    }
    // injections as draws, leaves up
    std::vector<Vec3c> draw(p.nodes.size(), Vec3c::Zero());
    for (const Channel& c : p.channels)
      if (c.type == ChannelType::Injection)
        draw[c.node](static_cast<int>(c.phase)) = c.z;
    for (int k = static_cast<int>(p.topo.size()) - 1; k >= 1; --k) {
      int ni = p.topo[k];
      int bi = p.nodes[ni].parent_branch;
      Vec3c acc = draw[ni];
      for (int cb : p.nodes[ni].child_branches)
        for (Phase ph : kPhases) {
          int col = p.branch_state[cb][static_cast<int>(ph)];
          if (col >= 0) acc(static_cast<int>(ph)) += Complex(x(col), x(col + 1));
        }
      for (Phase ph : kPhases) {
        int col = p.branch_state[bi][static_cast<int>(ph)];
        if (col >= 0) {
          x(col) = acc(static_cast<int>(ph)).real();
          x(col + 1) = acc(static_cast<int>(ph)).imag();
        }
      }
    }
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  auto solve_once = [&]() {
    Eigen::VectorXd z(m), w(m);
    for (size_t ci = 0; ci < p.channels.size(); ++ci) {
      const Channel& c = p.channels[ci];
      z(2 * ci) = c.z.real();
      z(2 * ci + 1) = c.z.imag();
      w(2 * ci) = 1.0 / c.var_re;
      w(2 * ci + 1) = 1.0 / c.var_im;
    }
    Eigen::SparseMatrix<double> a =
        jac.h.transpose() * w.asDiagonal() * jac.h;
    solver.compute(a);
    if (solver.info() != Eigen::Success)
      throw EstimationError("normal-equation factorization failed: unobservable scope in subgraph " +
                            std::to_string(p.subgraph));
    Eigen::VectorXd rhs = jac.h.transpose() * (w.asDiagonal() * z);
    Eigen::VectorXd xs = solver.solve(rhs);
    return std::make_pair(xs, std::make_pair(z, w));
  };

  WlsResult res;
  res.m = m;
  res.n = n;
  bool converged = false;
  int it = 0;
  for (; it < config.max_iter; ++it) {
    auto [xs, zw] = solve_once();
    double delta = (xs - x).cwiseAbs().maxCoeff();
    x = xs;
    v_nodes = forward_sweep_voltages(p, x);
    refresh_channels(p, v_nodes);
    if (delta < config.tol) {
      converged = true;
      ++it;
      break;
    }
  }
  // one more solve so the state is exactly optimal for the final equivalents
  auto [xs, zw] = solve_once();
  x = xs;
  res.state = x;
  res.iterations = it;
  res.converged = converged;
  Eigen::VectorXd r = zw.first - jac.h * x;
  res.residuals = r;
  res.weights = zw.second;
  res.wmr = r.cwiseProduct(zw.second.cwiseProduct(r)).sum();
  return res;
}

}  // namespace faultloc
