#include "faultloc/simulator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <vector>

namespace faultloc {

namespace {

struct SolveEdge {
  int from = 0, to = 0;
  Mat3c z;
  PhaseMask phases;
  BranchId orig;
  int part = 0;  // 0 whole branch, 1 upstream half, 2 downstream half
};

struct SolveGraph {
  // node index 0..N-1; fictitious fault node appended last when present
  std::vector<NodeId> orig_node;  // -1 for the fictitious node
  std::vector<PhaseMask> node_phases;
  std::vector<std::array<Complex, 3>> s_load, s_dg;
  std::vector<SolveEdge> edges;
  std::vector<int> parent_edge;            // per node, -1 at slack
  std::vector<std::vector<int>> children;  // edge indices per node
  std::vector<int> order;                  // topo order, slack first
  int fict = -1;                           // fictitious node index or -1
  Mat3c fault_y = Mat3c::Zero();
};

Mat3c fault_admittance(const FaultScenario& sc, double z_base, double bolted_g) {
  double z_pu = sc.impedance_ohm / z_base;
  double y = (z_pu <= 0.0) ? bolted_g : 1.0 / z_pu;
  Mat3c Y = Mat3c::Zero();
  std::vector<int> ph;
  for (Phase p : kPhases)
    if (sc.phases.has(p)) ph.push_back(static_cast<int>(p));
  switch (sc.type) {
    case FaultType::LG:
      Y(ph[0], ph[0]) = y;
      break;
    case FaultType::LL:
      Y(ph[0], ph[0]) = y;
      Y(ph[1], ph[1]) = y;
      Y(ph[0], ph[1]) = -y;
      Y(ph[1], ph[0]) = -y;
      break;
    case FaultType::LLG:
      Y(ph[0], ph[0]) = y;
      Y(ph[1], ph[1]) = y;
      break;
    case FaultType::LLL:
      // three legs to a floating common node
      for (int a : ph)
        for (int b : ph) Y(a, b) = (a == b) ? y * (2.0 / 3.0) : -y / 3.0;
      break;
  }
  return Y;
}

SolveGraph build_graph(const FeederModel& m, const FaultScenario* sc,
                       const PowerflowOptions& opts) {
  SolveGraph g;
  std::map<NodeId, int> index;
  for (const auto& [n, ph] : m.nodes) {
    index[n] = static_cast<int>(g.orig_node.size());
    g.orig_node.push_back(n);
    g.node_phases.push_back(ph);
    std::array<Complex, 3> zero{Complex(0, 0), Complex(0, 0), Complex(0, 0)};
    auto it = m.loads.find(n);
    g.s_load.push_back(it != m.loads.end() ? it->second : zero);
    auto jt = m.dgs.find(n);
    g.s_dg.push_back(jt != m.dgs.end() ? jt->second : zero);
  }

  for (const BranchSpec& b : m.branches) {
    if (sc && b.id == sc->branch) continue;
    SolveEdge e;
    e.from = index.at(b.from);
    e.to = index.at(b.to);
    e.z = b.z();
    e.phases = b.phases;
    e.orig = b.id;
    g.edges.push_back(e);
  }

  if (sc) {
    const BranchSpec& b = m.branch(sc->branch);
    g.fict = static_cast<int>(g.orig_node.size());
    g.orig_node.push_back(-1);
    g.node_phases.push_back(b.phases);
    g.s_load.push_back({Complex(0, 0), Complex(0, 0), Complex(0, 0)});
    g.s_dg.push_back({Complex(0, 0), Complex(0, 0), Complex(0, 0)});
    auto [z1, z2] = split_impedance(b, sc->position);
    g.edges.push_back({index.at(b.from), g.fict, z1, b.phases, b.id, 1});
    g.edges.push_back({g.fict, index.at(b.to), z2, b.phases, b.id, 2});
    g.fault_y = fault_admittance(*sc, m.base.z_base(), opts.bolted_conductance);
  }

  int n = static_cast<int>(g.orig_node.size());
  g.parent_edge.assign(n, -1);
  g.children.assign(n, {});
  for (size_t i = 0; i < g.edges.size(); ++i) {
    g.children[g.edges[i].from].push_back(static_cast<int>(i));
    g.parent_edge[g.edges[i].to] = static_cast<int>(i);
  }
  g.order.clear();
  g.order.push_back(index.at(m.slack));
  for (size_t k = 0; k < g.order.size(); ++k)
    for (int ei : g.children[g.order[k]]) g.order.push_back(g.edges[ei].to);
  return g;
}

// Constant-PQ draw with a low-voltage current limit: the dividing voltage
// magnitude is floored, preserving the angle.
Complex pq_current(Complex s, Complex v, Phase p, double v_floor) {
  if (s == Complex(0, 0)) return {0, 0};
  double mag = std::abs(v);
  Complex v_eff = v;
  if (mag < v_floor) v_eff = (mag > 1e-12) ? v * (v_floor / mag) : nominal_unit_phasor(p) * v_floor;
  return std::conj(s / v_eff);
}

}  // namespace

TruePhasorState run_powerflow(const FeederModel& model, const FaultScenario* scenario,
                              const PowerflowOptions& opts) {
  if (scenario) scenario->validate(model);
  SolveGraph g = build_graph(model, scenario, opts);
  const int n_nodes = static_cast<int>(g.orig_node.size());
  const int n_edges = static_cast<int>(g.edges.size());

  std::vector<Vec3c> v(n_nodes, Vec3c::Zero());
  for (int i = 0; i < n_nodes; ++i)
    for (Phase p : kPhases)
      if (g.node_phases[i].has(p)) v[i](static_cast<int>(p)) = nominal_unit_phasor(p);

  std::vector<Vec3c> i_edge(n_edges, Vec3c::Zero());
  Vec3c i_fault = Vec3c::Zero();

  auto node_draw = [&](int ni) {
    Vec3c d = Vec3c::Zero();
    for (Phase p : kPhases) {
      if (!g.node_phases[ni].has(p)) continue;
      int k = static_cast<int>(p);
      d(k) = pq_current(g.s_load[ni][k], v[ni](k), p, opts.v_floor) -
             pq_current(g.s_dg[ni][k], v[ni](k), p, opts.v_floor);
    }
    return d;
  };

  int it = 0;
  bool converged = false;
  for (; it < opts.max_sweeps; ++it) {
    // backward: aggregate currents from the leaves up
    for (int k = static_cast<int>(g.order.size()) - 1; k >= 1; --k) {
      int ni = g.order[k];
      int pe = g.parent_edge[ni];
      Vec3c acc = (ni == g.fict) ? Vec3c(i_fault) : node_draw(ni);
      for (int ce : g.children[ni]) acc += i_edge[ce];
      i_edge[pe] = acc;
    }

    // forward: propagate voltage drops from the slack; the fault node is
    // solved implicitly so that bolted stamps stay stable
    double dv = 0.0;
    for (size_t k = 0; k < g.order.size(); ++k) {
      for (int ei : g.children[g.order[k]]) {
        const SolveEdge& e = g.edges[ei];
        Vec3c v_new;
        if (e.part == 1) {
          int sub2 = g.children[g.fict].front();
          Vec3c d = i_edge[sub2];
          Mat3c a = Mat3c::Identity() + e.z * g.fault_y;
          v_new = a.partialPivLu().solve(v[e.from] - e.z * d);
          for (Phase p : kPhases)
            if (!e.phases.has(p)) v_new(static_cast<int>(p)) = Complex(0, 0);
          i_fault = g.fault_y * v_new;
          i_edge[ei] = d + i_fault;
        } else {
          v_new = v[e.from] - e.z * i_edge[ei];
          for (Phase p : kPhases)
            if (!g.node_phases[e.to].has(p)) v_new(static_cast<int>(p)) = Complex(0, 0);
        }
        dv = std::max(dv, (v_new - v[e.to]).cwiseAbs().maxCoeff());
        v[e.to] = v_new;
      }
    }
    if (dv < opts.tol) {
      converged = true;
      ++it;
      break;
    }
  }
  if (!converged)
    throw SimulationError("power flow did not converge after " +
                          std::to_string(opts.max_sweeps) + " sweeps" +
                          (scenario ? " (" + scenario->describe() + ")" : ""));

  TruePhasorState st;
  st.converged = true;
  st.iterations = it;
  if (scenario) st.scenario = *scenario;

  for (int i = 0; i < n_nodes; ++i)
    if (g.orig_node[i] >= 0) st.node_voltage[g.orig_node[i]] = v[i];
  for (int ei = 0; ei < n_edges; ++ei) {
    const SolveEdge& e = g.edges[ei];
    if (e.part == 0) {
      st.branch_current_sending[e.orig] = i_edge[ei];
      st.branch_current_receiving[e.orig] = i_edge[ei];
    } else if (e.part == 1) {
      st.branch_current_sending[e.orig] = i_edge[ei];
    } else {
      st.branch_current_receiving[e.orig] = i_edge[ei];
    }
  }
  if (g.fict >= 0) {
    st.fault_node_voltage = v[g.fict];
    st.fault_current = i_fault;
  }

  // residual bookkeeping for the oracle invariants
  double kcl = 0.0, kvl = 0.0;
  for (int i = 1; i < static_cast<int>(g.order.size()); ++i) {
    int ni = g.order[i];
    Vec3c in = i_edge[g.parent_edge[ni]];
    Vec3c out = Vec3c::Zero();
    for (int ce : g.children[ni]) out += i_edge[ce];
    Vec3c draw = (ni == g.fict) ? Vec3c(i_fault) : node_draw(ni);
    kcl = std::max(kcl, (in - out - draw).cwiseAbs().maxCoeff());
  }
  for (int ei = 0; ei < n_edges; ++ei) {
    const SolveEdge& e = g.edges[ei];
    kvl = std::max(kvl, (v[e.from] - e.z * i_edge[ei] - v[e.to]).cwiseAbs().maxCoeff());
  }
  st.max_kcl_residual = kcl;
  st.max_kvl_residual = kvl;
  return st;
}

PowerAccount power_account(const FeederModel& model, const TruePhasorState& st,
                           const PowerflowOptions& opts) {
  PowerAccount acc{};
  for (const BranchId& c : model.child_branches(model.slack)) {
    const Vec3c& i = st.branch_current_sending.at(c);
    const Vec3c& vs = st.node_voltage.at(model.slack);
    for (int k = 0; k < 3; ++k) acc.slack_in += vs(k) * std::conj(i(k));
  }
  for (const auto& [nid, vph] : st.node_voltage) {
    auto add_part = [&](const std::map<NodeId, std::array<Complex, 3>>& src, Complex& dst) {
      auto it = src.find(nid);
      if (it == src.end()) return;
      for (Phase p : kPhases) {
        int k = static_cast<int>(p);
        Complex i = pq_current(it->second[k], vph(k), p, opts.v_floor);
        dst += vph(k) * std::conj(i);
      }
    };
    add_part(model.loads, acc.load);
    add_part(model.dgs, acc.dg);
  }
  for (const BranchSpec& b : model.branches) {
    const Vec3c& vf = st.node_voltage.at(b.from);
    const Vec3c& vt = st.node_voltage.at(b.to);
    if (st.scenario && st.scenario->branch == b.id) {
      const Vec3c& i1 = st.branch_current_sending.at(b.id);
      const Vec3c& i2 = st.branch_current_receiving.at(b.id);
      const Vec3c& vx = st.fault_node_voltage;
      for (int k = 0; k < 3; ++k) {
        acc.losses += (vf(k) - vx(k)) * std::conj(i1(k));
        acc.losses += (vx(k) - vt(k)) * std::conj(i2(k));
        acc.fault += vx(k) * std::conj(st.fault_current(k));
      }
    } else {
      const Vec3c& i = st.branch_current_sending.at(b.id);
      for (int k = 0; k < 3; ++k) acc.losses += (vf(k) - vt(k)) * std::conj(i(k));
    }
  }
  return acc;
}

void write_state_csv(const TruePhasorState& st, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SimulationError("cannot write state csv: " + path);
  out << "kind,id,phase,real,imag\n";
  char buf[128];
  auto row = [&](const char* kind, const std::string& id, Phase p, Complex z) {
    std::snprintf(buf, sizeof buf, "%s,%s,%c,%.12g,%.12g\n", kind, id.c_str(), phase_letter(p),
                  z.real(), z.imag());
    out << buf;
  };
  for (const auto& [n, vph] : st.node_voltage)
    for (Phase p : kPhases) row("V", std::to_string(n), p, vph(static_cast<int>(p)));
  for (const auto& [b, iph] : st.branch_current_sending)
    for (Phase p : kPhases) row("I", b, p, iph(static_cast<int>(p)));
  if (st.scenario)
    for (Phase p : kPhases) row("IF", st.scenario->branch, p, st.fault_current(static_cast<int>(p)));
}

}  // namespace faultloc
