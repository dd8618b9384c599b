#include "faultloc/measurement.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace faultloc {

std::string to_string(MeasKind k) {
  switch (k) {
    case MeasKind::VoltageRect: return "V_rect";
    case MeasKind::CurrentRect: return "I_rect";
    case MeasKind::PseudoPQ: return "PQ_pseudo";
    case MeasKind::EquivCurrent: return "I_equiv";
    case MeasKind::BoundaryCurrent: return "I_sub";
  }
  return "?";
}

MeasKind meas_kind_from_string(const std::string& s) {
  if (s == "V_rect") return MeasKind::VoltageRect;
  if (s == "I_rect") return MeasKind::CurrentRect;
  if (s == "PQ_pseudo") return MeasKind::PseudoPQ;
  if (s == "I_equiv") return MeasKind::EquivCurrent;
  if (s == "I_sub") return MeasKind::BoundaryCurrent;
  throw ConfigError("unknown measurement kind '" + s + "'");
}

std::string Measurement::location() const {
  switch (kind) {
    case MeasKind::CurrentRect:
      return branch + "@" + std::to_string(node);
    case MeasKind::PseudoPQ:
      return std::to_string(node) + (source == PseudoSource::Dg ? "#dg" : "");
    default:
      return node >= 0 ? std::to_string(node) : branch;
  }
}

void MeasurementSet::append(Measurement m) {
  for (const Measurement& e : entries) {
    if (e.kind == m.kind && e.node == m.node && e.branch == m.branch && e.phase == m.phase &&
        e.source == m.source)
      throw ConfigError("duplicate measurement " + to_string(m.kind) + " at " + m.location() +
                        " phase " + std::string(1, phase_letter(m.phase)));
  }
  entries.push_back(std::move(m));
}

const Measurement* MeasurementSet::find_voltage(NodeId node, Phase p) const {
  for (const Measurement& e : entries)
    if (e.kind == MeasKind::VoltageRect && e.node == node && e.phase == p) return &e;
  return nullptr;
}

const Measurement* MeasurementSet::find_current(const BranchId& branch, NodeId at_node,
                                                Phase p) const {
  for (const Measurement& e : entries)
    if (e.kind == MeasKind::CurrentRect && e.branch == branch && e.phase == p &&
        (at_node < 0 || e.node == at_node))
      return &e;
  return nullptr;
}

NoiseProfile NoiseProfile::noiseless() {
  NoiseProfile p;
  p.pmu_mag_max_err = 0.0;
  p.pmu_ang_max_err = 0.0;
  p.pseudo_max_err = 0.0;
  p.dg_meter_max_err = 0.0;
  return p;
}

MeasurementSet measure_true(const TruePhasorState& state, const FeederModel& model) {
  if (!state.converged) throw SimulationError("measure_true requires a converged state");
  MeasurementSet set;
  if (state.scenario) set.scenario_id = state.scenario->describe();

  for (const PmuPlacement& pmu : model.pmus) {
    const Vec3c& v = state.node_voltage.at(pmu.node);
    for (Phase p : kPhases) {
      if (!model.nodes.at(pmu.node).has(p)) continue;
      Measurement m;
      m.kind = MeasKind::VoltageRect;
      m.node = pmu.node;
      m.phase = p;
      m.a = v(static_cast<int>(p)).real();
      m.b = v(static_cast<int>(p)).imag();
      set.append(std::move(m));
    }
    for (const BranchId& bid : pmu.measured_branches) {
      const BranchSpec& b = model.branch(bid);
      const Vec3c& i = (pmu.node == b.from) ? state.branch_current_sending.at(bid)
                                            : state.branch_current_receiving.at(bid);
      for (Phase p : kPhases) {
        if (!b.phases.has(p)) continue;
        Measurement m;
        m.kind = MeasKind::CurrentRect;
        m.node = pmu.node;
        m.branch = bid;
        m.phase = p;
        m.a = i(static_cast<int>(p)).real();
        m.b = i(static_cast<int>(p)).imag();
        set.append(std::move(m));
      }
    }
  }

  // Actual consumed/produced power from the converged state; equals the
  // scheduled constant-PQ value away from the low-voltage limit.
  PowerflowOptions opts;
  auto emit_pseudo = [&](const std::map<NodeId, std::array<Complex, 3>>& src, PseudoSource tag) {
    for (const auto& [nid, sph] : src) {
      const Vec3c& v = state.node_voltage.at(nid);
      for (Phase p : kPhases) {
        int k = static_cast<int>(p);
        if (!model.nodes.at(nid).has(p)) continue;
        if (sph[k] == Complex(0, 0)) continue;
        Complex vv = v(k);
        Complex s_actual = sph[k];
        if (std::abs(vv) < opts.v_floor)
          // consumption under the low-voltage current-limit law
          s_actual = (std::abs(vv) > 1e-12) ? sph[k] * (std::abs(vv) / opts.v_floor)
                                            : Complex(0, 0);
        Measurement m;
        m.kind = MeasKind::PseudoPQ;
        m.node = nid;
        m.source = tag;
        m.phase = p;
        m.a = s_actual.real();
        m.b = s_actual.imag();
        set.append(std::move(m));
      }
    }
  };
  emit_pseudo(model.loads, PseudoSource::Load);
  emit_pseudo(model.dgs, PseudoSource::Dg);
  return set;
}

MeasurementSet synthesize(const MeasurementSet& exact, const NoiseProfile& profile,
                          uint64_t seed) {
  if (profile.sigma_rule <= 0) throw ConfigError("sigma_rule must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  MeasurementSet out;
  out.scenario_id = exact.scenario_id;
  out.seed = seed;
  out.entries.reserve(exact.entries.size());

  for (const Measurement& e : exact.entries) {
    Measurement m = e;
    switch (e.kind) {
      case MeasKind::VoltageRect:
      case MeasKind::CurrentRect: {
        Complex z(e.a, e.b);
        double mag = std::abs(z), ang = std::arg(z);
        double sig_mag = profile.pmu_mag_max_err * mag / profile.sigma_rule;
        double sig_ang = profile.pmu_ang_max_err / profile.sigma_rule;
        double mag_n = mag + sig_mag * gauss(rng);
        double ang_n = ang + sig_ang * gauss(rng);
        Complex zn = std::polar(mag_n, ang_n);
        m.a = zn.real();
        m.b = zn.imag();
        // first-order polar -> rectangular propagation, cross terms dropped
        double c = std::cos(ang), s = std::sin(ang);
        double vr = sig_mag * sig_mag * c * c + mag * mag * sig_ang * sig_ang * s * s;
        double vx = sig_mag * sig_mag * s * s + mag * mag * sig_ang * sig_ang * c * c;
        m.var_a = std::max(vr, kVarianceFloor);
        m.var_b = std::max(vx, kVarianceFloor);
        break;
      }
      case MeasKind::PseudoPQ: {
        double frac =
            (e.source == PseudoSource::Dg) ? profile.dg_meter_max_err : profile.pseudo_max_err;
        double sig_p = frac * std::abs(e.a) / profile.sigma_rule;
        double sig_q = frac * std::abs(e.b) / profile.sigma_rule;
        m.a = e.a + sig_p * gauss(rng);
        m.b = e.b + sig_q * gauss(rng);
        m.var_a = std::max(sig_p * sig_p, kVarianceFloor);
        m.var_b = std::max(sig_q * sig_q, kVarianceFloor);
        break;
      }
      default:
        throw ConfigError("synthesize expects raw measurement kinds, got " + to_string(e.kind));
    }
    out.entries.push_back(std::move(m));
  }
  return out;
}

CurrentEstimate to_equivalent_current(Complex s, double var_p, double var_q, Complex v) {
  double mag2 = std::norm(v);
  if (mag2 < 1e-6)  // |v| < 1e-3 p.u.
    throw EstimationError("degenerate voltage in equivalent-current conversion");
  // i = [(p+jq)/v]* = (a+jb)(p-jq) with a+jb = conj(1/conj(v)) = v/|v|^2
  double a = v.real() / mag2, b = v.imag() / mag2;
  CurrentEstimate ce;
  ce.value = std::conj(s / v);
  ce.var_re = a * a * var_p + b * b * var_q;
  ce.var_im = b * b * var_p + a * a * var_q;
  return ce;
}

CurrentEstimate boundary_equivalent(const CurrentEstimate& pseudo_eq, Complex measured_i,
                                    double var_re, double var_im) {
  CurrentEstimate ce = pseudo_eq;
  ce.value += measured_i;
  ce.var_re += var_re;
  ce.var_im += var_im;
  return ce;
}

std::map<NodeId, std::array<std::optional<CurrentEstimate>, 3>> initial_equivalents(
    const FeederModel& model, const Subgraph& g, const MeasurementSet& meas,
    const Vec3c& v_root) {
  std::map<NodeId, std::array<std::optional<CurrentEstimate>, 3>> out;
  for (NodeId n : g.node_set) {
    if (n == g.root) continue;
    for (Phase p : kPhases) {
      if (!model.nodes.at(n).has(p)) continue;
      int k = static_cast<int>(p);
      Complex v = v_root(k);
      CurrentEstimate acc{};
      bool any = false;
      for (const Measurement& e : meas.entries) {
        if (e.kind != MeasKind::PseudoPQ || e.node != n || e.phase != p) continue;
        double sign = (e.source == PseudoSource::Dg) ? -1.0 : 1.0;
        CurrentEstimate ce =
            to_equivalent_current(Complex(sign * e.a, sign * e.b), e.var_a, e.var_b, v);
        acc += ce;
        any = true;
      }
      if (g.node_class.at(n) == NodeClass::FarPmu) {
        for (const BranchId& ex : g.export_branches) {
          const Measurement* im = meas.find_current(ex, n, p);
          if (!im)
            throw EstimationError("missing downstream current measurement on " + ex +
                                  " at node " + std::to_string(n));
          acc = boundary_equivalent(acc, Complex(im->a, im->b), im->var_a, im->var_b);
          any = true;
        }
      }
      if (any) out[n][k] = acc;
    }
  }
  return out;
}

void write_measurements_csv(const MeasurementSet& set, const std::string& path) {
  std::ofstream outf(path);
  if (!outf) throw ConfigError("cannot write measurement csv: " + path);
  outf << "kind,location,phase,a,b,var_a,var_b,seed\n";
  char buf[160];
  for (const Measurement& m : set.entries) {
    std::snprintf(buf, sizeof buf, "%s,%s,%c,%.17g,%.17g,%.17g,%.17g,%llu\n",
                  to_string(m.kind).c_str(), m.location().c_str(), phase_letter(m.phase), m.a,
                  m.b, m.var_a, m.var_b, static_cast<unsigned long long>(set.seed));
    outf << buf;
  }
}

MeasurementSet read_measurements_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open measurement csv: " + path);
  MeasurementSet set;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty measurement csv: " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string kind, loc, phase, a, b, va, vb, seed;
    for (std::string* f : {&kind, &loc, &phase, &a, &b, &va, &vb, &seed})
      if (!std::getline(ss, *f, ',')) throw ConfigError("malformed measurement row: " + line);
    Measurement m;
    m.kind = meas_kind_from_string(kind);
    if (phase.size() != 1) throw ConfigError("bad phase in row: " + line);
    m.phase = PhaseMask::from_string(phase).has(Phase::A)   ? Phase::A
              : PhaseMask::from_string(phase).has(Phase::B) ? Phase::B
                                                            : Phase::C;
    if (m.kind == MeasKind::CurrentRect) {
      auto at = loc.find('@');
      if (at == std::string::npos) throw ConfigError("current row missing '@node': " + line);
      m.branch = loc.substr(0, at);
      m.node = std::stoi(loc.substr(at + 1));
    } else if (m.kind == MeasKind::PseudoPQ) {
      auto hash = loc.find('#');
      m.source = (hash != std::string::npos) ? PseudoSource::Dg : PseudoSource::Load;
      m.node = std::stoi(loc.substr(0, hash));
    } else {
      m.node = std::stoi(loc);
    }
    m.a = std::stod(a);
    m.b = std::stod(b);
    m.var_a = std::stod(va);
    m.var_b = std::stod(vb);
    set.seed = std::stoull(seed);
    set.entries.push_back(std::move(m));
  }
  return set;
}

}  // namespace faultloc
