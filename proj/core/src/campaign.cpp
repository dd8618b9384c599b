#include "faultloc/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "faultloc/simulator.hpp"

namespace faultloc {

using nlohmann::json;

Campaign Campaign::from_json(const json& doc) {
  static const std::set<std::string> allowed{
      "feeder", "fault_types", "impedances_ohm", "branches", "branches_per_subgraph",
      "positions", "trials", "noise", "line_param_max_err", "seed", "locator", "threads"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown campaign field '" + it.key() + "'");

  Campaign c;
  c.feeder_path = doc.at("feeder").get<std::string>();
  if (doc.contains("fault_types")) {
    c.fault_types.clear();
    for (const json& t : doc.at("fault_types"))
      c.fault_types.push_back(fault_type_from_string(t.get<std::string>()));
  }
  if (doc.contains("impedances_ohm"))
    c.impedances_ohm = doc.at("impedances_ohm").get<std::vector<double>>();
  if (doc.contains("branches")) c.branches = doc.at("branches").get<std::vector<BranchId>>();
  if (doc.contains("branches_per_subgraph"))
    c.branches_per_subgraph = doc.at("branches_per_subgraph").get<int>();
  if (doc.contains("positions")) c.positions = doc.at("positions").get<std::vector<double>>();
  if (doc.contains("trials")) c.trials = doc.at("trials").get<int>();
  if (doc.contains("seed")) c.seed = doc.at("seed").get<uint64_t>();
  if (doc.contains("threads")) c.threads = doc.at("threads").get<int>();
  if (doc.contains("line_param_max_err"))
    c.line_param_max_err = doc.at("line_param_max_err").get<double>();
  if (doc.contains("noise")) {
    const json& n = doc.at("noise");
    static const std::set<std::string> nallowed{"pmu_mag_max_err", "pmu_ang_max_err",
                                                "pseudo_max_err", "dg_meter_max_err",
                                                "sigma_rule"};
    for (auto it = n.begin(); it != n.end(); ++it)
      if (!nallowed.count(it.key())) throw ConfigError("unknown noise field '" + it.key() + "'");
    if (n.contains("pmu_mag_max_err")) c.noise.pmu_mag_max_err = n.at("pmu_mag_max_err").get<double>();
    if (n.contains("pmu_ang_max_err")) c.noise.pmu_ang_max_err = n.at("pmu_ang_max_err").get<double>();
    if (n.contains("pseudo_max_err")) c.noise.pseudo_max_err = n.at("pseudo_max_err").get<double>();
    if (n.contains("dg_meter_max_err")) c.noise.dg_meter_max_err = n.at("dg_meter_max_err").get<double>();
    if (n.contains("sigma_rule")) c.noise.sigma_rule = n.at("sigma_rule").get<double>();
  }
  if (doc.contains("locator")) {
    const json& l = doc.at("locator");
    static const std::set<std::string> lallowed{"threshold", "mode", "refine_laterals",
                                                "calibration_quantile", "calibration_safety",
                                                "calibration_trials", "q_grid"};
    for (auto it = l.begin(); it != l.end(); ++it)
      if (!lallowed.count(it.key())) throw ConfigError("unknown locator field '" + it.key() + "'");
    if (l.contains("threshold")) c.locator.threshold = l.at("threshold").get<double>();
    if (l.contains("mode")) {
      std::string m = l.at("mode").get<std::string>();
      if (m == "fixed")
        c.locator.threshold_mode = ThresholdMode::Fixed;
      else if (m == "calibrated")
        c.locator.threshold_mode = ThresholdMode::Calibrated;
      else
        throw ConfigError("locator mode must be 'fixed' or 'calibrated'");
    }
    if (l.contains("refine_laterals")) c.locator.refine_laterals = l.at("refine_laterals").get<bool>();
    if (l.contains("calibration_quantile"))
      c.locator.calibration_quantile = l.at("calibration_quantile").get<double>();
    if (l.contains("calibration_safety"))
      c.locator.calibration_safety = l.at("calibration_safety").get<double>();
    if (l.contains("calibration_trials"))
      c.locator.calibration_trials = l.at("calibration_trials").get<int>();
    if (l.contains("q_grid")) c.locator.q_grid = l.at("q_grid").get<std::vector<double>>();
  }
  if (c.trials < 1) throw ConfigError("campaign trials must be >= 1");
  if (c.fault_types.empty() || c.impedances_ohm.empty() || c.positions.empty())
    throw ConfigError("campaign grid is empty");
  return c;
}

Campaign Campaign::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open campaign file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("campaign file " + path + ": " + e.what());
  }
  Campaign c = from_json(doc);
  return c;
}

double CellStats::mean_ms() const {
  if (locate_ms.empty()) return 0.0;
  double s = 0;
  for (double v : locate_ms) s += v;
  return s / locate_ms.size();
}

double CellStats::p95_ms() const {
  if (locate_ms.empty()) return 0.0;
  std::vector<double> v = locate_ms;
  std::sort(v.begin(), v.end());
  size_t idx = static_cast<size_t>(std::ceil(0.95 * v.size()));
  idx = std::min(std::max<size_t>(idx, 1), v.size()) - 1;
  return v[idx];
}

Tally AccuracyReport::total() const {
  return total_where([](const CampaignCell&) { return true; });
}

Tally AccuracyReport::total_where(const std::function<bool(const CampaignCell&)>& pred) const {
  Tally t;
  for (const CellStats& c : cells) {
    if (!pred(c.cell)) continue;
    t.n0 += c.n0;
    t.n1 += c.n1;
    t.n_other += c.n_other;
    t.n_failed += c.n_failed;
    t.nt += c.nt;
    t.max_hops = std::max(t.max_hops, c.max_hops);
  }
  return t;
}

double AccuracyReport::mean_locate_ms() const {
  double s = 0;
  size_t n = 0;
  for (const CellStats& c : cells) {
    for (double v : c.locate_ms) s += v;
    n += c.locate_ms.size();
  }
  return n ? s / n : 0.0;
}

std::optional<PhaseMask> fault_phases_for(FaultType type, PhaseMask available) {
  std::vector<Phase> present;
  for (Phase p : kPhases)
    if (available.has(p)) present.push_back(p);
  PhaseMask m;
  switch (type) {
    case FaultType::LG:
      if (present.empty()) return std::nullopt;
      m.set(present.front());
      return m;
    case FaultType::LL:
    case FaultType::LLG:
      if (present.size() < 2) return std::nullopt;
      if (available.has(Phase::B) && available.has(Phase::C)) {
        m.set(Phase::B);
        m.set(Phase::C);
      } else {
        m.set(present[0]);
        m.set(present[1]);
      }
      return m;
    case FaultType::LLL:
      if (present.size() < 3) return std::nullopt;
      return PhaseMask::all();
  }
  return std::nullopt;
}

VerdictClass classify_verdict(const FeederModel& model, const BranchId& truth,
                              const BranchId& verdict) {
  if (truth == verdict) return {0};
  const BranchSpec& a = model.branch(truth);
  const BranchSpec& b = model.branch(verdict);
  int d = std::min({model.node_distance(a.from, b.from), model.node_distance(a.from, b.to),
                    model.node_distance(a.to, b.from), model.node_distance(a.to, b.to)});
  return {d + 1};
}

namespace {

std::vector<BranchId> sample_branches(const FeederModel& model, const SubgraphPartition& part,
                                      int per_subgraph) {
  std::vector<BranchId> out;
  for (const Subgraph& g : part.subgraphs) {
    std::vector<BranchId> sorted = g.edges;
    std::sort(sorted.begin(), sorted.end(), [&](const BranchId& a, const BranchId& b) {
      int da = model.depth(model.branch(a).to), db = model.depth(model.branch(b).to);
      if (da != db) return da < db;
      return a < b;
    });
    int n = static_cast<int>(sorted.size());
    int take = std::min(per_subgraph, n);
    for (int i = 0; i < take; ++i) {
      int idx = (take == 1) ? 0 : i * (n - 1) / (take - 1);
      if (std::find(out.begin(), out.end(), sorted[idx]) == out.end())
        out.push_back(sorted[idx]);
      else if (idx + 1 < n)
        out.push_back(sorted[idx + 1]);
    }
  }
  return out;
}

FeederModel perturb_line_parameters(const FeederModel& model, double max_frac, uint64_t seed) {
  FeederModel m = model;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, max_frac / 3.0);
  for (BranchSpec& b : m.branches) {
    double dr = std::clamp(gauss(rng), -max_frac, max_frac);
    double dx = std::clamp(gauss(rng), -max_frac, max_frac);
    b.r *= (1.0 + dr);
    b.x *= (1.0 + dx);
  }
  return m;
}

struct TrialOutcome {
  int hops = -1;       // -1 failed, 99 missed (no branch verdict)
  double locate_ms = 0.0;
};

}  // namespace

AccuracyReport run_campaign(const Campaign& campaign, const FeederModel* preloaded) {
  FeederModel model = preloaded ? *preloaded : FeederModel::load_file(campaign.feeder_path);
  SubgraphPartition part = partition(model);

  LocatorConfig locator = campaign.locator;
  // campaign trials already run concurrently; keep each locate single-threaded
  locator.parallel_step_one = false;
  if (locator.threshold_mode == ThresholdMode::Calibrated) {
    CalibrationResult cal =
        calibrate_threshold(model, part, campaign.noise,
                            std::max(locator.calibration_trials, 100),
                            derive_seed(campaign.seed, 0xCA11), locator);
    locator.threshold = cal.epsilon;
  }

  std::vector<BranchId> branch_axis = campaign.branches;
  if (branch_axis.empty() && campaign.branches_per_subgraph > 0)
    branch_axis = sample_branches(model, part, campaign.branches_per_subgraph);
  if (branch_axis.empty()) throw ConfigError("campaign has no branch axis");
  for (const BranchId& b : branch_axis)
    if (!model.find_branch(b)) throw ConfigError("campaign references unknown branch " + b);

  std::vector<CampaignCell> cells;
  for (FaultType t : campaign.fault_types)
    for (double z : campaign.impedances_ohm)
      for (const BranchId& b : branch_axis) {
        if (!fault_phases_for(t, model.branch(b).phases)) continue;
        for (double pos : campaign.positions) cells.push_back({t, z, b, pos});
      }
  if (cells.empty()) throw ConfigError("campaign grid is empty after phase filtering");

  const int nt = campaign.trials;
  std::vector<std::vector<TrialOutcome>> outcomes(cells.size(),
                                                  std::vector<TrialOutcome>(nt));

  std::atomic<size_t> next{0};
  const size_t total_jobs = cells.size() * static_cast<size_t>(nt);
  auto worker = [&]() {
    for (;;) {
      size_t job = next.fetch_add(1);
      if (job >= total_jobs) return;
      size_t ci = job / nt;
      int trial = static_cast<int>(job % nt);
      const CampaignCell& cell = cells[ci];
      TrialOutcome& out = outcomes[ci][trial];
      try {
        uint64_t seed_t = derive_seed(campaign.seed, ci + 1, trial + 1);
        FaultScenario sc;
        sc.branch = cell.branch;
        sc.position = cell.position;
        sc.type = cell.type;
        sc.phases = *fault_phases_for(cell.type, model.branch(cell.branch).phases);
        sc.impedance_ohm = cell.impedance_ohm;

        TruePhasorState truth = run_powerflow(model, &sc);
        MeasurementSet noisy = synthesize(measure_true(truth, model), campaign.noise, seed_t);

        const FeederModel* est_model = &model;
        FeederModel perturbed;
        if (campaign.line_param_max_err > 0) {
          perturbed = perturb_line_parameters(model, campaign.line_param_max_err,
                                              derive_seed(seed_t, 0x11fe));
          est_model = &perturbed;
        }

        auto t0 = std::chrono::steady_clock::now();
        LocationVerdict v = locate(*est_model, part, noisy, locator);
        out.locate_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (v.kind == LocationVerdict::Kind::Branch ||
            v.kind == LocationVerdict::Kind::FirstBranch ||
            v.kind == LocationVerdict::Kind::DirectBranch)
          out.hops = classify_verdict(model, cell.branch, v.branch).hops;
        else
          out.hops = 99;
      } catch (const std::exception&) {
        out.hops = -1;
      }
    }
  };

  int nthreads = campaign.threads > 0 ? campaign.threads
                                      : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min<int>(nthreads, static_cast<int>(total_jobs)));
  std::vector<std::thread> pool;
  for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();

  AccuracyReport report;
  report.threshold_used = locator.threshold;
  for (size_t ci = 0; ci < cells.size(); ++ci) {
    CellStats st;
    st.cell = cells[ci];
    st.nt = nt;
    for (const TrialOutcome& o : outcomes[ci]) {
      if (o.hops < 0) {
        st.n_failed++;
        continue;
      }
      st.locate_ms.push_back(o.locate_ms);
      if (o.hops == 0)
        st.n0++;
      else if (o.hops == 1)
        st.n1++;
      else
        st.n_other++;
      if (o.hops != 99) st.max_hops = std::max(st.max_hops, o.hops);
    }
    report.cells.push_back(std::move(st));
  }
  return report;
}

void AccuracyReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report: " + path);
  out << "cell,fault_type,impedance_ohm,branch,position,nt,n0,n1,n_other,n_failed,"
         "alpha,beta,other,max_error_hops\n";
  char buf[256];
  for (size_t i = 0; i < cells.size(); ++i) {
    const CellStats& c = cells[i];
    double alpha = c.nt ? static_cast<double>(c.n0) / c.nt : 0.0;
    double beta = c.nt ? static_cast<double>(c.n1) / c.nt : 0.0;
    double other = c.nt ? static_cast<double>(c.n_other) / c.nt : 0.0;
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6g,%s,%.6g,%d,%d,%d,%d,%d,%.6f,%.6f,%.6f,%d\n", i,
                  to_string(c.cell.type).c_str(), c.cell.impedance_ohm, c.cell.branch.c_str(),
                  c.cell.position, c.nt, c.n0, c.n1, c.n_other, c.n_failed, alpha, beta, other,
                  c.max_hops);
    out << buf;
  }
}

void AccuracyReport::write_timing_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write timing report: " + path);
  out << "cell,mean_ms,p95_ms\n";
  char buf[128];
  for (size_t i = 0; i < cells.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.3f\n", i, cells[i].mean_ms(), cells[i].p95_ms());
    out << buf;
  }
}

json AccuracyReport::to_json(bool include_timing) const {
  json arr = json::array();
  for (size_t i = 0; i < cells.size(); ++i) {
    const CellStats& c = cells[i];
    json jc{{"cell", i},
            {"fault_type", to_string(c.cell.type)},
            {"impedance_ohm", c.cell.impedance_ohm},
            {"branch", c.cell.branch},
            {"position", c.cell.position},
            {"nt", c.nt},
            {"n0", c.n0},
            {"n1", c.n1},
            {"n_other", c.n_other},
            {"n_failed", c.n_failed},
            {"max_error_hops", c.max_hops}};
    if (include_timing) {
      jc["mean_ms"] = c.mean_ms();
      jc["p95_ms"] = c.p95_ms();
    }
    arr.push_back(jc);
  }
  Tally t = total();
  return json{{"threshold", threshold_used},
              {"cells", arr},
              {"total", {{"nt", t.nt},
                         {"n0", t.n0},
                         {"n1", t.n1},
                         {"n_other", t.n_other},
                         {"n_failed", t.n_failed},
                         {"alpha", t.alpha()},
                         {"beta", t.beta()},
                         {"max_error_hops", t.max_hops}}}};
}

}  // namespace faultloc
