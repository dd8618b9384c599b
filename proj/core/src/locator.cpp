#include "faultloc/locator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "faultloc/simulator.hpp"

namespace faultloc {

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double subgraph_wmr(const FeederModel& model, const SubgraphPartition& part, int K,
                    const MeasurementSet& meas, const WlsConfig& wls) {
  EstimationProblem prob = build_subgraph_problem(model, part, K, meas);
  WlsResult res = estimate(prob, wls);
  if (!res.converged)
    throw EstimationError("subgraph " + std::to_string(K) + " estimation did not converge");
  return res.wmr;
}

/// Best split-hypothesis fit for one edge: grid over the fault position with
/// one parabolic refinement around the best grid point.
double edge_hypothesis_wmr(const FeederModel& model, const SubgraphPartition& part, int K,
                           const MeasurementSet& meas, const BranchId& edge,
                           const LocatorConfig& cfg) {
  auto eval = [&](double q) {
    EstimationProblem prob = build_split_problem(model, part, K, meas, edge, q);
    return estimate(prob, cfg.wls).wmr;
  };
  const std::vector<double>& grid = cfg.q_grid;
  std::vector<double> w(grid.size());
  size_t best = 0;
  for (size_t i = 0; i < grid.size(); ++i) {
    w[i] = eval(grid[i]);
    if (w[i] < w[best]) best = i;
  }
  double best_w = w[best];
  if (grid.size() >= 3 && best > 0 && best + 1 < grid.size()) {
    // parabola through the bracketing triple
    double x0 = grid[best - 1], x1 = grid[best], x2 = grid[best + 1];
    double y0 = w[best - 1], y1 = w[best], y2 = w[best + 1];
    double denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
    if (std::abs(denom) > 1e-12) {
      double a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
      double b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
      if (a > 0) {
        double qv = std::clamp(-b / (2 * a), 0.02, 0.98);
        best_w = std::min(best_w, eval(qv));
      }
    }
  } else if (!grid.empty()) {
    double qe = (best == 0) ? std::max(0.02, grid.front() / 2)
                            : std::min(0.98, (1.0 + grid.back()) / 2);
    best_w = std::min(best_w, eval(qe));
  }
  return best_w;
}

}  // namespace

SubgraphScores identify_faulted_subgraph(const FeederModel& model, const SubgraphPartition& part,
                                         const MeasurementSet& meas, const LocatorConfig& cfg) {
  const int n = static_cast<int>(part.subgraphs.size());
  SubgraphScores scores;
  scores.j.assign(n, 0.0);
  std::vector<std::string> failures;

  if (cfg.parallel_step_one && n > 1) {
    std::vector<std::future<double>> futs;
    futs.reserve(n);
    for (int k = 1; k <= n; ++k)
      futs.push_back(std::async(std::launch::async, [&, k] {
        return subgraph_wmr(model, part, k, meas, cfg.wls);
      }));
    for (int k = 1; k <= n; ++k) {
      try {
        scores.j[k - 1] = futs[k - 1].get();
      } catch (const std::exception& e) {
        failures.push_back("G_" + std::to_string(k) + ": " + e.what());
      }
    }
  } else {
    for (int k = 1; k <= n; ++k) {
      try {
        scores.j[k - 1] = subgraph_wmr(model, part, k, meas, cfg.wls);
      } catch (const std::exception& e) {
        failures.push_back("G_" + std::to_string(k) + ": " + e.what());
      }
    }
  }
  if (!failures.empty()) {
    std::string what = "subgraph estimation failed:";
    for (const std::string& f : failures) what += " [" + f + "]";
    throw EstimationError(what);
  }

  double jmax = *std::max_element(scores.j.begin(), scores.j.end());
  for (int k = 0; k < n; ++k) {
    if (scores.j[k] >= jmax * (1.0 - cfg.tie_rel)) {
      scores.k_star = k + 1;  // lowest index in the tie band wins
      scores.tie = std::count_if(scores.j.begin(), scores.j.end(), [&](double v) {
                     return v >= jmax * (1.0 - cfg.tie_rel);
                   }) > 1;
      break;
    }
  }
  return scores;
}

LocationVerdict locate_faulted_line(const FeederModel& model, const SubgraphPartition& part,
                                    const PathChain& chain, const MeasurementSet& meas,
                                    const LocatorConfig& cfg, const SubgraphScores* scores) {
  auto t0 = Clock::now();
  const Subgraph& g = part.at(chain.subgraph);
  const int S = chain.path_count();

  LocationVerdict v;
  v.subgraph = chain.subgraph;
  v.threshold_used = cfg.threshold;
  if (scores) {
    v.subgraph_wmr = scores->j;
    v.tie = scores->tie;
  }

  // per-edge split-hypothesis fits over the whole subgraph
  for (const BranchId& e : g.edges)
    v.hypothesis_wmr.emplace_back(e, edge_hypothesis_wmr(model, part, chain.subgraph, meas, e, cfg));
  auto hyp = [&](const BranchId& e) {
    for (const auto& [id, w] : v.hypothesis_wmr)
      if (id == e) return w;
    throw EstimationError("no hypothesis fit for branch " + e);
  };

  double j_plain = scores ? scores->j[chain.subgraph - 1]
                          : subgraph_wmr(model, part, chain.subgraph, meas, cfg.wls);

  // WMR_s: best fit with the fault assumed beyond path s. Monotone in s; the
  // last path has nothing beyond it and reports the plain subgraph residual.
  v.path_wmr.assign(S, 0.0);
  for (int s = 1; s <= S; ++s) {
    if (s == S) {
      v.path_wmr[s - 1] = j_plain;
      continue;
    }
    std::vector<BranchId> inside = chain.path_edges(s);
    double best = j_plain;
    for (const BranchId& e : g.edges) {
      if (std::find(inside.begin(), inside.end(), e) != inside.end()) continue;
      best = std::min(best, hyp(e));
    }
    v.path_wmr[s - 1] = best;
  }

  // threshold crossing: first path whose residual turns anomalous
  int s_star = 0;
  if (v.path_wmr[0] > cfg.threshold) {
    s_star = 1;
  } else {
    for (int s = 2; s <= S; ++s) {
      if (v.path_wmr[s - 2] <= cfg.threshold && v.path_wmr[s - 1] > cfg.threshold) {
        s_star = s;
        break;
      }
    }
  }

  auto refine_in = [&](const std::vector<BranchId>& candidates) {
    BranchId best = candidates.front();
    double bw = hyp(best);
    for (const BranchId& e : candidates) {
      double w = hyp(e);
      if (w < bw) {
        bw = w;
        best = e;
      }
    }
    return best;
  };

  if (s_star == 0) {
    if (j_plain > cfg.threshold) {
      // anomalous subgraph but no clean crossing; fall back to the best
      // hypothesis over all edges
      v.no_crossing = true;
      std::vector<BranchId> all = g.edges;
      v.branch = refine_in(all);
      v.kind = LocationVerdict::Kind::Branch;
    } else {
      v.kind = LocationVerdict::Kind::NotFoundInSubgraph;
    }
    v.step_two_ms = ms_since(t0);
    return v;
  }

  const PathIncrement& inc = chain.increments[s_star - 1];
  std::vector<BranchId> candidates{inc.trunk_edge};
  if (cfg.refine_laterals)
    candidates.insert(candidates.end(), inc.lateral_edges.begin(), inc.lateral_edges.end());
  v.branch = (candidates.size() == 1) ? candidates.front() : refine_in(candidates);
  v.kind = (s_star == 1 && v.branch == inc.trunk_edge) ? LocationVerdict::Kind::FirstBranch
                                                       : LocationVerdict::Kind::Branch;
  v.step_two_ms = ms_since(t0);
  return v;
}

std::optional<BranchId> screen_direct_branches(const FeederModel& model,
                                               const SubgraphPartition& part,
                                               const MeasurementSet& meas,
                                               const LocatorConfig& cfg) {
  std::optional<BranchId> worst;
  double worst_score = 1.0;
  for (const BranchId& bid : part.direct_branches) {
    const BranchSpec& b = model.branch(bid);
    const Mat3c z = b.z();
    // prefer the sending-end current
    NodeId meter = b.from;
    if (!meas.find_current(bid, b.from)) meter = b.to;
    double score = 0.0;
    bool complete = true;
    for (Phase ph : kPhases) {
      if (!b.phases.has(ph)) continue;
      const Measurement* vf = meas.find_voltage(b.from, ph);
      const Measurement* vt = meas.find_voltage(b.to, ph);
      if (!vf || !vt) {
        complete = false;
        break;
      }
      Complex drop = 0;
      double var_re = vf->var_a + vt->var_a;
      double var_im = vf->var_b + vt->var_b;
      for (Phase psi : kPhases) {
        if (!b.phases.has(psi)) continue;
        const Measurement* im = meas.find_current(bid, meter, psi);
        if (!im) {
          complete = false;
          break;
        }
        Complex zz = z(static_cast<int>(ph), static_cast<int>(psi));
        drop += zz * Complex(im->a, im->b);
        double r2 = zz.real() * zz.real(), x2 = zz.imag() * zz.imag();
        var_re += r2 * im->var_a + x2 * im->var_b;
        var_im += x2 * im->var_a + r2 * im->var_b;
      }
      if (!complete) break;
      Complex r = Complex(vf->a, vf->b) - drop - Complex(vt->a, vt->b);
      double s_re = std::abs(r.real()) / (cfg.direct_branch_sigma * std::sqrt(std::max(var_re, kVarianceFloor)));
      double s_im = std::abs(r.imag()) / (cfg.direct_branch_sigma * std::sqrt(std::max(var_im, kVarianceFloor)));
      score = std::max({score, s_re, s_im});
    }
    if (complete && score > worst_score) {
      worst_score = score;
      worst = bid;
    }
  }
  return worst;
}

LocationVerdict locate(const FeederModel& model, const SubgraphPartition& part,
                       const MeasurementSet& meas, const LocatorConfig& cfg) {
  auto t0 = Clock::now();
  if (auto direct = screen_direct_branches(model, part, meas, cfg)) {
    LocationVerdict v;
    v.kind = LocationVerdict::Kind::DirectBranch;
    v.branch = *direct;
    v.threshold_used = cfg.threshold;
    v.step_one_ms = ms_since(t0);
    return v;
  }
  SubgraphScores scores = identify_faulted_subgraph(model, part, meas, cfg);
  double step1 = ms_since(t0);

  double jmax = *std::max_element(scores.j.begin(), scores.j.end());
  if (jmax <= cfg.threshold) {
    LocationVerdict v;
    v.kind = LocationVerdict::Kind::NoFault;
    v.subgraph_wmr = scores.j;
    v.threshold_used = cfg.threshold;
    v.step_one_ms = step1;
    return v;
  }

  PathChain chain = enumerate_paths(model, part, scores.k_star);
  LocationVerdict v = locate_faulted_line(model, part, chain, meas, cfg, &scores);
  v.step_one_ms = step1;
  return v;
}

CalibrationResult calibrate_threshold(const FeederModel& model, const SubgraphPartition& part,
                                      const NoiseProfile& profile, int trials, uint64_t seed,
                                      const LocatorConfig& cfg) {
  if (trials < 100) throw ConfigError("calibration needs at least 100 trials");
  TruePhasorState state = run_powerflow(model);
  MeasurementSet exact = measure_true(state, model);

  CalibrationResult out;
  out.trials = trials;
  std::vector<double> maxima;
  maxima.reserve(trials);
  for (int t = 0; t < trials; ++t) {
    MeasurementSet noisy = synthesize(exact, profile, derive_seed(seed, t));
    double mx = 0.0;
    bool ok = true;
    for (const Subgraph& g : part.subgraphs) {
      try {
        mx = std::max(mx, subgraph_wmr(model, part, g.index, noisy, cfg.wls));
      } catch (const std::exception&) {
        ok = false;
        break;
      }
    }
    if (ok)
      maxima.push_back(mx);
    else
      out.excluded++;
  }
  if (out.excluded * 20 > trials)
    throw ConfigError("calibration failed: " + std::to_string(out.excluded) + " of " +
                      std::to_string(trials) + " trials did not converge");

  std::sort(maxima.begin(), maxima.end());
  size_t idx = static_cast<size_t>(std::ceil(cfg.calibration_quantile * maxima.size()));
  idx = std::min(std::max<size_t>(idx, 1), maxima.size()) - 1;
  out.epsilon = cfg.calibration_safety * maxima[idx];
  return out;
}

nlohmann::json LocationVerdict::to_json() const {
  const char* kind_s = "";
  switch (kind) {
    case Kind::Branch: kind_s = "branch"; break;
    case Kind::FirstBranch: kind_s = "first_branch"; break;
    case Kind::DirectBranch: kind_s = "direct_branch"; break;
    case Kind::NoFault: kind_s = "no_fault"; break;
    case Kind::NotFoundInSubgraph: kind_s = "not_found_in_subgraph"; break;
  }
  nlohmann::json j{{"kind", kind_s},
                   {"branch", branch},
                   {"subgraph", subgraph},
                   {"tie", tie},
                   {"no_crossing", no_crossing},
                   {"subgraph_wmr", subgraph_wmr},
                   {"path_wmr", path_wmr},
                   {"threshold", threshold_used},
                   {"step_one_ms", step_one_ms},
                   {"step_two_ms", step_two_ms}};
  nlohmann::json hyp = nlohmann::json::array();
  for (const auto& [e, w] : hypothesis_wmr) hyp.push_back({{"branch", e}, {"wmr", w}});
  j["hypothesis_wmr"] = hyp;
  return j;
}

std::string LocationVerdict::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Branch: os << "fault at branch " << branch; break;
    case Kind::FirstBranch: os << "fault at first branch " << branch; break;
    case Kind::DirectBranch: os << "fault at direct branch " << branch; break;
    case Kind::NoFault: os << "no anomalous subgraph"; break;
    case Kind::NotFoundInSubgraph:
      os << "subgraph " << subgraph << " anomalous but no path crossing";
      break;
  }
  if (kind == Kind::Branch || kind == Kind::FirstBranch)
    os << " (subgraph " << subgraph << ")";
  return os.str();
}

}  // namespace faultloc
