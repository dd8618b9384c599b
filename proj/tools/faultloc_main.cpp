// Command-line front end: simulate faults, locate them from measurement
// dumps, calibrate thresholds, and run Monte Carlo campaigns.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "faultloc/campaign.hpp"
#include "faultloc/simulator.hpp"

using namespace faultloc;
using nlohmann::json;

namespace {

int run_simulate(const std::string& feeder_path, const std::string& scenario_path,
                 uint64_t seed, const NoiseProfile& noise, bool noiseless,
                 const std::string& out_prefix, const std::string& state_csv) {
  FeederModel model = FeederModel::load_file(feeder_path);
  std::optional<FaultScenario> scenario;
  if (!scenario_path.empty()) scenario = FaultScenario::load_file(scenario_path);

  TruePhasorState state = run_powerflow(model, scenario ? &*scenario : nullptr);
  MeasurementSet exact = measure_true(state, model);
  MeasurementSet out = noiseless ? synthesize(exact, NoiseProfile::noiseless(), seed)
                                 : synthesize(exact, noise, seed);
  std::string meas_path = out_prefix.empty() ? "measurements.csv" : out_prefix;
  write_measurements_csv(out, meas_path);
  std::cout << "wrote " << out.entries.size() << " measurements to " << meas_path << "\n";
  if (!state_csv.empty()) {
    write_state_csv(state, state_csv);
    std::cout << "wrote solved state to " << state_csv << "\n";
  }
  return 0;
}

int run_locate(const std::string& feeder_path, const std::string& meas_path, double threshold,
               bool refine, const std::string& out_path, const std::string& format) {
  FeederModel model = FeederModel::load_file(feeder_path);
  SubgraphPartition part = partition(model);
  MeasurementSet meas = read_measurements_csv(meas_path);
  LocatorConfig cfg;
  cfg.threshold = threshold;
  cfg.refine_laterals = refine;
  LocationVerdict v = locate(model, part, meas, cfg);
  std::cout << v.describe() << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot write verdict: " + out_path);
    if (format == "json")
      out << v.to_json().dump(2) << "\n";
    else
      out << v.to_json().dump() << "\n";
  }
  return 0;
}

int run_calibrate(const std::string& feeder_path, int trials, uint64_t seed,
                  const NoiseProfile& noise, const std::string& out_path) {
  FeederModel model = FeederModel::load_file(feeder_path);
  SubgraphPartition part = partition(model);
  LocatorConfig cfg;
  CalibrationResult cal = calibrate_threshold(model, part, noise, trials, seed, cfg);
  std::cout << "epsilon " << cal.epsilon << " (" << cal.trials - cal.excluded << "/"
            << cal.trials << " trials)\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << json{{"epsilon", cal.epsilon}, {"trials", cal.trials}, {"excluded", cal.excluded}}
               .dump(2)
        << "\n";
  }
  return 0;
}

int run_campaign_cmd(const std::string& campaign_path, uint64_t seed_override, bool has_seed,
                     double threshold_override, bool has_threshold, int trials_override,
                     const std::string& out_path, const std::string& format) {
  Campaign c = Campaign::load_file(campaign_path);
  if (has_seed) c.seed = seed_override;
  if (has_threshold) {
    c.locator.threshold = threshold_override;
    c.locator.threshold_mode = ThresholdMode::Fixed;
  }
  if (trials_override > 0) c.trials = trials_override;
  AccuracyReport report = run_campaign(c);
  Tally t = report.total();
  std::cout << "cells " << report.cells.size() << ", trials " << t.nt << ": alpha "
            << t.alpha() << ", beta " << t.beta() << ", failures " << t.n_failed
            << ", max error " << t.max_hops << " branches\n";
  std::string path = out_path.empty() ? "report.csv" : out_path;
  if (format == "json") {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write report: " + path);
    out << report.to_json(false).dump(2) << "\n";
  } else {
    report.write_csv(path);
    report.write_timing_csv(path + ".timing.csv");
  }
  std::cout << "wrote report to " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faulted-line location on radial distribution feeders"};
  app.require_subcommand(1);

  std::string feeder, scenario, meas, campaign_path, out, state_csv, format = "csv";
  uint64_t seed = 1;
  double threshold = 500.0;
  int trials = 0;
  bool noiseless = false, no_refine = false;
  NoiseProfile noise;

  auto add_noise_opts = [&](CLI::App* cmd) {
    cmd->add_option("--pmu-mag-err", noise.pmu_mag_max_err, "PMU magnitude max error (fraction)");
    cmd->add_option("--pmu-ang-err", noise.pmu_ang_max_err, "PMU angle max error (rad)");
    cmd->add_option("--pseudo-err", noise.pseudo_max_err, "pseudo-measurement max error");
    cmd->add_option("--dg-err", noise.dg_meter_max_err, "DG meter max error");
  };

  CLI::App* sim = app.add_subcommand("simulate", "solve a fault scenario and dump measurements");
  sim->add_option("--feeder", feeder, "feeder document (json)")->required();
  sim->add_option("--scenario", scenario, "fault scenario (json); omit for no fault");
  sim->add_option("--seed", seed, "noise seed");
  sim->add_flag("--noiseless", noiseless, "emit exact measurements");
  sim->add_option("--out", out, "measurement csv path");
  sim->add_option("--state-out", state_csv, "optional solved-state csv");
  add_noise_opts(sim);

  CLI::App* loc = app.add_subcommand("locate", "locate the fault from a measurement dump");
  loc->add_option("--feeder", feeder, "feeder document (json)")->required();
  loc->add_option("--measurements", meas, "measurement csv")->required();
  loc->add_option("--threshold", threshold, "identification threshold");
  loc->add_flag("--no-refine", no_refine, "skip lateral refinement");
  loc->add_option("--out", out, "verdict output path");
  loc->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  CLI::App* cal = app.add_subcommand("calibrate", "calibrate the threshold from no-fault noise");
  cal->add_option("--feeder", feeder, "feeder document (json)")->required();
  cal->add_option("--trials", trials, "Monte Carlo trials")->default_val(500);
  cal->add_option("--seed", seed, "noise seed");
  cal->add_option("--out", out, "calibration output json");
  add_noise_opts(cal);

  CLI::App* camp = app.add_subcommand("campaign", "run a Monte Carlo accuracy campaign");
  camp->add_option("--campaign", campaign_path, "campaign document (json)")->required();
  CLI::Option* seed_opt = camp->add_option("--seed", seed, "override campaign seed");
  CLI::Option* thr_opt = camp->add_option("--threshold", threshold, "override fixed threshold");
  camp->add_option("--trials", trials, "override trials per cell");
  camp->add_option("--out", out, "report path");
  camp->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
    if (sim->parsed())
      return run_simulate(feeder, scenario, seed, noise, noiseless, out, state_csv);
    if (loc->parsed()) return run_locate(feeder, meas, threshold, !no_refine, out, format);
    if (cal->parsed()) return run_calibrate(feeder, trials, seed, noise, out);
    if (camp->parsed())
      return run_campaign_cmd(campaign_path, seed, seed_opt->count() > 0, threshold,
                              thr_opt->count() > 0, trials, out, format);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
