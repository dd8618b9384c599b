#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "faultloc/partition.hpp"
#include "faultloc/simulator.hpp"

namespace faultloc {

enum class MeasKind {
  VoltageRect,     // V_rect: PMU voltage phasor, rectangular parts
  CurrentRect,     // I_rect: PMU branch current phasor at the metering end
  PseudoPQ,        // PQ_pseudo: load or DG power, (P, Q) pair
  EquivCurrent,    // I_equiv: pseudo power converted by the current voltage
  BoundaryCurrent  // I_sub: combined equivalent at a far-PMU boundary node
};

std::string to_string(MeasKind k);
MeasKind meas_kind_from_string(const std::string& s);

/// Origin of a pseudo power value; DG meters are more accurate than load
/// forecasts, so the two are perturbed separately.
enum class PseudoSource { Load, Dg };

struct Measurement {
  MeasKind kind = MeasKind::VoltageRect;
  NodeId node = 0;       // metering node (V, pseudo) or current metering end
  BranchId branch;       // set for current kinds
  PseudoSource source = PseudoSource::Load;
  Phase phase = Phase::A;
  double a = 0.0, b = 0.0;          // (re, im) or (P, Q)
  double var_a = 0.0, var_b = 0.0;

  std::string location() const;  // e.g. "7", "6-7@7", "9#dg"
};

struct MeasurementSet {
  std::vector<Measurement> entries;
  std::string scenario_id;
  uint64_t seed = 0;

  void append(Measurement m);
  const Measurement* find_voltage(NodeId node, Phase p) const;
  const Measurement* find_current(const BranchId& branch, NodeId at_node = -1,
                                  Phase p = Phase::A) const;
};

struct NoiseProfile {
  double pmu_mag_max_err = 0.01;   // fraction of the true magnitude
  double pmu_ang_max_err = 0.01;   // radians
  double pseudo_max_err = 0.20;    // fraction of the true value
  double dg_meter_max_err = 0.03;  // fraction of the true value
  double sigma_rule = 3.0;         // max error = sigma_rule * sigma

  static NoiseProfile noiseless();
};

/// Variance floor (p.u.^2) applied to every synthesized measurement so that
/// zero-valued channels never get infinite weight.
constexpr double kVarianceFloor = 1e-8;

/// Extracts the exact (noise-free) measurement set from a converged state:
/// PMU voltage/current phasors and actual load/DG powers.
MeasurementSet measure_true(const TruePhasorState& state, const FeederModel& model);

/// Perturbs an exact measurement set: PMU phasors in polar form, pseudo
/// powers per component; variances assigned by first-order propagation.
/// Deterministic for a given seed.
MeasurementSet synthesize(const MeasurementSet& exact, const NoiseProfile& profile,
                          uint64_t seed);

/// Complex current value with independent rectangular variances.
struct CurrentEstimate {
  Complex value;
  double var_re = 0.0, var_im = 0.0;

  CurrentEstimate& operator+=(const CurrentEstimate& o) {
    value += o.value;
    var_re += o.var_re;
    var_im += o.var_im;
    return *this;
  }
};

/// Equivalent current of a pseudo power at voltage v: [(P+jQ)/v]*, with the
/// power variances propagated at fixed v. Throws EstimationError when |v| is
/// degenerate (< 1e-3 p.u.).
CurrentEstimate to_equivalent_current(Complex s, double var_p, double var_q, Complex v);

/// Boundary equivalent at a far-PMU node: pseudo equivalent plus the
/// measured downstream current, variances added.
CurrentEstimate boundary_equivalent(const CurrentEstimate& pseudo_eq, Complex measured_i,
                                    double var_re, double var_im);

/// Initial current injections of a subgraph, all evaluated at the root
/// voltage: interior nodes get the plain equivalent, the far node adds the
/// measured downstream currents.
std::map<NodeId, std::array<std::optional<CurrentEstimate>, 3>> initial_equivalents(
    const FeederModel& model, const Subgraph& g, const MeasurementSet& meas,
    const Vec3c& v_root);

void write_measurements_csv(const MeasurementSet& set, const std::string& path);
MeasurementSet read_measurements_csv(const std::string& path);

}  // namespace faultloc
