#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace faultloc {

using Complex = std::complex<double>;
using NodeId = int;
using BranchId = std::string;

using Vec3c = Eigen::Vector3cd;
using Mat3 = Eigen::Matrix3d;
using Mat3c = Eigen::Matrix3cd;

enum class Phase : int { A = 0, B = 1, C = 2 };

constexpr std::array<Phase, 3> kPhases{Phase::A, Phase::B, Phase::C};

inline char phase_letter(Phase p) { return "abc"[static_cast<int>(p)]; }

/// Set of phases present at a node or branch.
struct PhaseMask {
  uint8_t bits = 0;

  static PhaseMask all() { return PhaseMask{0b111}; }
  static PhaseMask none() { return PhaseMask{0}; }

  static PhaseMask from_string(const std::string& s) {
    PhaseMask m;
    for (char c : s) {
      switch (c) {
        case 'a': m.bits |= 1; break;
        case 'b': m.bits |= 2; break;
        case 'c': m.bits |= 4; break;
        default:
          throw std::invalid_argument("invalid phase letter '" + std::string(1, c) + "'");
      }
    }
    return m;
  }

  bool has(Phase p) const { return bits & (1u << static_cast<int>(p)); }
  void set(Phase p) { bits |= (1u << static_cast<int>(p)); }
  int count() const {
    int n = 0;
    for (Phase p : kPhases) n += has(p) ? 1 : 0;
    return n;
  }
  bool empty() const { return bits == 0; }
  bool subset_of(PhaseMask other) const { return (bits & ~other.bits) == 0; }
  PhaseMask intersect(PhaseMask other) const { return PhaseMask{static_cast<uint8_t>(bits & other.bits)}; }

  std::string to_string() const {
    std::string s;
    for (Phase p : kPhases)
      if (has(p)) s.push_back(phase_letter(p));
    return s;
  }

  bool operator==(const PhaseMask&) const = default;
};

/// Nominal positive-sequence unit phasor for a phase (a at 0, b at -120, c at +120 degrees).
inline Complex nominal_unit_phasor(Phase p) {
  constexpr double kTwoPiOver3 = 2.0943951023931953;
  switch (p) {
    case Phase::A: return {1.0, 0.0};
    case Phase::B: return std::polar(1.0, -kTwoPiOver3);
    case Phase::C: return std::polar(1.0, kTwoPiOver3);
  }
  return {1.0, 0.0};
}

struct FeederError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// splitmix64 step; used to derive independent per-trial RNG seeds.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0) {
  return splitmix64(splitmix64(master ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

}  // namespace faultloc
