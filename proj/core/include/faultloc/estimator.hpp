#pragma once

#include <optional>

#include <Eigen/Sparse>

#include "faultloc/measurement.hpp"
#include "faultloc/paths.hpp"

namespace faultloc {

/// Kind of measurement channel (one channel = one complex quantity = two
/// scalar rows).
enum class ChannelType {
  Voltage,    // PMU voltage at a scope node; drop law from the scope root
  Current,    // PMU current of a scope branch, unit rows
  Injection,  // equivalent-current KCL at a node; value refreshed from V_k
  Anchor      // aggregated downstream equivalent pinning a frontier current
};

/// Reference to one pseudo power feeding an equivalent-current conversion.
struct PseudoRef {
  Complex s;       // signed: loads +, DG -
  double var_p = 0.0, var_q = 0.0;
};

struct Channel {
  ChannelType type = ChannelType::Voltage;
  int node = -1;    // scope node index (Voltage/Injection)
  int branch = -1;  // scope branch index (Current/Anchor)
  Phase phase = Phase::A;
  // measured or refreshed value and variances
  Complex z;
  double var_re = kVarianceFloor, var_im = kVarianceFloor;
  // refresh payload for Injection/Anchor channels
  std::vector<PseudoRef> pseudos;
  Complex fixed_part;  // measured boundary currents folded into the value
  double fixed_var_re = 0.0, fixed_var_im = 0.0;
  int eval_node = -1;  // node whose voltage the conversion uses
};

struct ScopeNode {
  NodeId id = -1;  // -1 for the fictitious split node
  PhaseMask phases;
  bool is_root = false;
  int parent_branch = -1;           // scope branch index, -1 at root
  std::vector<int> child_branches;  // scope branch indices, stubs included
};

struct ScopeBranch {
  BranchId id;
  int from = -1, to = -1;  // scope node indices; stubs have to == -1
  Mat3c z = Mat3c::Zero();
  PhaseMask phases;
  bool stub = false;   // current state without a series role in the scope
  int split_part = 0;  // 0 whole, 1 upstream half, 2 downstream half
};

/// Self-contained WLS problem for one scope (subgraph, path, or split
/// hypothesis). Jacobian structure is constant; injection/anchor values are
/// refreshed from the estimated voltages between solves.
struct EstimationProblem {
  int subgraph = 0;
  std::vector<ScopeNode> nodes;     // nodes[0] is the root
  std::vector<ScopeBranch> branches;
  std::vector<Channel> channels;
  std::vector<int> topo;            // node indices, root first

  // state layout: 2 reals per (root phase), then 2 per (branch, phase)
  int n_states = 0;
  std::vector<std::array<int, 3>> branch_state;  // per branch, per phase: col of re, -1 absent
  std::array<int, 3> slack_state{-1, -1, -1};

  int node_index(NodeId id) const;
  int branch_index_of(const BranchId& id, int split_part = 0) const;
  int rows() const { return 2 * static_cast<int>(channels.size()); }
};

/// Row-ordered constant Jacobian and the current weights.
struct JacobianMatrix {
  Eigen::SparseMatrix<double> h;
  Eigen::VectorXd weights;  // 1/variance per row
};

struct WlsConfig {
  double tol = 1e-6;
  int max_iter = 20;
};

struct WlsResult {
  Eigen::VectorXd state;
  double wmr = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::VectorXd residuals;  // z - Hx at the final iterate
  Eigen::VectorXd weights;
  int m = 0, n = 0;
  int dof() const { return m - n; }

  Complex slack_voltage(const EstimationProblem& p, Phase ph) const;
  Complex branch_current(const EstimationProblem& p, const BranchId& id, Phase ph,
                         int split_part = 0) const;
};

/// Scope builders. `fold_far_boundary` folds the measured downstream
/// currents into the far node's injection (the network-equivalence form);
/// otherwise the export currents stay as states with their own rows.
EstimationProblem build_subgraph_problem(const FeederModel& model, const SubgraphPartition& part,
                                         int K, const MeasurementSet& meas);
EstimationProblem build_path_problem(const FeederModel& model, const SubgraphPartition& part,
                                     const PathChain& chain, int s, const MeasurementSet& meas);
EstimationProblem build_split_problem(const FeederModel& model, const SubgraphPartition& part,
                                      int K, const MeasurementSet& meas, const BranchId& edge,
                                      double q);

/// Constant H and current W for a problem.
JacobianMatrix assemble(const EstimationProblem& problem);

/// Branch-current WLS with forward-sweep voltage updates and per-iteration
/// refresh of the equivalent currents. Throws EstimationError when the scope
/// is unobservable.
WlsResult estimate(EstimationProblem& problem, const WlsConfig& config = {});

/// Node voltages implied by a state vector via the drop law, keyed by scope
/// node index.
std::vector<Vec3c> forward_sweep_voltages(const EstimationProblem& problem,
                                          const Eigen::VectorXd& state);

}  // namespace faultloc
