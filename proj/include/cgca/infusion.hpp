#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "cgca/grid.hpp"
#include "cgca/kernel.hpp"

namespace cgca {

/// alpha^t = min(slope * t + start, 1).
struct AlphaSchedule {
  double start = 0.1;
  double slope = 0.005;

  double operator()(int t) const { return std::clamp(slope * t + start, 0.0, 1.0); }
  /// First t with alpha^t == 1.
  int saturation_step() const;
};

/// Infusion kernel parameters over N(s^t): the mixture of p_theta with the
/// G_x indicator and the ground-truth codes.
struct InfusionOutput {
  GridSpec grid;
  std::vector<Coord> cells;
  Eigen::VectorXd lambda;       // exact mixture, never clamped
  Eigen::MatrixXd mu;
  Eigen::VectorXd target_occupancy;  // 1[c in G_x(s^t)]
  Eigen::MatrixXd target_code;       // z^x_c, zero off x
  double alpha = 0.0;
  int step = 0;
};

InfusionOutput infusion_params(const TransitionOutput& out, const SparseState& state, const SparseState& x,
                               double alpha, const NeighborhoodSpec& spec);

SparseState sample_infusion(const InfusionOutput& inf, double sigma, ChainRng& rng);

struct SequenceStep {
  SparseState state;  // s^t
  TransitionOutput out;
  InfusionOutput inf;
  PredictTape tape;
  double sigma = 0.0;
};

struct InfusionChain {
  std::vector<SequenceStep> steps;  // one per transition t = 0..T-1
  SparseState final_state;          // s^T
};

struct EmulateOptions {
  AlphaSchedule alpha{};
  SigmaSchedule sigma{};
  NeighborhoodSpec neighborhood{};
  bool conditioned = false;
  bool keep_tapes = false;
  /// Replace s^T by x when occupancies match, so codes are exact as well.
  bool snap_final = true;
};

/// s^{t+1} ~ q^t(. | s^t, x) for t = 0..T-1, keeping every prediction.
InfusionChain emulate_sequence(const ParamStore& params, const KernelModel& model, const SparseState& s0,
                               const SparseState& x, int steps, const EmulateOptions& options, ChainRng& rng);

/// Runs until the chain is saturated and the next state is exactly x, i.e.
/// the last step has alpha = 1 and G_x(s^{T-1}) = occupancy(x). Throws
/// SequenceNotConverged when max_steps is exceeded.
InfusionChain emulate_to_target(const ParamStore& params, const KernelModel& model, const SparseState& s0,
                                const SparseState& x, int max_steps, const EmulateOptions& options, ChainRng& rng);

struct ConvergenceReport {
  bool converged = false;
  int steps = 0;  // t at which occupancy(s^t) == occupancy(x)
  std::vector<int> distance_trace;  // max over x of min distance to s^t, per t from saturation
};

/// Default bound: saturation step + 4 * grid diagonal / r.
int default_max_steps(const AlphaSchedule& alpha, const GridSpec& grid, const NeighborhoodSpec& spec);

/// Deterministic alpha = 1 recursion s^{t+1} = G_x(s^t) started at the
/// saturation step; reports the first t with occupancy(s^t) = occupancy(x).
ConvergenceReport verify_convergence(const SparseState& s0, const SparseState& x, const NeighborhoodSpec& spec,
                                     const AlphaSchedule& alpha, int max_steps);

}  // namespace cgca
