#include "cgca/infusion.hpp"

#include <cmath>
#include <limits>

namespace cgca {

int AlphaSchedule::saturation_step() const {
  if (!(slope > 0.0)) fail(ErrorCode::InvalidArgument, "alpha slope must be positive");
  if (start >= 1.0) return 0;
  int t = static_cast<int>(std::ceil((1.0 - start) / slope));
  while ((*this)(t) < 1.0) ++t;
  while (t > 0 && (*this)(t - 1) >= 1.0) --t;
  return t;
}

InfusionOutput infusion_params(const TransitionOutput& out, const SparseState& state, const SparseState& x,
                               double alpha, const NeighborhoodSpec& spec) {
  if (x.empty()) fail(ErrorCode::EmptyState, "infusion target is empty");
  if (out.cells != neighborhood(state, spec)) fail(ErrorCode::DomainMismatch, "prediction domain is not N(s^t)");
  if (x.latent_dim() != out.latent_dim()) fail(ErrorCode::ShapeMismatch, "target K differs from prediction K");

  InfusionOutput inf;
  inf.grid = out.grid;
  inf.cells = out.cells;
  inf.alpha = alpha;
  inf.step = out.step;
  const auto n = static_cast<Eigen::Index>(out.cells.size());
  inf.target_occupancy = Eigen::VectorXd::Zero(n);
  inf.target_code = Eigen::MatrixXd::Zero(n, out.latent_dim());
  for (const Coord& c : nearest_target_cells(state, x, spec)) {
    if (auto row = out.row_of(c)) inf.target_occupancy[*row] = 1.0;
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    if (const auto* z = x.find(out.cells[static_cast<std::size_t>(r)])) inf.target_code.row(r) = z->transpose();
  }
  inf.lambda = (1.0 - alpha) * out.lambda + alpha * inf.target_occupancy;
  inf.mu = (1.0 - alpha) * out.mu + alpha * inf.target_code;
  return inf;
}

SparseState sample_infusion(const InfusionOutput& inf, double sigma, ChainRng& rng) {
  return sample_cells(inf.grid, inf.cells, inf.lambda, inf.mu, sigma, rng);
}

namespace {

SequenceStep run_step(const ParamStore& params, const KernelModel& model, const SparseState& state,
                      const SparseState& s0, const SparseState& x, int t, const EmulateOptions& options) {
  SequenceStep step;
  step.state = state;
  step.sigma = options.sigma(t);
  const SparseState* cond = options.conditioned ? &s0 : nullptr;
  step.out = predict(params, model, state, cond, options.neighborhood, t, options.keep_tapes ? &step.tape : nullptr);
  step.inf = infusion_params(step.out, state, x, options.alpha(t), options.neighborhood);
  return step;
}

void snap(InfusionChain& chain, const SparseState& x, const EmulateOptions& options) {
  if (options.snap_final && chain.final_state.same_occupancy(x)) chain.final_state = x;
}

}  // namespace

InfusionChain emulate_sequence(const ParamStore& params, const KernelModel& model, const SparseState& s0,
                               const SparseState& x, int steps, const EmulateOptions& options, ChainRng& rng) {
  if (steps < 1) fail(ErrorCode::InvalidArgument, "emulation needs T >= 1");
  if (s0.empty() || x.empty()) fail(ErrorCode::EmptyState, "emulation needs non-empty s0 and x");
  InfusionChain chain;
  SparseState state = s0;
  for (int t = 0; t < steps; ++t) {
    SequenceStep step = run_step(params, model, state, s0, x, t, options);
    state = sample_infusion(step.inf, step.sigma, rng);
    chain.steps.push_back(std::move(step));
    if (state.empty()) fail(ErrorCode::ChainDied, "infusion chain died at step " + std::to_string(t + 1), t + 1);
  }
  chain.final_state = std::move(state);
  snap(chain, x, options);
  return chain;
}

InfusionChain emulate_to_target(const ParamStore& params, const KernelModel& model, const SparseState& s0,
                                const SparseState& x, int max_steps, const EmulateOptions& options, ChainRng& rng) {
  if (s0.empty() || x.empty()) fail(ErrorCode::EmptyState, "emulation needs non-empty s0 and x");
  InfusionChain chain;
  SparseState state = s0;
  for (int t = 0; t < max_steps; ++t) {
    SequenceStep step = run_step(params, model, state, s0, x, t, options);
    const bool last = step.inf.alpha >= 1.0 &&
                      static_cast<std::size_t>(step.inf.target_occupancy.sum()) == x.size() &&
                      [&] {
                        for (const auto& [key, z] : x.storage()) {
                          auto row = step.out.row_of(unpack(key));
                          if (!row || step.inf.target_occupancy[*row] != 1.0) return false;
                        }
                        return true;
                      }();
    state = sample_infusion(step.inf, step.sigma, rng);
    chain.steps.push_back(std::move(step));
    if (state.empty()) fail(ErrorCode::ChainDied, "infusion chain died at step " + std::to_string(t + 1), t + 1);
    if (last) {
      chain.final_state = std::move(state);
      snap(chain, x, options);
      return chain;
    }
  }
  fail(ErrorCode::SequenceNotConverged, "infusion chain did not reach x within " + std::to_string(max_steps));
}

int default_max_steps(const AlphaSchedule& alpha, const GridSpec& grid, const NeighborhoodSpec& spec) {
  const double diagonal = std::sqrt(3.0) * grid.resolution;
  return alpha.saturation_step() + static_cast<int>(std::ceil(4.0 * diagonal / spec.radius));
}

namespace {

int max_min_distance(const SparseState& s, const SparseState& x, Metric metric) {
  int worst = 0;
  const auto cells = s.coords();
  for (const auto& [key, z] : x.storage()) {
    const Coord goal = unpack(key);
    int best = std::numeric_limits<int>::max();
    for (const Coord& c : cells) best = std::min(best, distance(c, goal, metric));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

ConvergenceReport verify_convergence(const SparseState& s0, const SparseState& x, const NeighborhoodSpec& spec,
                                     const AlphaSchedule& alpha, int max_steps) {
  if (s0.empty() || x.empty()) fail(ErrorCode::EmptyState, "convergence check needs non-empty s0 and x");
  ConvergenceReport report;
  int t = alpha.saturation_step();
  SparseState state = s0;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(s0.latent_dim());
  while (t <= max_steps) {
    report.distance_trace.push_back(max_min_distance(state, x, spec.metric));
    if (state.same_occupancy(x)) {
      report.converged = true;
      report.steps = t;
      return report;
    }
    SparseState next(s0.latent_dim(), s0.grid());
    for (const Coord& c : nearest_target_cells(state, x, spec)) next.set(c, zero);
    state = std::move(next);
    ++t;
  }
  report.steps = t;
  return report;
}

}  // namespace cgca
