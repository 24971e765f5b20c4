#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cgca/autoencoder.hpp"
#include "cgca/common.hpp"
#include "cgca/grid.hpp"
#include "cgca/net.hpp"

namespace cgca {

inline constexpr double kLambdaMin = 1e-6;

/// sigma^t = 10^(-base - decay * t).
struct SigmaSchedule {
  double base = 1.0;
  double decay = 0.01;

  double operator()(int t) const { return std::pow(10.0, -base - decay * t); }
};

/// Per-cell occupancy probability and latent mean over N(s^t).
struct TransitionOutput {
  GridSpec grid;
  std::vector<Coord> cells;  // sorted; equals neighborhood(s^t)
  Eigen::VectorXd lambda;    // clamped to [kLambdaMin, 1 - kLambdaMin]
  Eigen::MatrixXd mu;        // rows follow cells
  int step = 0;

  int latent_dim() const { return static_cast<int>(mu.cols()); }
  std::optional<Eigen::Index> row_of(const Coord& c) const;
};

/// Transition network p_theta: features of an L-inf radius-2 window around
/// each candidate cell go through an MLP with K+1 outputs (logit, mean).
class KernelModel {
 public:
  KernelModel(int latent_dim, bool conditioned, std::vector<int> hidden = {64, 64},
              NeighborhoodSpec window = {2, Metric::Linf});

  int latent_dim() const { return latent_dim_; }
  bool conditioned() const { return conditioned_; }
  const Mlp& net() const { return net_; }
  const std::vector<Coord>& window() const { return window_; }
  const std::string& first_weight() const { return net_.first_weight(); }

  void init(ParamStore& params, Engine& rng) const { net_.init(params, rng); }
  void init_zero(ParamStore& params) const { net_.init_zero(params); }

 private:
  int latent_dim_;
  bool conditioned_;
  std::vector<Coord> window_;
  Mlp net_;
};

struct PredictTape {
  WindowGather gather;
  MlpTape mlp;
  Eigen::VectorXd unclamped;  // logistic(logit) before clamping
};

TransitionOutput predict(const ParamStore& params, const KernelModel& model, const SparseState& state,
                         const SparseState* cond, const NeighborhoodSpec& spec, int step = 0,
                         PredictTape* tape = nullptr);

/// Chains d(loss)/d(lambda) and d(loss)/d(mu) through the clamp and the
/// logistic into the kernel parameters.
void predict_backward(ParamStore& params, const KernelModel& model, const PredictTape& tape,
                      const Eigen::VectorXd& lambda_grad, const Eigen::MatrixXd& mu_grad);

/// Independent per-cell draws: occupied with probability lambda, then
/// z = mu + sigma * xi. Occupancy and latent draws use separate streams.
SparseState sample_cells(const GridSpec& grid, std::span<const Coord> cells, const Eigen::VectorXd& lambda,
                         const Eigen::MatrixXd& mu, double sigma, ChainRng& rng);

SparseState sample_transition(const TransitionOutput& out, double sigma, ChainRng& rng);

/// Keeps cells with lambda > 0.5 and sets z = mu.
SparseState mode_seek_step(const TransitionOutput& out);

struct GenerateOptions {
  int steps = 20;        // T stochastic transitions
  int mode_steps = 5;    // T' mode-seeking transitions
  SigmaSchedule sigma{};
  NeighborhoodSpec neighborhood{};
  bool conditioned = false;
};

/// T stochastic transitions followed by T' mode-seeking transitions, each
/// re-predicting from the current state. Throws ChainDied with the step index
/// when a state becomes empty. When trace is given it receives s^0..s^{T+T'}.
SparseState generate(const ParamStore& params, const KernelModel& model, const SparseState& s0,
                     const GenerateOptions& options, ChainRng& rng, std::vector<SparseState>* trace = nullptr);

enum class InitMode { Random, Encoded };

struct EncoderRef {
  const ParamStore* params = nullptr;
  const Autoencoder* model = nullptr;
};

/// Initial state from a partial point cloud: occupancy from voxelize, codes
/// either ~ N(0, sigma_init^2 I) or from the encoder applied to {(p, 0)}.
SparseState initial_state(std::span<const Vec3> points, const GridSpec& grid, int latent_dim, InitMode mode,
                          ChainRng& rng, EncoderRef encoder = {}, double sigma_init = 1.0);

/// One `step_<t>.csv` state dump per entry.
void write_trace(const std::string& directory, std::span<const SparseState> trace);

}  // namespace cgca
