#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cgca/autoencoder.hpp"
#include "cgca/data.hpp"
#include "cgca/infusion.hpp"
#include "cgca/kernel.hpp"
#include "cgca/loss.hpp"
#include "cgca/net.hpp"

namespace cgca {

/// Every knob of the pipeline. Defaults are the published values; see
/// desk_config() for the small profile used on a single CPU.
struct TrainConfig {
  std::uint64_t seed = 0;

  // autoencoder
  int latent_dim = 32;
  int feature_dim = 32;
  int levels = 3;
  std::vector<int> encoder_hidden{32, 32, 32, 32};
  int decoder_hidden = 64;
  int decoder_blocks = 2;
  FieldMode mode = FieldMode::Signed;
  double beta = 0.001;
  int ae_epochs = 200;
  double ae_lr = 5e-4;
  double ae_lr_floor = 1.0;  // cosine decay to ae_lr * floor over the run; 1 keeps it constant
  std::size_t ae_queries = 0;  // queries per shape and step, 0 = all

  // transition kernel
  std::vector<int> kernel_hidden{64, 64};
  bool conditioned = false;
  int radius = 2;
  Metric metric = Metric::L1;
  double gamma = 0.01;
  double alpha0 = 0.1;
  double alpha1 = 0.005;
  double sigma_base = 1.0;
  double sigma_decay = 0.01;
  int kernel_epochs = 100;
  double kernel_lr = 5e-4;
  int batch_size = 1;
  int max_steps = 0;  // 0 = default_max_steps
  int probe_every = 0;  // finite-difference gradient probe period in epochs, 0 = off

  // sampling and evaluation
  int steps = 15;
  int mode_steps = 5;
  int completions = 5;
  int upsample = 4;
  double tau = 0.5;

  NeighborhoodSpec neighborhood() const { return {radius, metric}; }
  AlphaSchedule alpha() const { return {alpha0, alpha1}; }
  SigmaSchedule sigma() const { return {sigma_base, sigma_decay}; }
  AutoencoderSpec autoencoder_spec() const;
  KernelModel kernel_model() const;
  EmulateOptions emulate_options() const;
  GenerateOptions generate_options() const;
};

/// Small profile that trains end to end in minutes on one core: K = 8,
/// faster infusion (saturation at t = 9), fewer epochs and evaluation at u = 2.
TrainConfig desk_config();

/// Desk-scale corpus: R = 32, five kinds, min_rate 0.5.
CorpusSpec desk_corpus();

struct AeEpochLog {
  int epoch = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double regularizer = 0.0;
};

struct AeResult {
  ParamStore params;
  std::vector<AeEpochLog> log;
};

/// Adam on mean |d_hat - clamp(d/eps)| + beta * mean |z| over the training
/// split. Throws NonFiniteLoss, and TrainingDiverged when the last epoch is
/// worse than the first.
AeResult train_autoencoder(const TrainConfig& config, const Dataset& dataset);

/// Clamped-distance MAE of the autoencoder on the given shapes' query pairs.
double autoencoder_mae(const ParamStore& params, const Autoencoder& ae, const Dataset& dataset,
                       const std::vector<std::size_t>& shapes);

struct KernelLogRow {
  int epoch = 0;
  int sample = 0;
  int t = 0;
  double occupancy = 0.0;  // L_o / |N(s^t)|
  double latent = 0.0;     // L_z / |N(s^t)|
  double total = 0.0;      // L_t / |N(s^t)|
  double elbo = 0.0;       // chain bound, repeated on each row of the chain
};

struct ProbeLog {
  int epoch = 0;
  double max_rel_error = 0.0;
};

struct KernelResult {
  ParamStore params;
  std::vector<KernelLogRow> log;
  std::vector<ProbeLog> probes;

  /// Mean normalized L_t per epoch.
  std::vector<double> epoch_means() const;
};

/// Training pair for the kernel: s0 from the partial cloud, x from encoding
/// the complete shape's query pairs.
struct KernelSample {
  SparseState s0;
  SparseState x;
};

std::vector<KernelSample> kernel_samples(const TrainConfig& config, const Dataset& dataset,
                                         const ParamStore& ae_params, const std::vector<std::size_t>& shapes);

/// Sum over the chain of L_t / |N(s^t)|, with the final step scored by
/// final_step_loss. Predictions are recomputed from the recorded states.
/// With accumulate set, parameter gradients are added to params.
double chain_loss(ParamStore& params, const KernelModel& model, const InfusionChain& chain, const SparseState& s0,
                  const SparseState& x, const TrainConfig& config, bool accumulate);

/// Compares accumulated analytic gradients with central differences on
/// `entries` random scalars; returns the largest relative error.
double probe_kernel_gradient(ParamStore& params, const KernelModel& model, const InfusionChain& chain,
                             const SparseState& s0, const SparseState& x, const TrainConfig& config, int entries,
                             Engine& rng, double h = 1e-5);

/// Full-sequence infusion training; `ae_params` is read only.
KernelResult train_kernel(const TrainConfig& config, const Dataset& dataset, const ParamStore& ae_params);

/// Freshly initialised kernel parameters, as used before training.
ParamStore initial_kernel_params(const TrainConfig& config);

struct Completion {
  SparseState state;
  PointList points;
  bool died = false;
};

/// Runs generate from the encoded partial cloud and extracts test points from
/// the decoded field. A chain that dies yields the input's voxel centres.
Completion complete_shape(const TrainConfig& config, const ParamStore& kernel_params, const ParamStore& ae_params,
                          const GridSpec& grid, const PointList& partial, std::uint64_t input_id, int completion_index,
                          std::vector<SparseState>* trace = nullptr);

struct EvalRow {
  std::size_t input_id = 0;
  double min_cd = 0.0;
  double avg_cd = 0.0;
  double tmd = 0.0;
  double uhd = 0.0;
  double mmd_component = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mmd = 0.0;
  double mean_min_cd = 0.0;
  double mean_tmd = 0.0;
};

/// Completes every listed input `config.completions` times. TMD is 0 for a
/// single completion; mmd_component is the input's best Chamfer distance.
EvalReport evaluate_checkpoint(const TrainConfig& config, const ParamStore& kernel_params,
                               const ParamStore& ae_params, const Dataset& dataset,
                               const std::vector<std::size_t>& inputs);

void write_ae_log(std::ostream& os, const std::vector<AeEpochLog>& log);
void write_kernel_log(std::ostream& os, const std::vector<KernelLogRow>& log);
void write_eval_report(std::ostream& os, const EvalReport& report);

}  // namespace cgca
