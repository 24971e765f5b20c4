#include "cgca/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include "cgca/metrics.hpp"
#include "cgca/surface.hpp"

namespace cgca {

AutoencoderSpec TrainConfig::autoencoder_spec() const {
  AutoencoderSpec s;
  s.latent_dim = latent_dim;
  s.feature_dim = feature_dim;
  s.levels = levels;
  s.encoder_hidden = encoder_hidden;
  s.decoder_hidden = decoder_hidden;
  s.decoder_blocks = decoder_blocks;
  s.mode = mode;
  return s;
}

KernelModel TrainConfig::kernel_model() const { return KernelModel(latent_dim, conditioned, kernel_hidden); }

EmulateOptions TrainConfig::emulate_options() const {
  EmulateOptions o;
  o.alpha = alpha();
  o.sigma = sigma();
  o.neighborhood = neighborhood();
  o.conditioned = conditioned;
  return o;
}

GenerateOptions TrainConfig::generate_options() const {
  GenerateOptions o;
  o.steps = steps;
  o.mode_steps = mode_steps;
  o.sigma = sigma();
  o.neighborhood = neighborhood();
  o.conditioned = conditioned;
  return o;
}

TrainConfig desk_config() {
  TrainConfig c;
  c.latent_dim = 8;
  c.feature_dim = 32;
  c.encoder_hidden = {64, 64};
  c.decoder_hidden = 64;
  c.ae_epochs = 150;
  c.ae_lr = 3e-3;
  c.ae_lr_floor = 0.05;
  c.ae_queries = 1024;
  c.alpha1 = 0.1;
  c.kernel_epochs = 15;
  c.kernel_lr = 1e-3;
  c.steps = 10;
  c.mode_steps = 3;
  c.upsample = 2;
  return c;
}

CorpusSpec desk_corpus() {
  CorpusSpec s;
  s.train_per_kind = 16;
  s.test_per_kind = 1;
  s.scale = 0.35;
  s.surface_points = 2048;
  s.query_pairs = 4096;
  s.band_sd = 0.03;
  s.partial = PartialSpec{0.2, 0.5, 4, 0.0};
  return s;
}

namespace {

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) fail(ErrorCode::NonFiniteLoss, what + " is not finite");
}

std::vector<std::size_t> shuffled(std::size_t n, Engine& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// One forward/backward pass of the autoencoder on a shape.
AutoencoderLoss ae_pass(ParamStore& params, const Autoencoder& ae, const GridSpec& grid,
                        const std::vector<PointSample>& pairs, std::span<const std::size_t> queries, double beta,
                        bool backward) {
  EncodeTape encode_tape;
  const SparseState z = encode(params, ae, pairs, grid, &encode_tape);
  PyramidTape pyramid_tape;
  const FeaturePyramid pyramid = build_pyramid(params, ae, z, &pyramid_tape);
  std::vector<Vec3> positions;
  Eigen::VectorXd targets(static_cast<Eigen::Index>(queries.size()));
  positions.reserve(queries.size());
  for (std::size_t n = 0; n < queries.size(); ++n) {
    positions.push_back(pairs[queries[n]].p);
    targets[static_cast<Eigen::Index>(n)] = pairs[queries[n]].d;
  }
  DecodeTape decode_tape;
  const Eigen::VectorXd decoded = decode_batch(params, ae, pyramid, positions, &decode_tape);
  AutoencoderLoss loss = autoencoder_loss(decoded, targets, z, beta, grid.voxel_size, ae.spec().mode);
  if (backward) {
    const Eigen::MatrixXd code_grad =
        decode_backward(params, ae, pyramid, pyramid_tape, decode_tape, loss.decoded_grad) + loss.code_grad;
    encode_backward(params, ae, encode_tape, code_grad);
  }
  return loss;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

AeResult train_autoencoder(const TrainConfig& config, const Dataset& dataset) {
  const auto train = dataset.split(false);
  if (train.empty()) fail(ErrorCode::InvalidArgument, "dataset has no training shapes");
  for (std::size_t n : train)
    if (dataset.shapes[n].pairs.empty()) fail(ErrorCode::EmptyQuerySet, "shape " + std::to_string(n) + " has no query pairs");

  const Autoencoder ae(config.autoencoder_spec());
  AeResult result;
  Engine init_rng(derive_seed(config.seed, "ae-init"));
  ae.init(result.params, init_rng);
  Adam adam;

  for (int epoch = 0; epoch < config.ae_epochs; ++epoch) {
    Engine rng(derive_seed(config.seed, "ae-epoch", static_cast<std::uint64_t>(epoch)));
    AeEpochLog row;
    row.epoch = epoch;
    const double progress = config.ae_epochs > 1 ? static_cast<double>(epoch) / (config.ae_epochs - 1) : 0.0;
    const double lr =
        config.ae_lr * (config.ae_lr_floor + (1.0 - config.ae_lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    for (std::size_t n : shuffled(train.size(), rng)) {
      const auto& pairs = dataset.shapes[train[n]].pairs;
      std::vector<std::size_t> queries = all_indices(pairs.size());
      if (config.ae_queries > 0 && config.ae_queries < pairs.size()) {
        std::shuffle(queries.begin(), queries.end(), rng);
        queries.resize(config.ae_queries);
        std::sort(queries.begin(), queries.end());
      }
      const AutoencoderLoss loss = ae_pass(result.params, ae, dataset.grid, pairs, queries, config.beta, true);
      require_finite(loss.value, "autoencoder loss");
      row.loss += loss.value;
      row.reconstruction += loss.reconstruction;
      row.regularizer += loss.regularizer;
      adam.step(result.params, lr);
    }
    const auto count = static_cast<double>(train.size());
    row.loss /= count;
    row.reconstruction /= count;
    row.regularizer /= count;
    result.log.push_back(row);
  }
  if (result.log.size() > 1 && result.log.back().loss > result.log.front().loss) {
    fail(ErrorCode::TrainingDiverged, "autoencoder loss rose from " + std::to_string(result.log.front().loss) + " to " +
                                          std::to_string(result.log.back().loss));
  }
  return result;
}

double autoencoder_mae(const ParamStore& params, const Autoencoder& ae, const Dataset& dataset,
                       const std::vector<std::size_t>& shapes) {
  if (shapes.empty()) fail(ErrorCode::InvalidArgument, "no shapes to score");
  ParamStore scratch = params;
  double sum = 0.0;
  for (std::size_t n : shapes) {
    const auto& pairs = dataset.shapes.at(n).pairs;
    const auto queries = all_indices(pairs.size());
    sum += ae_pass(scratch, ae, dataset.grid, pairs, queries, 0.0, false).reconstruction;
  }
  return sum / static_cast<double>(shapes.size());
}

std::vector<KernelSample> kernel_samples(const TrainConfig& config, const Dataset& dataset,
                                         const ParamStore& ae_params, const std::vector<std::size_t>& shapes) {
  const Autoencoder ae(config.autoencoder_spec());
  std::vector<KernelSample> samples;
  for (std::size_t n : shapes) {
    const auto& rec = dataset.shapes.at(n);
    KernelSample s;
    s.x = encode(ae_params, ae, rec.pairs, dataset.grid);
    ChainRng unused(config.seed, n);
    s.s0 = initial_state(rec.partial, dataset.grid, config.latent_dim, InitMode::Encoded, unused, {&ae_params, &ae});
    samples.push_back(std::move(s));
  }
  return samples;
}

namespace {

std::vector<LossBreakdown> chain_terms(ParamStore& params, const KernelModel& model, const InfusionChain& chain,
                                       const SparseState& s0, const SparseState& x, const TrainConfig& config,
                                       bool accumulate) {
  std::vector<LossBreakdown> terms;
  const SparseState* cond = config.conditioned ? &s0 : nullptr;
  const std::size_t T = chain.steps.size();
  for (std::size_t t = 0; t < T; ++t) {
    const SequenceStep& step = chain.steps[t];
    PredictTape tape;
    const TransitionOutput out = predict(params, model, step.state, cond, config.neighborhood(),
                                         static_cast<int>(t), accumulate ? &tape : nullptr);
    LossGradients grads;
    LossBreakdown loss = t + 1 < T ? transition_loss(out, step.inf, config.gamma, step.sigma, &grads)
                                   : final_step_loss(out, x, step.inf.alpha, step.sigma, config.gamma, &grads);
    const double scale = 1.0 / static_cast<double>(out.cells.size());
    loss.occupancy *= scale;
    loss.latent *= scale;
    loss.total *= scale;
    require_finite(loss.total, "transition loss at t=" + std::to_string(t));
    if (accumulate) predict_backward(params, model, tape, scale * grads.lambda, scale * grads.mu);
    terms.push_back(std::move(loss));
  }
  return terms;
}

}  // namespace

double chain_loss(ParamStore& params, const KernelModel& model, const InfusionChain& chain, const SparseState& s0,
                  const SparseState& x, const TrainConfig& config, bool accumulate) {
  double total = 0.0;
  for (const auto& term : chain_terms(params, model, chain, s0, x, config, accumulate)) total += term.total;
  return total;
}

double probe_kernel_gradient(ParamStore& params, const KernelModel& model, const InfusionChain& chain,
                             const SparseState& s0, const SparseState& x, const TrainConfig& config, int entries,
                             Engine& rng, double h) {
  params.zero_grad();
  chain_loss(params, model, chain, s0, x, config, true);
  std::vector<std::pair<std::string, Eigen::Index>> picks;
  std::vector<std::string> names;
  for (const auto& [name, p] : params.entries()) names.push_back(name);
  for (int e = 0; e < entries; ++e) {
    const std::string& name = names[std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng)];
    const Eigen::Index size = params.value(name).size();
    picks.emplace_back(name, std::uniform_int_distribution<Eigen::Index>(0, size - 1)(rng));
  }
  double worst = 0.0;
  for (const auto& [name, index] : picks) {
    const double analytic = params.grad(name)(index);
    const double original = params.value(name)(index);
    params.mutable_value(name)(index) = original + h;
    const double up = chain_loss(params, model, chain, s0, x, config, false);
    params.mutable_value(name)(index) = original - h;
    const double down = chain_loss(params, model, chain, s0, x, config, false);
    params.mutable_value(name)(index) = original;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale > 1e-8) worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  params.zero_grad();
  return worst;
}

ParamStore initial_kernel_params(const TrainConfig& config) {
  ParamStore params;
  Engine rng(derive_seed(config.seed, "kernel-init"));
  config.kernel_model().init(params, rng);
  return params;
}

std::vector<double> KernelResult::epoch_means() const {
  std::vector<double> sums, counts;
  for (const auto& row : log) {
    const auto e = static_cast<std::size_t>(row.epoch);
    if (sums.size() <= e) {
      sums.resize(e + 1, 0.0);
      counts.resize(e + 1, 0.0);
    }
    sums[e] += row.total;
    counts[e] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] /= std::max(counts[e], 1.0);
  return sums;
}

KernelResult train_kernel(const TrainConfig& config, const Dataset& dataset, const ParamStore& ae_params) {
  const auto train = dataset.split(false);
  if (train.empty()) fail(ErrorCode::InvalidArgument, "dataset has no training shapes");
  if (config.batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  const std::vector<KernelSample> samples = kernel_samples(config, dataset, ae_params, train);
  const KernelModel model = config.kernel_model();
  const EmulateOptions options = config.emulate_options();
  const int max_steps =
      config.max_steps > 0 ? config.max_steps : default_max_steps(options.alpha, dataset.grid, options.neighborhood);

  KernelResult result;
  result.params = initial_kernel_params(config);
  Adam adam;
  for (int epoch = 0; epoch < config.kernel_epochs; ++epoch) {
    Engine order_rng(derive_seed(config.seed, "kernel-order", static_cast<std::uint64_t>(epoch)));
    const auto order = shuffled(samples.size(), order_rng);
    int in_batch = 0;
    for (std::size_t slot = 0; slot < order.size(); ++slot) {
      const std::size_t n = order[slot];
      const KernelSample& sample = samples[n];
      ChainRng rng(derive_seed(config.seed, "kernel-chain", static_cast<std::uint64_t>(epoch)), n);
      const InfusionChain chain = emulate_to_target(result.params, model, sample.s0, sample.x, max_steps, options, rng);

      if (config.probe_every > 0 && slot == 0 && epoch % config.probe_every == 0) {
        Engine probe_rng(derive_seed(config.seed, "kernel-probe", static_cast<std::uint64_t>(epoch)));
        ParamStore probe_params = result.params;
        result.probes.push_back(
            {epoch, probe_kernel_gradient(probe_params, model, chain, sample.s0, sample.x, config, 10, probe_rng)});
      }

      const auto terms = chain_terms(result.params, model, chain, sample.s0, sample.x, config, true);
      const double elbo = elbo_lower_bound(chain, sample.x).bound;
      for (std::size_t t = 0; t < terms.size(); ++t) {
        result.log.push_back({epoch, static_cast<int>(n), static_cast<int>(t), terms[t].occupancy, terms[t].latent,
                              terms[t].total, elbo});
      }
      if (++in_batch == config.batch_size || slot + 1 == order.size()) {
        if (in_batch > 1) {
          for (auto& [name, p] : result.params.mutable_entries()) p.grad /= static_cast<double>(in_batch);
        }
        adam.step(result.params, config.kernel_lr);
        in_batch = 0;
      }
    }
  }
  return result;
}

Completion complete_shape(const TrainConfig& config, const ParamStore& kernel_params, const ParamStore& ae_params,
                          const GridSpec& grid, const PointList& partial, std::uint64_t input_id, int completion_index,
                          std::vector<SparseState>* trace) {
  const Autoencoder ae(config.autoencoder_spec());
  const KernelModel model = config.kernel_model();
  ChainRng rng(derive_seed(config.seed, "complete", input_id), static_cast<std::uint64_t>(completion_index));
  const SparseState s0 = initial_state(partial, grid, config.latent_dim, InitMode::Encoded, rng, {&ae_params, &ae});
  Completion result;
  try {
    result.state = generate(kernel_params, model, s0, config.generate_options(), rng, trace);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ChainDied) throw;
    result.died = true;
    result.state = s0;
  }
  const ScalarField field = dense_query(ae_params, ae, result.state, config.upsample);
  result.points = extract_points(field, config.tau);
  if (result.points.empty()) result.points = cell_centers(result.state);
  return result;
}

EvalReport evaluate_checkpoint(const TrainConfig& config, const ParamStore& kernel_params,
                               const ParamStore& ae_params, const Dataset& dataset,
                               const std::vector<std::size_t>& inputs) {
  if (config.completions < 1) fail(ErrorCode::InvalidArgument, "need at least one completion per input");
  EvalReport report;
  for (std::size_t id : inputs) {
    const auto& rec = dataset.shapes.at(id);
    std::vector<PointCloud> clouds;
    for (int k = 0; k < config.completions; ++k) {
      clouds.push_back(complete_shape(config, kernel_params, ae_params, dataset.grid, rec.partial, id, k).points);
    }
    EvalRow row;
    row.input_id = id;
    row.min_cd = std::numeric_limits<double>::infinity();
    for (const auto& c : clouds) {
      const double cd = chamfer(c, rec.complete);
      row.min_cd = std::min(row.min_cd, cd);
      row.avg_cd += cd;
      row.uhd += uhd(rec.partial, c);
    }
    const auto n = static_cast<double>(clouds.size());
    row.avg_cd /= n;
    row.uhd /= n;
    row.tmd = clouds.size() >= 2 ? tmd(clouds) : 0.0;
    row.mmd_component = row.min_cd;
    report.rows.push_back(row);
    report.mmd += row.mmd_component;
    report.mean_min_cd += row.min_cd;
    report.mean_tmd += row.tmd;
  }
  if (!report.rows.empty()) {
    const auto n = static_cast<double>(report.rows.size());
    report.mmd /= n;
    report.mean_min_cd /= n;
    report.mean_tmd /= n;
  }
  return report;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_ae_log(std::ostream& os, const std::vector<AeEpochLog>& log) {
  os << "epoch,loss,reconstruction,regularizer\n";
  for (const auto& r : log) os << r.epoch << ',' << num(r.loss) << ',' << num(r.reconstruction) << ',' << num(r.regularizer) << '\n';
}

void write_kernel_log(std::ostream& os, const std::vector<KernelLogRow>& log) {
  os << "epoch,step,t,L_o,L_z,L_t,elbo\n";
  for (const auto& r : log) {
    os << r.epoch << ',' << r.sample << ',' << r.t << ',' << num(r.occupancy) << ',' << num(r.latent) << ','
       << num(r.total) << ',' << num(r.elbo) << '\n';
  }
}

void write_eval_report(std::ostream& os, const EvalReport& report) {
  os << "input_id,min_cd,avg_cd,tmd,uhd,mmd_component\n";
  for (const auto& r : report.rows) {
    os << r.input_id << ',' << num(r.min_cd) << ',' << num(r.avg_cd) << ',' << num(r.tmd) << ',' << num(r.uhd) << ','
       << num(r.mmd_component) << '\n';
  }
}

}  // namespace cgca
