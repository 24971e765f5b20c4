#include "cgca/kernel.hpp"

#include <algorithm>
#include <filesystem>
#include <random>

namespace cgca {

std::optional<Eigen::Index> TransitionOutput::row_of(const Coord& c) const {
  auto it = std::lower_bound(cells.begin(), cells.end(), c);
  if (it == cells.end() || *it != c) return std::nullopt;
  return static_cast<Eigen::Index>(it - cells.begin());
}

KernelModel::KernelModel(int latent_dim, bool conditioned, std::vector<int> hidden, NeighborhoodSpec window)
    : latent_dim_(latent_dim), conditioned_(conditioned), window_(window_offsets(window)) {
  std::vector<int> widths{feature_width(window_.size(), latent_dim, conditioned)};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(latent_dim + 1);
  net_ = Mlp("kernel", MlpSpec{widths, Activation::Relu, Activation::None, 0});
}

namespace {

double logistic(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

}  // namespace

TransitionOutput predict(const ParamStore& params, const KernelModel& model, const SparseState& state,
                         const SparseState* cond, const NeighborhoodSpec& spec, int step, PredictTape* tape) {
  if (state.empty()) fail(ErrorCode::EmptyState, "predict needs a non-empty state");
  if (state.latent_dim() != model.latent_dim()) fail(ErrorCode::ShapeMismatch, "state K differs from kernel K");
  if (model.conditioned() && !cond) fail(ErrorCode::InvalidArgument, "conditioned kernel needs s0");
  if (!model.conditioned()) cond = nullptr;

  TransitionOutput out;
  out.grid = state.grid();
  out.step = step;
  out.cells = neighborhood(state, spec);
  WindowGather gather = gather_window(state, out.cells, model.window(), cond);
  const std::string& w0 = model.first_weight();
  const Eigen::MatrixXd raw = model.net().forward_from_product(params, window_product(gather, params.value(w0)),
                                                               tape ? &tape->mlp : nullptr);
  if (tape) tape->gather = std::move(gather);
  const Eigen::Index n = raw.rows();
  Eigen::VectorXd squashed(n);
  for (Eigen::Index r = 0; r < n; ++r) squashed[r] = logistic(raw(r, 0));
  out.lambda = squashed.cwiseMax(kLambdaMin).cwiseMin(1.0 - kLambdaMin);
  out.mu = raw.rightCols(model.latent_dim());
  if (tape) tape->unclamped = std::move(squashed);
  return out;
}

void predict_backward(ParamStore& params, const KernelModel& model, const PredictTape& tape,
                      const Eigen::VectorXd& lambda_grad, const Eigen::MatrixXd& mu_grad) {
  const Eigen::Index n = tape.unclamped.size();
  if (lambda_grad.size() != n || mu_grad.rows() != n || mu_grad.cols() != model.latent_dim()) {
    fail(ErrorCode::ShapeMismatch, "kernel output gradient shape");
  }
  Eigen::MatrixXd g(n, model.latent_dim() + 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double p = tape.unclamped[r];
    const bool clamped = p < kLambdaMin || p > 1.0 - kLambdaMin;
    g(r, 0) = clamped ? 0.0 : lambda_grad[r] * p * (1.0 - p);
  }
  g.rightCols(model.latent_dim()) = mu_grad;
  const Eigen::MatrixXd first = model.net().backward(params, tape.mlp, g);
  window_product_backward(tape.gather, first, params.grad(model.first_weight()));
}

SparseState sample_cells(const GridSpec& grid, std::span<const Coord> cells, const Eigen::VectorXd& lambda,
                         const Eigen::MatrixXd& mu, double sigma, ChainRng& rng) {
  if (!(sigma > 0.0)) fail(ErrorCode::DomainError, "sigma must be positive");
  const int K = static_cast<int>(mu.cols());
  SparseState next(K, grid);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::VectorXd z(K);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (!(U(rng.occupancy) < lambda[row])) continue;
    for (int d = 0; d < K; ++d) z[d] = mu(row, d) + sigma * N(rng.latent);
    next.set(cells[r], z);
  }
  return next;
}

SparseState sample_transition(const TransitionOutput& out, double sigma, ChainRng& rng) {
  return sample_cells(out.grid, out.cells, out.lambda, out.mu, sigma, rng);
}

SparseState mode_seek_step(const TransitionOutput& out) {
  SparseState next(out.latent_dim(), out.grid);
  for (std::size_t r = 0; r < out.cells.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (out.lambda[row] > 0.5) next.set(out.cells[r], out.mu.row(row).transpose());
  }
  return next;
}

SparseState generate(const ParamStore& params, const KernelModel& model, const SparseState& s0,
                     const GenerateOptions& options, ChainRng& rng, std::vector<SparseState>* trace) {
  if (s0.empty()) fail(ErrorCode::EmptyState, "generation needs a non-empty initial state");
  if (options.steps < 0 || options.mode_steps < 0) fail(ErrorCode::InvalidArgument, "negative step count");
  const SparseState* cond = options.conditioned ? &s0 : nullptr;
  if (trace) {
    trace->clear();
    trace->push_back(s0);
  }
  SparseState state = s0;
  const int total = options.steps + options.mode_steps;
  for (int t = 0; t < total; ++t) {
    const TransitionOutput out = predict(params, model, state, cond, options.neighborhood, t);
    state = t < options.steps ? sample_transition(out, options.sigma(t), rng) : mode_seek_step(out);
    if (state.empty()) fail(ErrorCode::ChainDied, "state became empty at step " + std::to_string(t + 1), t + 1);
    if (trace) trace->push_back(state);
  }
  return state;
}

SparseState initial_state(std::span<const Vec3> points, const GridSpec& grid, int latent_dim, InitMode mode,
                          ChainRng& rng, EncoderRef encoder, double sigma_init) {
  if (points.empty()) fail(ErrorCode::EmptyState, "initial state needs points");
  SparseState state = voxelize(points, grid, latent_dim);
  if (mode == InitMode::Random) {
    std::normal_distribution<double> N(0.0, 1.0);
    Eigen::VectorXd z(latent_dim);
    for (const Coord& c : state.coords()) {
      for (int d = 0; d < latent_dim; ++d) z[d] = sigma_init * N(rng.latent);
      state.set(c, z);
    }
    return state;
  }
  if (!encoder.params || !encoder.model) fail(ErrorCode::InvalidArgument, "encoded initial state needs an encoder");
  if (encoder.model->spec().latent_dim != latent_dim) fail(ErrorCode::ShapeMismatch, "encoder K differs");
  std::vector<PointSample> samples;
  samples.reserve(points.size());
  for (const Vec3& p : points) samples.push_back({p, 0.0});
  return encode(*encoder.params, *encoder.model, samples, grid);
}

void write_trace(const std::string& directory, std::span<const SparseState> trace) {
  std::filesystem::create_directories(directory);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    save_state((std::filesystem::path(directory) / ("step_" + std::to_string(t) + ".csv")).string(), trace[t]);
  }
}

}  // namespace cgca
