#include "cgca/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "cgca/autoencoder.hpp"
#include "cgca/data.hpp"
#include "cgca/infusion.hpp"
#include "cgca/kernel.hpp"
#include "cgca/loss.hpp"

namespace cgca {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

double uniform(Engine& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(Engine& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Eigen::MatrixXd random_matrix(Engine& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

/// Random compact blob of cells around the grid centre.
SparseState random_blob(Engine& rng, const GridSpec& grid, int K, int cells, double code_scale) {
  SparseState s(K, grid);
  const int mid = grid.resolution / 2;
  Coord c{mid, mid, mid};
  while (static_cast<int>(s.size()) < cells) {
    s.set(c, random_matrix(rng, K, 1, code_scale).col(0));
    c = c + Coord{uniform_int(rng, -1, 1), uniform_int(rng, -1, 1), uniform_int(rng, -1, 1)};
    if (!grid.in_bounds(c)) c = {mid, mid, mid};
  }
  return s;
}

/// Forward-mode dual number for exact first derivatives.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};
Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
Dual operator*(double s, Dual a) { return {s * a.v, s * a.d}; }
Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }

/// Running maximum that keeps NaN, so a NaN error can never pass a check.
void track(double& worst, double value) {
  if (!(value <= worst)) worst = value;
}

}  // namespace

std::vector<CheckResult> verify_convergence_suite(const VerifyOptions& options) {
  std::vector<CheckResult> results;
  const GridSpec grid{};
  const NeighborhoodSpec spec{};
  const AlphaSchedule alpha{};
  const int bound = default_max_steps(alpha, grid, spec);
  for (ShapeKind kind : kAllShapeKinds) {
    Engine rng(derive_seed(options.seed, "verify-convergence", static_cast<std::uint64_t>(kind)));
    int converged = 0;
    int worst = 0;
    for (int n = 0; n < options.convergence_pairs; ++n) {
      const ToyShape shape = random_shape(kind, uniform(rng, 0.25, 0.45), rng);
      const SparseState x = voxelize(sample_surface(shape, 3000, rng), grid, 1);
      SparseState s0(1, grid);
      const int seeds = uniform_int(rng, 1, 4);
      for (int c = 0; c < seeds; ++c) {
        s0.set({uniform_int(rng, 0, grid.resolution - 1), uniform_int(rng, 0, grid.resolution - 1),
                uniform_int(rng, 0, grid.resolution - 1)},
               Eigen::VectorXd::Zero(1));
      }
      const ConvergenceReport report = verify_convergence(s0, x, spec, alpha, bound);
      if (report.converged) ++converged;
      worst = std::max(worst, report.steps);
    }
    results.push_back({"infusion", "convergence[" + std::string(to_string(kind)) + "]",
                       converged == options.convergence_pairs,
                       std::to_string(converged) + "/" + std::to_string(options.convergence_pairs) +
                           " reached x, latest T=" + std::to_string(worst) + ", bound " + std::to_string(bound)});
  }
  return results;
}

std::vector<CheckResult> verify_kl_suite(const VerifyOptions& options) {
  Engine rng(derive_seed(options.seed, "verify-kl"));
  double worst = 0.0;
  for (int trial = 0; trial < options.kl_trials; ++trial) {
    const int n = uniform_int(rng, 1, 3);
    const int K = uniform_int(rng, 1, 4);
    const double sigma = uniform(rng, 0.05, 1.0);
    TransitionOutput out;
    InfusionOutput inf;
    for (int c = 0; c < n; ++c) out.cells.push_back({c, 0, 0});
    inf.cells = out.cells;
    out.lambda.resize(n);
    inf.lambda.resize(n);
    for (int c = 0; c < n; ++c) {
      out.lambda[c] = uniform(rng, kLambdaMin, 1.0 - kLambdaMin);
      const int pick = uniform_int(rng, 0, 5);
      inf.lambda[c] = pick == 0 ? 0.0 : pick == 1 ? 1.0 : uniform(rng, 0.0, 1.0);
    }
    out.mu = random_matrix(rng, n, K, 1.0);
    inf.mu = random_matrix(rng, n, K, 1.0);
    const double closed = transition_loss(out, inf, 1.0, sigma).total;

    // Joint KL over every occupancy configuration; the latent block of a
    // configuration is one Gaussian over all occupied cells.
    double joint = 0.0;
    for (int config = 0; config < (1 << n); ++config) {
      double q = 1.0, p = 1.0;
      std::vector<int> occupied;
      for (int c = 0; c < n; ++c) {
        const bool on = (config >> c) & 1;
        q *= on ? inf.lambda[c] : 1.0 - inf.lambda[c];
        p *= on ? out.lambda[c] : 1.0 - out.lambda[c];
        if (on) occupied.push_back(c);
      }
      if (q == 0.0) continue;
      double latent = 0.0;
      if (!occupied.empty()) {
        const auto d = static_cast<Eigen::Index>(occupied.size()) * K;
        Eigen::VectorXd mq(d), mp(d);
        for (std::size_t o = 0; o < occupied.size(); ++o) {
          mq.segment(static_cast<Eigen::Index>(o) * K, K) = inf.mu.row(occupied[o]).transpose();
          mp.segment(static_cast<Eigen::Index>(o) * K, K) = out.mu.row(occupied[o]).transpose();
        }
        const Eigen::MatrixXd cov = sigma * sigma * Eigen::MatrixXd::Identity(d, d);
        const Eigen::LDLT<Eigen::MatrixXd> solver(cov);
        const Eigen::VectorXd diff = mp - mq;
        const double trace = solver.solve(cov).trace();
        const double logdet_ratio = 0.0;  // identical covariances
        latent = 0.5 * (trace + diff.dot(solver.solve(diff)) - static_cast<double>(d) + logdet_ratio);
      }
      joint += q * (std::log(q / p) + latent);
    }
    track(worst, std::abs(joint - closed));
  }
  return {{"loss", "kl-factorization", worst < 1e-10,
           std::to_string(options.kl_trials) + " parameterizations, max |closed - enumerated| = " + fmt(worst)}};
}

std::vector<CheckResult> verify_final_suite(const VerifyOptions& options) {
  Engine rng(derive_seed(options.seed, "verify-final"));
  const GridSpec grid{};
  double worst_grad = 0.0, worst_offset = 0.0;
  for (int trial = 0; trial < options.final_trials; ++trial) {
    const int K = uniform_int(rng, 1, 6);
    const double sigma = uniform(rng, 0.05, 0.2);
    const SparseState s = random_blob(rng, grid, K, uniform_int(rng, 1, 4), 1.0);
    TransitionOutput out;
    out.grid = grid;
    out.cells = neighborhood(s, {});
    const auto n = static_cast<Eigen::Index>(out.cells.size());
    out.lambda.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) out.lambda[r] = uniform(rng, 0.01, 0.99);
    out.mu = random_matrix(rng, n, K, 1.0);
    SparseState x(K, grid);
    for (const Coord& c : out.cells)
      if (uniform(rng, 0.0, 1.0) < 0.3) x.set(c, random_matrix(rng, K, 1, 1.0).col(0));
    if (x.empty()) x.set(out.cells.front(), random_matrix(rng, K, 1, 1.0).col(0));

    LossGradients grads;
    const double l_last = final_step_loss(out, x, 1.0, sigma, 1.0, &grads).total;

    // Negative reweighted final log-likelihood, with the Dirac mass at z = 0
    // replaced by the indicator.
    auto neg_final = [&](Eigen::Index var_row, int var_col) {
      Dual total;
      for (Eigen::Index r = 0; r < n; ++r) {
        Dual lam{out.lambda[r], var_row == r && var_col == 0 ? 1.0 : 0.0};
        const Eigen::VectorXd* z = x.find(out.cells[static_cast<std::size_t>(r)]);
        if (!z) {
          total = total - log(Dual{1.0, 0.0} - lam);
          continue;
        }
        Dual sq;
        for (int k = 0; k < K; ++k) {
          Dual mu{out.mu(r, k), var_row == r && var_col == k + 1 ? 1.0 : 0.0};
          const Dual diff = Dual{(*z)[k], 0.0} - mu;
          sq = sq + diff * diff;
        }
        // log of lam * exp(-sq / 2 sigma^2) * (2 pi sigma)^(-K/2), expanded so
        // that narrow Gaussians do not underflow.
        const Dual log_density = (-1.0 / (2.0 * sigma * sigma)) * sq -
                                 Dual{0.5 * K * std::log(2.0 * std::numbers::pi * sigma), 0.0};
        total = total - (log(lam) + log_density);
      }
      return total;
    };
    for (Eigen::Index r = 0; r < n; ++r) {
      track(worst_grad, std::abs(neg_final(r, 0).d - grads.lambda[r]));
      for (int k = 0; k < K; ++k) track(worst_grad, std::abs(neg_final(r, k + 1).d - grads.mu(r, k)));
    }
    const double per_cell = (neg_final(-1, -1).v - l_last) / static_cast<double>(x.size());
    track(worst_offset, std::abs(per_cell - final_likelihood_offset(K, sigma)));
  }
  return {{"loss", "final-step-gradient", worst_grad < 1e-8,
           std::to_string(options.final_trials) + " problems, max |grad diff| = " + fmt(worst_grad)},
          {"loss", "final-step-offset", worst_offset < 1e-10, "max |offset - K/2 log(2 pi sigma)| = " + fmt(worst_offset)}};
}

namespace {

/// Zero biases put ReLU inputs of featureless rows exactly on the kink, where
/// central differences see a one-sided slope. Checks run at a generic point.
void jitter_biases(ParamStore& params, Engine& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& [name, p] : params.mutable_entries()) {
    if (name.size() < 2 || name.compare(name.size() - 2, 2, ".b") != 0) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = u(rng);
  }
}

struct GradientCheck {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
};

/// Compares analytic gradients with central differences on three random
/// entries of every parameter tensor; the error of an entry is
/// |a - n| / max(|a|, |n|, 1e-6). ReLU, max pooling and the L1 loss are
/// piecewise linear, so an entry whose central difference at h disagrees
/// with the one at h/10 straddles a kink and is replaced by a fresh draw.
template <typename LossFn>
GradientCheck gradient_error(ParamStore& params, LossFn&& loss, Engine& rng, double h) {
  params.zero_grad();
  loss(true);
  std::map<std::string, Eigen::MatrixXd> analytic;
  for (const auto& [name, p] : params.entries()) analytic[name] = p.grad;
  params.zero_grad();

  auto central = [&](const std::string& name, Eigen::Index i, double step) {
    const double keep = params.value(name)(i);
    params.mutable_value(name)(i) = keep + step;
    const double up = loss(false);
    params.mutable_value(name)(i) = keep - step;
    const double down = loss(false);
    params.mutable_value(name)(i) = keep;
    return (up - down) / (2.0 * step);
  };

  GradientCheck out;
  for (const auto& [name, grad] : analytic) {
    const Eigen::Index size = grad.size();
    int accepted = 0;
    for (int attempt = 0; attempt < 12 && accepted < 3; ++attempt) {
      const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(0, size - 1)(rng);
      const double coarse = central(name, i, h);
      const double fine = central(name, i, h / 10.0);
      if (std::abs(coarse - fine) > 1e-8 + 1e-6 * std::max(std::abs(coarse), std::abs(fine))) {
        ++out.skipped;
        continue;
      }
      const double a = grad(i);
      track(out.max_rel_error, std::abs(a - coarse) / std::max({std::abs(a), std::abs(coarse), 1e-6}));
      ++out.checked;
      ++accepted;
    }
  }
  return out;
}

}  // namespace

std::vector<CheckResult> verify_gradient_suite(const VerifyOptions& options) {
  const GridSpec grid{};
  const double h = 1e-5;
  GradientCheck kernel_total, ae_total;
  auto merge = [](GradientCheck& total, const GradientCheck& part) {
    track(total.max_rel_error, part.max_rel_error);
    total.checked += part.checked;
    total.skipped += part.skipped;
  };
  for (int seed = 0; seed < options.gradient_seeds; ++seed) {
    Engine rng(derive_seed(options.seed, "verify-gradients", static_cast<std::uint64_t>(seed)));
    const int K = 4;
    const bool conditioned = seed % 2 == 1;
    const KernelModel model(K, conditioned, {16, 16});
    ParamStore params;
    model.init(params, rng);
    jitter_biases(params, rng);
    const SparseState s = random_blob(rng, grid, K, 6, 0.5);
    const SparseState s0 = random_blob(rng, grid, K, 3, 0.5);
    const SparseState x = random_blob(rng, grid, K, 10, 0.5);
    const double sigma = 0.3, gamma = 0.5;
    const TransitionOutput base = predict(params, model, s, &s0, {}, 0);
    const InfusionOutput inf = infusion_params(base, s, x, uniform(rng, 0.1, 0.9), {});
    auto kernel_loss = [&](bool backward) {
      PredictTape tape;
      const TransitionOutput out = predict(params, model, s, &s0, {}, 0, backward ? &tape : nullptr);
      LossGradients grads;
      const double value = transition_loss(out, inf, gamma, sigma, &grads).total;
      if (backward) predict_backward(params, model, tape, grads.lambda, grads.mu);
      return value;
    };
    merge(kernel_total, gradient_error(params, kernel_loss, rng, h));

    AutoencoderSpec spec;
    spec.latent_dim = K;
    spec.feature_dim = 8;
    spec.encoder_hidden = {8, 8};
    spec.decoder_hidden = 8;
    spec.mode = seed % 2 == 0 ? FieldMode::Signed : FieldMode::Unsigned;
    const Autoencoder ae(spec);
    ParamStore ae_params;
    ae.init(ae_params, rng);
    jitter_biases(ae_params, rng);
    const ToyShape shape = make_sphere(Vec3::Zero(), 0.2);
    const auto pairs = sample_query_pairs(shape, 150, 0.03, spec.mode, rng);
    std::vector<Vec3> queries;
    Eigen::VectorXd targets(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      queries.push_back(pairs[q].p);
      targets[static_cast<Eigen::Index>(q)] = pairs[q].d;
    }
    auto ae_loss = [&](bool backward) {
      EncodeTape et;
      const SparseState z = encode(ae_params, ae, pairs, grid, &et);
      PyramidTape pt;
      const FeaturePyramid pyramid = build_pyramid(ae_params, ae, z, &pt);
      DecodeTape dt;
      const Eigen::VectorXd decoded = decode_batch(ae_params, ae, pyramid, queries, &dt);
      const AutoencoderLoss loss = autoencoder_loss(decoded, targets, z, 0.1, grid.voxel_size, spec.mode);
      if (backward) {
        encode_backward(ae_params, ae, et,
                        decode_backward(ae_params, ae, pyramid, pt, dt, loss.decoded_grad) + loss.code_grad);
      }
      return loss.value;
    };
    merge(ae_total, gradient_error(ae_params, ae_loss, rng, h));
  }
  // A check passes when every compared entry is within 1e-4 and kinks did
  // not crowd out the comparison.
  auto result = [&](const char* module, const char* invariant, const GradientCheck& c) {
    const bool ok = c.max_rel_error < 1e-4 && c.checked > 0 && c.skipped * 4 <= c.checked + c.skipped;
    return CheckResult{module, invariant, ok,
                       std::to_string(options.gradient_seeds) + " seeds, " + std::to_string(c.checked) +
                           " entries, max rel error " + fmt(c.max_rel_error) + ", " + std::to_string(c.skipped) +
                           " kink draws skipped"};
  };
  return {result("kernel", "transition-loss-gradient", kernel_total),
          result("autoencoder", "autoencoder-loss-gradient", ae_total)};
}

std::vector<CheckResult> run_verification(const VerifyOptions& options, const std::vector<std::string>& suites) {
  std::vector<CheckResult> all;
  for (const std::string& suite : suites) {
    std::vector<CheckResult> part;
    if (suite == "convergence") part = verify_convergence_suite(options);
    else if (suite == "kl") part = verify_kl_suite(options);
    else if (suite == "final") part = verify_final_suite(options);
    else if (suite == "gradients") part = verify_gradient_suite(options);
    else fail(ErrorCode::InvalidArgument, "unknown verification suite '" + suite + "'");
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

void print_results(std::ostream& os, const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.module << '/' << r.invariant << ": " << r.detail << '\n';
  }
}

}  // namespace cgca
