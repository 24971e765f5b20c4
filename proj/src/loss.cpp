#include "cgca/loss.hpp"

#include <algorithm>

namespace cgca {

namespace {

LossBreakdown kl_loss(const TransitionOutput& out, const Eigen::VectorXd& lambda_q, const Eigen::MatrixXd& mu_q,
                      double gamma, double sigma, LossGradients* grads) {
  if (!(sigma > 0.0)) fail(ErrorCode::DomainError, "sigma must be positive");
  const Eigen::Index n = out.lambda.size();
  LossBreakdown loss;
  loss.per_cell.resize(n);
  if (grads) {
    grads->lambda.resize(n);
    grads->mu.resize(n, out.mu.cols());
  }
  const double inv_var = 1.0 / (sigma * sigma);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double q = lambda_q[r];
    const double p = out.lambda[r];
    const double ko = bernoulli_kl(q, p);
    const double kz = gaussian_kl_same_var(mu_q.row(r), out.mu.row(r), sigma);
    loss.occupancy += ko;
    loss.latent += q * kz;
    loss.per_cell[r] = ko + gamma * q * kz;
    if (grads) {
      grads->lambda[r] = -q / p + (1.0 - q) / (1.0 - p);
      grads->mu.row(r) = gamma * q * inv_var * (out.mu.row(r) - mu_q.row(r));
    }
  }
  loss.total = loss.occupancy + gamma * loss.latent;
  return loss;
}

}  // namespace

LossBreakdown transition_loss(const TransitionOutput& out, const InfusionOutput& inf, double gamma, double sigma,
                              LossGradients* grads) {
  if (out.cells != inf.cells) fail(ErrorCode::DomainMismatch, "transition and infusion domains differ");
  return kl_loss(out, inf.lambda, inf.mu, gamma, sigma, grads);
}

LossBreakdown final_step_loss(const TransitionOutput& out, const SparseState& x, double alpha, double sigma,
                              double gamma, LossGradients* grads) {
  if (alpha < 1.0) fail(ErrorCode::NotSaturated, "final-step loss needs alpha = 1, got " + std::to_string(alpha));
  if (x.latent_dim() != out.latent_dim()) fail(ErrorCode::ShapeMismatch, "target K differs from prediction K");
  const auto n = static_cast<Eigen::Index>(out.cells.size());
  Eigen::VectorXd occupancy = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd code = Eigen::MatrixXd::Zero(n, out.latent_dim());
  for (Eigen::Index r = 0; r < n; ++r) {
    if (const auto* z = x.find(out.cells[static_cast<std::size_t>(r)])) {
      occupancy[r] = 1.0;
      code.row(r) = z->transpose();
    }
  }
  return kl_loss(out, occupancy, code, gamma, sigma, grads);
}

double clamp_target(double d, double eps, FieldMode mode) {
  return std::clamp(d / eps, mode == FieldMode::Signed ? -1.0 : 0.0, 1.0);
}

AutoencoderLoss autoencoder_loss(const Eigen::VectorXd& decoded, const Eigen::VectorXd& target_distance,
                                 const SparseState& state, double beta, double eps, FieldMode mode) {
  if (decoded.size() == 0) fail(ErrorCode::EmptyQuerySet, "autoencoder loss needs queries");
  if (decoded.size() != target_distance.size()) fail(ErrorCode::ShapeMismatch, "decoded and target counts differ");
  if (beta < 0.0) fail(ErrorCode::DomainError, "beta must be non-negative");
  AutoencoderLoss loss;
  const auto nq = static_cast<double>(decoded.size());
  loss.decoded_grad.resize(decoded.size());
  for (Eigen::Index q = 0; q < decoded.size(); ++q) {
    const double diff = decoded[q] - clamp_target(target_distance[q], eps, mode);
    loss.reconstruction += std::abs(diff);
    loss.decoded_grad[q] = (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0) / nq;
  }
  loss.reconstruction /= nq;

  loss.code_grad = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(state.size()), state.latent_dim());
  if (!state.empty()) {
    const auto nc = static_cast<double>(state.size());
    Eigen::Index r = 0;
    for (const auto& [key, z] : state.storage()) {
      const double norm = z.norm();
      loss.regularizer += norm;
      if (norm > 0.0) loss.code_grad.row(r) = (beta / (nc * norm)) * z.transpose();
      ++r;
    }
    loss.regularizer /= nc;
  }
  loss.value = loss.reconstruction + beta * loss.regularizer;
  return loss;
}

ElboReport elbo_lower_bound(const InfusionChain& chain, const SparseState& x) {
  if (chain.steps.empty() || !chain.final_state.same_occupancy(x)) {
    fail(ErrorCode::SequenceNotConverged, "chain does not end at x");
  }
  ElboReport report;
  const std::size_t T = chain.steps.size();
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const auto& s = chain.steps[t];
    report.kl_sum += transition_loss(s.out, s.inf, 1.0, s.sigma).total;
  }
  const auto& last = chain.steps.back();
  report.final_term = final_step_loss(last.out, x, last.inf.alpha, last.sigma, 1.0).total;
  report.offset = static_cast<double>(x.size()) * final_likelihood_offset(x.latent_dim(), last.sigma);
  report.bound = -report.kl_sum - report.final_term;
  return report;
}

}  // namespace cgca
