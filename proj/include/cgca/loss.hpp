#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "cgca/autoencoder.hpp"
#include "cgca/common.hpp"
#include "cgca/infusion.hpp"
#include "cgca/kernel.hpp"

namespace cgca {

/// KL(Ber(q) || Ber(p)) with 0 log 0 = 0. Requires q in [0,1] and p inside
/// the clamped open interval.
template <typename Scalar>
Scalar bernoulli_kl(Scalar q, Scalar p) {
  const Scalar lo = static_cast<Scalar>(kLambdaMin);
  if (!(q >= Scalar(0) && q <= Scalar(1))) fail(ErrorCode::DomainError, "bernoulli_kl: q outside [0,1]");
  if (!(p >= lo && p <= Scalar(1) - lo)) fail(ErrorCode::DomainError, "bernoulli_kl: p outside clamp range");
  Scalar kl = 0;
  if (q > Scalar(0)) kl += q * std::log(q / p);
  if (q < Scalar(1)) kl += (Scalar(1) - q) * std::log((Scalar(1) - q) / (Scalar(1) - p));
  return kl;
}

/// KL(N(mu_q, sigma^2 I) || N(mu_p, sigma^2 I)) = |mu_q - mu_p|^2 / (2 sigma^2).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar gaussian_kl_same_var(const Eigen::MatrixBase<DerivedA>& mu_q,
                                               const Eigen::MatrixBase<DerivedB>& mu_p,
                                               typename DerivedA::Scalar sigma) {
  if (!(sigma > 0)) fail(ErrorCode::DomainError, "gaussian_kl_same_var: sigma must be positive");
  return (mu_q - mu_p).squaredNorm() / (2 * sigma * sigma);
}

/// Minimization convention: total = occupancy + gamma * latent, both >= 0.
struct LossBreakdown {
  double occupancy = 0.0;  // sum of Bernoulli KLs
  double latent = 0.0;     // sum of lambda_q * Gaussian KL
  double total = 0.0;
  Eigen::VectorXd per_cell;
};

/// d(loss)/d(lambda_theta) and d(loss)/d(mu_theta), rows following the cells.
struct LossGradients {
  Eigen::VectorXd lambda;
  Eigen::MatrixXd mu;
};

/// L_t = sum_c KL(Ber(lambda_q) || Ber(lambda)) + gamma * lambda_q * |mu_q - mu|^2 / (2 sigma^2).
/// The infusion side is a fixed target: gradients flow through p_theta only.
LossBreakdown transition_loss(const TransitionOutput& out, const InfusionOutput& inf, double gamma, double sigma,
                              LossGradients* grads = nullptr);

/// L_{T-1} with the converged targets lambda_q = o^x_c and mu_q = z^x_c.
/// alpha is the infusion rate at T-1 and must be 1.
LossBreakdown final_step_loss(const TransitionOutput& out, const SparseState& x, double alpha, double sigma,
                              double gamma = 1.0, LossGradients* grads = nullptr);

/// K/2 log(2 pi sigma): the per-occupied-cell constant separating L_{T-1}
/// from the reweighted final log-likelihood.
inline double final_likelihood_offset(int latent_dim, double sigma) {
  return 0.5 * latent_dim * std::log(2.0 * std::numbers::pi * sigma);
}

struct AutoencoderLoss {
  double value = 0.0;
  double reconstruction = 0.0;
  double regularizer = 0.0;
  Eigen::VectorXd decoded_grad;
  Eigen::MatrixXd code_grad;  // rows in the state's key order
};

/// mean |d_hat - clamp(d / eps)| + beta * mean_c |z_c|. Signed targets are
/// clamped to [-1, 1], unsigned ones to [0, 1].
AutoencoderLoss autoencoder_loss(const Eigen::VectorXd& decoded, const Eigen::VectorXd& target_distance,
                                 const SparseState& state, double beta, double eps, FieldMode mode);

double clamp_target(double d, double eps, FieldMode mode);

struct ElboReport {
  double bound = 0.0;      // -sum_{t<T-1} L_t - L_{T-1}, gamma = 1
  double kl_sum = 0.0;     // sum_{t<T-1} L_t
  double final_term = 0.0;  // L_{T-1}
  double offset = 0.0;     // |x| * K/2 log(2 pi sigma^{T-1}); reported, not included
};

/// Variational bound of a chain that ends at x, excluding the parameter-free
/// initial term.
ElboReport elbo_lower_bound(const InfusionChain& chain, const SparseState& x);

}  // namespace cgca
