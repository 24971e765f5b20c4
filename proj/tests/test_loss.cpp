#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cgca/loss.hpp"

using namespace cgca;

namespace {

SparseState single(const Coord& c, const Eigen::VectorXd& z) {
  SparseState s(static_cast<int>(z.size()), GridSpec{});
  s.set(c, z);
  return s;
}

TransitionOutput output_over(const std::vector<Coord>& cells, int K, Engine& rng) {
  TransitionOutput out;
  out.cells = cells;
  const auto n = static_cast<Eigen::Index>(cells.size());
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> g;
  out.lambda.resize(n);
  out.mu.resize(n, K);
  for (Eigen::Index r = 0; r < n; ++r) {
    out.lambda[r] = u(rng);
    for (int k = 0; k < K; ++k) out.mu(r, k) = g(rng);
  }
  return out;
}

InfusionOutput target_over(const TransitionOutput& out, Engine& rng) {
  InfusionOutput inf;
  inf.cells = out.cells;
  const auto n = out.lambda.size();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  inf.lambda.resize(n);
  inf.mu.resize(n, out.mu.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    inf.lambda[r] = r == 0 ? 1.0 : r == 1 ? 0.0 : u(rng);
    for (Eigen::Index k = 0; k < out.mu.cols(); ++k) inf.mu(r, k) = g(rng);
  }
  return inf;
}

// KL between the full joint distributions over every occupancy pattern; an
// occupied cell carries a Gaussian code, so its pattern adds the Gaussian KL.
double joint_kl(const TransitionOutput& p, const InfusionOutput& q, double sigma) {
  const auto n = static_cast<int>(p.lambda.size());
  double total = 0.0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    double Q = 1.0, P = 1.0, gauss = 0.0;
    for (int c = 0; c < n; ++c) {
      const bool on = (mask >> c) & 1;
      Q *= on ? q.lambda[c] : 1 - q.lambda[c];
      P *= on ? p.lambda[c] : 1 - p.lambda[c];
      if (on) gauss += (q.mu.row(c) - p.mu.row(c)).squaredNorm() / (2 * sigma * sigma);
    }
    if (Q > 0) total += Q * (std::log(Q / P) + gauss);
  }
  return total;
}

}  // namespace

TEST_CASE("bernoulli KL") {
  CHECK(bernoulli_kl(0.5, 0.5) == 0.0);
  CHECK(bernoulli_kl(1.0, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double q = 0.6, p = 0.3;
  const double two_point = q * std::log(q / p) + (1 - q) * std::log((1 - q) / (1 - p));
  CHECK(std::abs(bernoulli_kl(q, p) - two_point) < 1e-12);
  CHECK(bernoulli_kl(0.0, 0.25) == doctest::Approx(-std::log(0.75)));
  CHECK_THROWS_AS(bernoulli_kl(1.2, 0.5), Error);
  CHECK_THROWS_AS(bernoulli_kl(0.5, 0.0), Error);
  CHECK_THROWS_AS(bernoulli_kl(0.5, 1.0), Error);
}

TEST_CASE("gaussian KL with shared variance") {
  Eigen::VectorXd a(3), b(3);
  a << 0.3, -1.0, 2.0;
  b << 0.1, 0.5, 1.0;
  CHECK(gaussian_kl_same_var(a, a, 0.2) == 0.0);
  Eigen::VectorXd s1(1), s0 = Eigen::VectorXd::Zero(1);
  s1 << 0.4;
  CHECK(gaussian_kl_same_var(s1, s0, 0.4) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(gaussian_kl_same_var(Eigen::VectorXd(3.0 * a), Eigen::VectorXd(3.0 * b), 0.7) ==
        doctest::Approx(9.0 * gaussian_kl_same_var(a, b, 0.7)).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_kl_same_var(a, b, 0.0), Error);

  // Monte Carlo E_q[log q(z) / p(z)] with mu_q - mu_p = sigma.
  Engine rng(1);
  std::normal_distribution<double> n;
  const double sigma = 0.4, mq = 0.4, mp = 0.0;
  double acc = 0.0;
  const int draws = 1000000;
  for (int i = 0; i < draws; ++i) {
    const double z = mq + sigma * n(rng);
    acc += ((z - mp) * (z - mp) - (z - mq) * (z - mq)) / (2 * sigma * sigma);
  }
  CHECK(std::abs(acc / draws - 0.5) < 1e-2);
}

TEST_CASE("transition loss") {
  Engine rng(2);
  SUBCASE("identical distributions") {
    const TransitionOutput out = output_over({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, 2, rng);
    InfusionOutput inf;
    inf.cells = out.cells;
    inf.lambda = out.lambda;
    inf.mu = out.mu;
    LossGradients g;
    const LossBreakdown l = transition_loss(out, inf, 0.01, 0.1, &g);
    CHECK(l.total == 0.0);
    CHECK(g.lambda.cwiseAbs().maxCoeff() < 1e-14);
    CHECK(g.mu.isZero(0.0));
  }
  SUBCASE("one cell switched on") {
    TransitionOutput out;
    out.cells = {{3, 3, 3}};
    out.lambda = Eigen::VectorXd::Constant(1, 0.5);
    out.mu = Eigen::MatrixXd::Constant(1, 2, 0.25);
    InfusionOutput inf;
    inf.cells = out.cells;
    inf.lambda = Eigen::VectorXd::Ones(1);
    inf.mu = out.mu;
    CHECK(transition_loss(out, inf, 0.01, 0.1).total == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("factored loss equals the joint KL") {
    for (int trial = 0; trial < 30; ++trial) {
      const int n = 1 + trial % 3;
      std::vector<Coord> cells;
      for (int c = 0; c < n; ++c) cells.push_back({c, 0, 0});
      const TransitionOutput out = output_over(cells, 1 + trial % 4, rng);
      const InfusionOutput inf = target_over(out, rng);
      const double sigma = 0.05 + 0.3 * (trial % 5);
      CHECK(std::abs(transition_loss(out, inf, 1.0, sigma).total - joint_kl(out, inf, sigma)) < 1e-10);
    }
  }
  SUBCASE("affine in gamma with slope equal to the latent sum") {
    const TransitionOutput out = output_over({{0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}}, 3, rng);
    const InfusionOutput inf = target_over(out, rng);
    const LossBreakdown l0 = transition_loss(out, inf, 0.0, 0.3);
    const LossBreakdown l1 = transition_loss(out, inf, 0.25, 0.3);
    CHECK(l0.total == l0.occupancy);
    CHECK(l1.total == l1.occupancy + 0.25 * l1.latent);
    CHECK(l1.total - l0.total == doctest::Approx(0.25 * l0.latent).epsilon(1e-13));
    CHECK(l0.occupancy >= 0.0);
    CHECK(l0.latent >= 0.0);
  }
  SUBCASE("gamma zero leaves no latent gradient") {
    const TransitionOutput out = output_over({{0, 0, 0}, {0, 1, 0}}, 2, rng);
    LossGradients g;
    transition_loss(out, target_over(out, rng), 0.0, 0.3, &g);
    CHECK(g.mu.isZero(0.0));
  }
  SUBCASE("gradients match central differences") {
    const TransitionOutput out = output_over({{0, 0, 0}, {0, 1, 0}, {0, 2, 0}, {5, 5, 5}}, 3, rng);
    const InfusionOutput inf = target_over(out, rng);
    LossGradients g;
    transition_loss(out, inf, 0.3, 0.4, &g);
    const double h = 1e-6;
    for (Eigen::Index r = 0; r < out.lambda.size(); ++r) {
      TransitionOutput up = out, down = out;
      up.lambda[r] += h;
      down.lambda[r] -= h;
      const double num = (transition_loss(up, inf, 0.3, 0.4).total - transition_loss(down, inf, 0.3, 0.4).total) / (2 * h);
      CHECK(g.lambda[r] == doctest::Approx(num).epsilon(1e-6));
      for (Eigen::Index k = 0; k < out.mu.cols(); ++k) {
        TransitionOutput a = out, b = out;
        a.mu(r, k) += h;
        b.mu(r, k) -= h;
        const double nm = (transition_loss(a, inf, 0.3, 0.4).total - transition_loss(b, inf, 0.3, 0.4).total) / (2 * h);
        CHECK(g.mu(r, k) == doctest::Approx(nm).epsilon(1e-6));
      }
    }
  }
  SUBCASE("domains must match") {
    const TransitionOutput out = output_over({{0, 0, 0}, {0, 1, 0}}, 2, rng);
    InfusionOutput inf = target_over(out, rng);
    inf.cells.back() = {9, 9, 9};
    CHECK_THROWS_AS(transition_loss(out, inf, 0.1, 0.1), Error);
  }
}

TEST_CASE("final-step loss") {
  Engine rng(3);
  const int K = 2;
  SparseState x(K, GridSpec{});
  x.set({4, 4, 4}, Eigen::Vector2d(0.3, -0.1));
  x.set({4, 5, 4}, Eigen::Vector2d(-0.7, 0.2));
  const std::vector<Coord> cells = neighborhood(x, {});
  SUBCASE("a perfect prediction costs nothing") {
    TransitionOutput out;
    out.cells = cells;
    const auto n = static_cast<Eigen::Index>(cells.size());
    out.lambda.resize(n);
    out.mu = Eigen::MatrixXd::Zero(n, K);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto* z = x.find(cells[static_cast<std::size_t>(r)]);
      out.lambda[r] = z ? 1 - kLambdaMin : kLambdaMin;
      if (z) out.mu.row(r) = z->transpose();
    }
    CHECK(final_step_loss(out, x, 1.0, 0.1).total < 1e-4);
  }
  SUBCASE("an empty cell contributes -log(1 - lambda)") {
    TransitionOutput out;
    out.cells = {{0, 0, 0}};
    out.lambda = Eigen::VectorXd::Constant(1, 0.3);
    out.mu = Eigen::MatrixXd::Constant(1, K, 5.0);
    CHECK(final_step_loss(out, x, 1.0, 0.1).total == doctest::Approx(-std::log(0.7)).epsilon(1e-15));
  }
  SUBCASE("gradient equals that of the reweighted negative log-likelihood") {
    const TransitionOutput out = output_over(cells, K, rng);
    const double sigma = 0.2;
    LossGradients g;
    final_step_loss(out, x, 1.0, sigma, 1.0, &g);
    // -sum_{c in x} log(lambda_c N(z_c; mu_c, sigma^2 I)) - sum_{c not in x} log(1 - lambda_c)
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto r = static_cast<Eigen::Index>(c);
      const auto* z = x.find(cells[c]);
      const double dl = z ? -1.0 / out.lambda[r] : 1.0 / (1.0 - out.lambda[r]);
      CHECK(std::abs(g.lambda[r] - dl) < 1e-8);
      for (int k = 0; k < K; ++k) {
        const double dm = z ? (out.mu(r, k) - (*z)[k]) / (sigma * sigma) : 0.0;
        CHECK(std::abs(g.mu(r, k) - dm) < 1e-8);
      }
    }
  }
  SUBCASE("needs saturation") {
    const TransitionOutput out = output_over(cells, K, rng);
    try {
      final_step_loss(out, x, 0.99, 0.1);
      FAIL("expected NotSaturated");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NotSaturated);
    }
  }
  CHECK(final_likelihood_offset(4, 0.5) == doctest::Approx(2.0 * std::log(std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("autoencoder loss") {
  Engine rng(4);
  const double eps = 1.0 / 16;
  SUBCASE("perfect decoder and zero codes") {
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(9, -0.1, 0.1);
    Eigen::VectorXd decoded(9);
    for (int q = 0; q < 9; ++q) decoded[q] = clamp_target(d[q], eps, FieldMode::Signed);
    const SparseState s = single({1, 1, 1}, Eigen::VectorXd::Zero(3));
    CHECK(autoencoder_loss(decoded, d, s, 0.5, eps, FieldMode::Signed).value == 0.0);
  }
  SUBCASE("saturated targets against a zero decoder") {
    Eigen::VectorXd d(4);
    d << 0.2, -0.3, eps, -1.0;
    CHECK(autoencoder_loss(Eigen::VectorXd::Zero(4), d, SparseState(3, GridSpec{}), 0.0, eps, FieldMode::Signed).value ==
          1.0);
  }
  SUBCASE("random case against a scalar loop") {
    std::normal_distribution<double> n;
    for (FieldMode mode : {FieldMode::Signed, FieldMode::Unsigned}) {
      const int nq = 50;
      Eigen::VectorXd decoded(nq), d(nq);
      for (int q = 0; q < nq; ++q) {
        decoded[q] = n(rng);
        d[q] = 0.1 * n(rng);
        if (mode == FieldMode::Unsigned) d[q] = std::abs(d[q]);
      }
      SparseState s(3, GridSpec{});
      for (int c = 0; c < 7; ++c) s.set({c, 2 * c, 1}, Eigen::Vector3d(n(rng), n(rng), n(rng)));
      const double beta = 0.3;
      double rec = 0.0;
      for (int q = 0; q < nq; ++q) {
        const double lo = mode == FieldMode::Signed ? -1.0 : 0.0;
        rec += std::abs(decoded[q] - std::min(1.0, std::max(lo, d[q] / eps)));
      }
      double reg = 0.0;
      for (const auto& [key, z] : s.storage()) reg += std::sqrt(z[0] * z[0] + z[1] * z[1] + z[2] * z[2]);
      const double want = rec / nq + beta * reg / 7.0;
      const AutoencoderLoss got = autoencoder_loss(decoded, d, s, beta, eps, mode);
      CHECK(std::abs(got.value - want) < 1e-12);
    }
  }
  CHECK_THROWS_AS(autoencoder_loss(Eigen::VectorXd(), Eigen::VectorXd(), SparseState(1, GridSpec{}), 0.0, eps,
                                   FieldMode::Signed),
                  Error);
}

TEST_CASE("ELBO of a hand-built chain") {
  const int K = 2;
  const Coord c{8, 8, 8};
  const SparseState x = single(c, Eigen::Vector2d(0.5, -0.5));
  const NeighborhoodSpec spec{};
  TransitionOutput out;
  out.grid = x.grid();
  out.cells = neighborhood(x, spec);
  const auto n = static_cast<Eigen::Index>(out.cells.size());
  out.lambda = Eigen::VectorXd::Constant(n, kLambdaMin);
  out.mu = Eigen::MatrixXd::Zero(n, K);
  const Eigen::Index row = *out.row_of(c);
  out.lambda[row] = 1 - kLambdaMin;
  out.mu.row(row) = x.find(c)->transpose();

  SequenceStep step;
  step.state = x;
  step.out = out;
  step.inf = infusion_params(out, x, x, 1.0, spec);
  step.sigma = 0.1;
  InfusionChain chain;
  chain.steps = {step, step};
  chain.final_state = x;

  const ElboReport perfect = elbo_lower_bound(chain, x);
  // Only the clamp keeps the KLs off zero: n cells each cost about 1e-6.
  CHECK(std::abs(perfect.bound) < 1e-4);
  CHECK(perfect.kl_sum >= 0.0);
  CHECK(perfect.offset == doctest::Approx(final_likelihood_offset(K, 0.1)));

  chain.steps[0].out.lambda.setConstant(0.5);
  const ElboReport worse = elbo_lower_bound(chain, x);
  CHECK(worse.bound < perfect.bound);
  CHECK(worse.kl_sum >= 0.0);

  chain.final_state = SparseState(K, GridSpec{});
  CHECK_THROWS_AS(elbo_lower_bound(chain, x), Error);
}
