#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cgca/infusion.hpp"

using namespace cgca;

namespace {

SparseState line(int length, int K, Coord start = {5, 16, 16}) {
  SparseState x(K, GridSpec{});
  for (int i = 0; i < length; ++i) x.set(start + Coord{i, 0, 0}, Eigen::VectorXd::Constant(K, 0.1 * i));
  return x;
}

SparseState blob(Coord center, int K, double value) {
  SparseState x(K, GridSpec{});
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j) x.set(center + Coord{i, j, 0}, Eigen::VectorXd::Constant(K, value));
  return x;
}

SparseState merge(SparseState a, const SparseState& b) {
  for (const auto& [key, z] : b.storage()) a.set(unpack(key), z);
  return a;
}

TransitionOutput fake_output(const SparseState& s, Engine& rng, double lambda = -1) {
  TransitionOutput out;
  out.grid = s.grid();
  out.cells = neighborhood(s, {});
  const auto n = static_cast<Eigen::Index>(out.cells.size());
  std::uniform_real_distribution<double> u(kLambdaMin, 1 - kLambdaMin);
  std::normal_distribution<double> g;
  out.lambda.resize(n);
  out.mu.resize(n, s.latent_dim());
  for (Eigen::Index r = 0; r < n; ++r) {
    out.lambda[r] = lambda < 0 ? u(rng) : lambda;
    for (Eigen::Index k = 0; k < out.mu.cols(); ++k) out.mu(r, k) = g(rng);
  }
  return out;
}

}  // namespace

TEST_CASE("alpha schedule") {
  const AlphaSchedule a{0.1, 0.005};
  CHECK(a(0) == doctest::Approx(0.1));
  CHECK(a(100) == doctest::Approx(0.6));
  CHECK(a(180) == 1.0);
  CHECK(a(5000) == 1.0);
  CHECK(a.saturation_step() == 180);
  for (int t = 0; t < 300; ++t) CHECK(a(t + 1) >= a(t));
  CHECK(AlphaSchedule{1.0, 0.1}.saturation_step() == 0);
  CHECK(AlphaSchedule{0.0, 0.3}.saturation_step() == 4);
  CHECK_THROWS_AS(AlphaSchedule({0.1, 0.0}).saturation_step(), Error);
}

TEST_CASE("infusion mixture") {
  Engine rng(1);
  const SparseState s = line(3, 2);
  const SparseState x = line(6, 2);
  const TransitionOutput out = fake_output(s, rng);
  const auto gx = nearest_target_cells(s, x, {});
  const std::set<Coord> gset(gx.begin(), gx.end());

  SUBCASE("alpha zero reproduces p") {
    const InfusionOutput inf = infusion_params(out, s, x, 0.0, {});
    CHECK(inf.cells == out.cells);
    CHECK(inf.lambda == out.lambda);
    CHECK(inf.mu == out.mu);
  }
  SUBCASE("alpha one is the target") {
    const InfusionOutput inf = infusion_params(out, s, x, 1.0, {});
    for (std::size_t r = 0; r < out.cells.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      CHECK(inf.lambda[row] == (gset.count(out.cells[r]) ? 1.0 : 0.0));
      const Eigen::VectorXd want = x.code_or_zero(out.cells[r]);
      CHECK(inf.mu.row(row).transpose() == want);
    }
  }
  SUBCASE("half mixture") {
    TransitionOutput o = out;
    o.lambda.setConstant(0.2);
    const InfusionOutput inf = infusion_params(o, s, x, 0.5, {});
    for (std::size_t r = 0; r < o.cells.size(); ++r) {
      const double want = gset.count(o.cells[r]) ? 0.6 : 0.1;
      CHECK(inf.lambda[static_cast<Eigen::Index>(r)] == doctest::Approx(want).epsilon(1e-15));
    }
  }
  SUBCASE("mixture bounds") {
    for (double alpha : {0.1, 0.37, 0.9}) {
      const InfusionOutput inf = infusion_params(out, s, x, alpha, {});
      for (Eigen::Index r = 0; r < inf.lambda.size(); ++r) {
        const double ind = inf.target_occupancy[r];
        CHECK(inf.lambda[r] >= std::min(out.lambda[r], ind) - 1e-15);
        CHECK(inf.lambda[r] <= std::max(out.lambda[r], ind) + 1e-15);
      }
    }
  }
  SUBCASE("mismatched domain") {
    TransitionOutput o = out;
    o.cells.pop_back();
    CHECK_THROWS_AS(infusion_params(o, s, x, 0.5, {}), Error);
    CHECK_THROWS_AS(infusion_params(out, s, SparseState(2, GridSpec{}), 0.5, {}), Error);
  }
}

TEST_CASE("sample_infusion") {
  Engine rng(2);
  const SparseState s = line(2, 3);
  const SparseState x = merge(line(4, 3), blob({12, 20, 16}, 3, -0.5));
  const TransitionOutput out = fake_output(s, rng);
  ChainRng chain(2, 0);
  SUBCASE("alpha one occupies exactly G_x") {
    const InfusionOutput inf = infusion_params(out, s, x, 1.0, {});
    const SparseState next = sample_infusion(inf, 1e-12, chain);
    CHECK(next.coords() == nearest_target_cells(s, x, {}));
    for (const auto& [key, z] : next.storage())
      if (x.contains(unpack(key))) CHECK((z - *x.find(unpack(key))).norm() < 1e-10);
  }
  SUBCASE("occupancy frequencies follow lambda_q") {
    TransitionOutput o;
    o.grid = GridSpec{};
    const SparseState wide = blob({16, 16, 16}, 3, 0.0);
    o.cells = neighborhood(wide, {});
    const auto n = static_cast<Eigen::Index>(o.cells.size());
    o.lambda = Eigen::VectorXd::Constant(n, 0.2);
    o.mu = Eigen::MatrixXd::Zero(n, 3);
    const InfusionOutput inf = infusion_params(o, wide, x, 0.5, {});
    // Sum of Bernoulli counts over repeated draws against its binomial spread.
    double hits = 0, expect = 0, var = 0;
    for (int rep = 0; rep < 200; ++rep) {
      const SparseState next = sample_infusion(inf, 0.1, chain);
      hits += static_cast<double>(next.size());
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      expect += 200 * inf.lambda[r];
      var += 200 * inf.lambda[r] * (1 - inf.lambda[r]);
    }
    CHECK(n * 200 >= 10000);
    CHECK(std::abs(hits - expect) < 3.0 * std::sqrt(var));
  }
}

TEST_CASE("emulate_sequence") {
  const KernelModel model(2, false, {8});
  ParamStore params;
  Engine init(3);
  model.init(params, init);
  const SparseState s0 = line(1, 2);
  const SparseState x = line(8, 2);
  SUBCASE("saturated first step lands on G_x") {
    EmulateOptions opt;
    opt.alpha = {1.0, 0.1};
    ChainRng rng(4, 0);
    const InfusionChain chain = emulate_sequence(params, model, s0, x, 1, opt, rng);
    CHECK(chain.steps.size() == 1);
    CHECK(chain.final_state.coords() == nearest_target_cells(s0, x, {}));
  }
  SUBCASE("deterministic for a fixed seed") {
    EmulateOptions opt;
    ChainRng a(5, 1), b(5, 1);
    const InfusionChain c1 = emulate_sequence(params, model, s0, x, 6, opt, a);
    const InfusionChain c2 = emulate_sequence(params, model, s0, x, 6, opt, b);
    CHECK(c1.final_state == c2.final_state);
    for (std::size_t t = 0; t < c1.steps.size(); ++t) CHECK(c1.steps[t].state == c2.steps[t].state);
  }
  SUBCASE("past saturation the chain ends at x") {
    EmulateOptions opt;
    opt.alpha = {0.4, 0.3};
    ChainRng rng(6, 0);
    const InfusionChain chain = emulate_sequence(params, model, s0, x, 12, opt, rng);
    CHECK(chain.final_state == x);  // snapped codes as well
    const InfusionChain direct = emulate_to_target(params, model, s0, x, 40, opt, rng);
    CHECK(direct.final_state == x);
    CHECK(direct.steps.back().inf.alpha == 1.0);
  }
  SUBCASE("emulate_to_target gives up loudly") {
    EmulateOptions opt;
    ChainRng rng(7, 0);
    try {
      emulate_to_target(params, model, s0, x, 3, opt, rng);
      FAIL("expected SequenceNotConverged");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SequenceNotConverged);
    }
  }
}

TEST_CASE("convergence of the deterministic recursion") {
  const AlphaSchedule alpha{};
  const NeighborhoodSpec spec{};
  const int sat = alpha.saturation_step();
  SUBCASE("s0 equal to x") {
    const SparseState x = line(5, 1);
    const auto rep = verify_convergence(x, x, spec, alpha, default_max_steps(alpha, x.grid(), spec));
    CHECK(rep.converged);
    CHECK(rep.steps == sat);
  }
  SUBCASE("single cell grows along a 10-cell line") {
    const SparseState x = line(10, 1);
    SparseState s0(1, GridSpec{});
    s0.set({5, 16, 16}, Eigen::VectorXd::Zero(1));
    const auto rep = verify_convergence(s0, x, spec, alpha, default_max_steps(alpha, x.grid(), spec));
    CHECK(rep.converged);
    CHECK(rep.steps <= sat + 5 + 1);
  }
  SUBCASE("two blobs twenty cells apart") {
    const SparseState x = merge(blob({6, 16, 16}, 1, 0.0), blob({26, 16, 16}, 1, 0.0));
    SparseState s0(1, GridSpec{});
    s0.set({16, 16, 16}, Eigen::VectorXd::Zero(1));
    const auto rep = verify_convergence(s0, x, spec, alpha, default_max_steps(alpha, x.grid(), spec));
    CHECK(rep.converged);
  }
  SUBCASE("distances shrink strictly until zero") {
    Engine rng(8);
    std::uniform_int_distribution<int> u(2, 29);
    for (int trial = 0; trial < 20; ++trial) {
      SparseState x(1, GridSpec{}), s0(1, GridSpec{});
      for (int m = 0; m < 12; ++m) x.set({u(rng), u(rng), u(rng)}, Eigen::VectorXd::Zero(1));
      s0.set({u(rng), u(rng), u(rng)}, Eigen::VectorXd::Zero(1));
      const auto rep = verify_convergence(s0, x, spec, alpha, default_max_steps(alpha, x.grid(), spec));
      CHECK(rep.converged);
      const auto& d = rep.distance_trace;
      for (std::size_t t = 0; t + 1 < d.size(); ++t) {
        if (d[t] > 0) CHECK(d[t + 1] < d[t]);
        else CHECK(d[t + 1] == 0);
      }
      // Fixed point: one more G_x step from x keeps x.
      const auto again = nearest_target_cells(x, x, spec);
      CHECK(again == x.coords());
    }
  }
  SUBCASE("failure is a return value") {
    const SparseState x = line(1, 1, {30, 30, 30});
    SparseState s0(1, GridSpec{});
    s0.set({0, 0, 0}, Eigen::VectorXd::Zero(1));
    const auto rep = verify_convergence(s0, x, spec, alpha, sat + 3);
    CHECK_FALSE(rep.converged);
  }
}
