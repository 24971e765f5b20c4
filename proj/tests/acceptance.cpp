// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "cgca/metrics.hpp"
#include "cgca/surface.hpp"
#include "cgca/training.hpp"
#include "cgca/verify.hpp"

namespace fs = std::filesystem;
using namespace cgca;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

Outcome from_checks(const std::vector<CheckResult>& checks) {
  Outcome o{!checks.empty(), ""};
  for (const auto& c : checks) {
    o.pass = o.pass && c.passed;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += (c.passed ? "" : "FAILED ") + c.invariant + ": " + c.detail;
  }
  return o;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome convergence() {
  const auto start = std::chrono::steady_clock::now();
  VerifyOptions options;
  options.convergence_pairs = 50;
  Outcome o = from_checks(verify_convergence_suite(options));
  const double s = seconds_since(start);
  o.pass = o.pass && s < 60.0;
  o.detail += fmt("; %.1f s", s);
  return o;
}

Outcome kl_factorization() {
  const auto start = std::chrono::steady_clock::now();
  VerifyOptions options;
  options.kl_trials = 100;
  Outcome o = from_checks(verify_kl_suite(options));
  const double s = seconds_since(start);
  o.pass = o.pass && s < 60.0;
  o.detail += fmt("; %.1f s", s);
  return o;
}

Outcome final_loss() {
  VerifyOptions options;
  options.final_trials = 20;
  return from_checks(verify_final_suite(options));
}

Outcome gradients() {
  VerifyOptions options;
  options.gradient_seeds = 5;
  return from_checks(verify_gradient_suite(options));
}

// 25 x 20 x 20 = 10^4 cells, generated in lexicographic order.
TransitionOutput block_output(int K) {
  TransitionOutput out;
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 20; ++j)
      for (int k = 0; k < 20; ++k) out.cells.push_back({i, j, k});
  const auto n = static_cast<Eigen::Index>(out.cells.size());
  out.lambda = Eigen::VectorXd::Zero(n);
  out.mu = Eigen::MatrixXd::Zero(n, K);
  return out;
}

// Upper quantile of chi-squared with an even number of degrees of freedom,
// from its closed-form survival function.
double chi2_even_quantile(int dof, double tail) {
  auto survival = [dof](double x) {
    double term = 1.0, sum = 0.0;
    for (int j = 0; j < dof / 2; ++j) {
      sum += term;
      term *= 0.5 * x / (j + 1);
    }
    return std::exp(-0.5 * x) * sum;
  };
  double lo = 0.0, hi = 1e3;
  for (int it = 0; it < 200; ++it) (survival(0.5 * (lo + hi)) > tail ? lo : hi) = 0.5 * (lo + hi);
  return 0.5 * (lo + hi);
}

// Occupancy is tested per lambda level; the latent draws of all levels share
// (mu, sigma^2 I) and are pooled into one test of the mean vector and one of
// the isotropic variance, each at the two-sided 3 sigma level (p = 0.0027).
Outcome sampling_statistics() {
  const int K = 4;
  const double sigma = 0.3, tail = 0.0027;
  TransitionOutput out = block_output(K);
  const auto n = static_cast<double>(out.cells.size());
  const Eigen::RowVectorXd mu = Eigen::RowVectorXd::LinSpaced(K, -1.0, 2.0);
  out.mu.rowwise() = mu;
  bool ok = true;
  double worst_occ = 0.0;
  std::vector<Eigen::RowVectorXd> codes;
  for (double lambda : {0.05, 0.3, 0.5, 0.8}) {
    out.lambda.setConstant(lambda);
    ChainRng rng(derive_seed(0, "acceptance-sampling"), static_cast<std::uint64_t>(lambda * 100));
    const SparseState s = sample_transition(out, sigma, rng);
    const double z = std::abs(static_cast<double>(s.size()) - n * lambda) / std::sqrt(n * lambda * (1 - lambda));
    worst_occ = std::max(worst_occ, z);
    for (const auto& [key, code] : s.storage()) codes.push_back(code.transpose());
  }
  // Heterogeneous lambda: the occupied count is Poisson-binomial.
  ChainRng rng(derive_seed(0, "acceptance-sampling-mixed"), 0);
  Engine fill(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (Eigen::Index c = 0; c < out.lambda.size(); ++c) out.lambda[c] = u(fill);
  const double sd = std::sqrt((out.lambda.array() * (1 - out.lambda.array())).sum());
  worst_occ = std::max(worst_occ,
                       std::abs(static_cast<double>(sample_transition(out, sigma, rng).size()) - out.lambda.sum()) / sd);
  ok = ok && worst_occ < 3.0;

  const auto m = static_cast<double>(codes.size());
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(K);
  for (const auto& z : codes) mean += z;
  mean /= m;
  double ss = 0.0;
  for (const auto& z : codes) ss += (z - mean).squaredNorm();
  const double dof = K * (m - 1);
  const double var = ss / dof;
  // m |mean - mu|^2 / sigma^2 ~ chi^2_K; pooled variance has sd sigma^2 sqrt(2 / dof).
  const double q_mean = m * (mean - mu).squaredNorm() / (sigma * sigma);
  const double q_bound = chi2_even_quantile(K, tail);
  const double z_var = std::abs(var - sigma * sigma) / (sigma * sigma * std::sqrt(2.0 / dof));
  ok = ok && q_mean < q_bound && z_var < 3.0;
  return {ok, fmt("10^4 cells per draw, worst occupancy |z| %.2f (bound 3); %zu latent draws, mean chi2_%d %.2f "
                  "(bound %.2f), variance |z| %.2f (bound 3)",
                  worst_occ, codes.size(), K, q_mean, q_bound, z_var)};
}

Outcome reductions() {
  const int K = 4;
  Engine rng(21);
  const KernelModel model(K, false, {16});
  ParamStore params;
  model.init(params, rng);
  const GridSpec grid;
  SparseState s(K, grid), x(K, grid);
  std::normal_distribution<double> g;
  for (int c = 0; c < 6; ++c) s.set({10 + c, 12, 14}, Eigen::VectorXd::NullaryExpr(K, [&] { return g(rng); }));
  for (int c = 0; c < 9; ++c) x.set({14, 10 + c, 15}, Eigen::VectorXd::NullaryExpr(K, [&] { return g(rng); }));
  const NeighborhoodSpec spec;
  const TransitionOutput out = predict(params, model, s, nullptr, spec);

  bool identical = true;
  for (std::uint64_t chain = 0; chain < 20; ++chain) {
    const InfusionOutput inf = infusion_params(out, s, x, 0.0, spec);
    ChainRng a(99, chain), b(99, chain);
    identical = identical && sample_infusion(inf, 0.1, a) == sample_transition(out, 0.1, b);
  }

  InfusionOutput inf = infusion_params(out, s, x, 0.4, spec);
  LossGradients grads;
  transition_loss(out, inf, 0.0, 0.1, &grads);
  bool zero_mu = grads.mu.cwiseAbs().maxCoeff() == 0.0 && grads.lambda.cwiseAbs().maxCoeff() > 0.0;
  PredictTape tape;
  predict(params, model, s, nullptr, spec, 0, &tape);
  params.zero_grad();
  predict_backward(params, model, tape, grads.lambda, grads.mu);
  const Eigen::MatrixXd& gw = params.grad("kernel.out.W");
  zero_mu = zero_mu && gw.rightCols(K).cwiseAbs().maxCoeff() == 0.0 &&
            params.grad("kernel.out.b").rightCols(K).cwiseAbs().maxCoeff() == 0.0;

  GenerateOptions options;
  options.steps = 0;
  options.mode_steps = 0;
  ChainRng chain(3, 0);
  const bool identity = generate(params, model, s, options, chain) == s;

  return {identical && zero_mu && identity,
          fmt("alpha=0 infusion equals transition bitwise: %s; gamma=0 mu gradients zero: %s; T=T'=0 identity: %s",
              identical ? "yes" : "no", zero_mu ? "yes" : "no", identity ? "yes" : "no")};
}

double window_mean(const std::vector<double>& v, bool last) {
  const std::size_t w = std::max<std::size_t>(1, v.size() / 10);
  double sum = 0.0;
  for (std::size_t n = 0; n < w; ++n) sum += last ? v[v.size() - 1 - n] : v[n];
  return sum / static_cast<double>(w);
}

Outcome desk_learning() {
  const std::clock_t cpu0 = std::clock();
  const TrainConfig config = desk_config();
  const Dataset ds = generate_dataset(desk_corpus(), config.seed);
  const auto held_out = ds.split(true);

  const AeResult ae = train_autoencoder(config, ds);
  const Autoencoder model(config.autoencoder_spec());
  const double mae_test = autoencoder_mae(ae.params, model, ds, held_out);
  const double mae_train = autoencoder_mae(ae.params, model, ds, ds.split(false));

  const KernelResult kernel = train_kernel(config, ds, ae.params);
  const auto means = kernel.epoch_means();
  const double first = window_mean(means, false), last = window_mean(means, true);

  const EvalReport trained = evaluate_checkpoint(config, kernel.params, ae.params, ds, held_out);
  const double cpu = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
  const EvalReport untrained = evaluate_checkpoint(config, initial_kernel_params(config), ae.params, ds, held_out);

  const bool a = mae_test < 0.1;
  const bool b = last < 0.5 * first;
  const bool c = trained.mean_tmd > 0.0 && trained.mean_min_cd < 0.5 * untrained.mean_min_cd;
  const bool budget = cpu < 900.0;
  return {a && b && c && budget,
          fmt("(a) held-out MAE %.4f (train %.4f) %s; (b) mean L_t %.4f -> %.4f %s; (c) TMD %.4f, min-CD %.4f vs "
              "untrained %.4f %s; train+eval CPU %.0f s",
              mae_test, mae_train, a ? "ok" : "FAILED", first, last, b ? "ok" : "FAILED", trained.mean_tmd,
              trained.mean_min_cd, untrained.mean_min_cd, c ? "ok" : "FAILED", cpu)};
}

Outcome surface_fidelity() {
  const GridSpec grid;  // 32^3, eps = 2/32
  const int u = 4;
  const double r = 0.53;
  const double eps = grid.voxel_size;
  auto clamped = [&](const Vec3& p) { return std::clamp((p.norm() - r) / eps, -1.0, 1.0); };
  const ScalarField field =
      sample_field(grid, u, FieldMode::Signed, all_field_nodes(grid, u), [&](std::span<const Vec3> q) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(q.size()));
        for (std::size_t n = 0; n < q.size(); ++n) v[static_cast<Eigen::Index>(n)] = clamped(q[n]);
        return v;
      });
  const Mesh mesh = marching_cubes(field);
  const double h = field.spacing(), diag = std::sqrt(3.0) * h;
  double worst = 0.0;
  for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(v.norm() - r));
  const bool mesh_ok = !mesh.triangles.empty() && worst < diag;

  // Brute-force filter over every fine node, independent of the sample map.
  std::vector<Vec3> expected;
  const int n = grid.resolution * u;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 p(grid.origin() + (i + 0.5) * h, grid.origin() + (j + 0.5) * h, grid.origin() + (k + 0.5) * h);
        if (std::abs(clamped(p)) < 0.5) expected.push_back(p);
      }
  PointList got = extract_points(field, 0.5);
  auto lex = [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  };
  std::sort(expected.begin(), expected.end(), lex);
  std::sort(got.begin(), got.end(), lex);
  bool same = got.size() == expected.size();
  for (std::size_t m = 0; same && m < got.size(); ++m) same = (got[m] - expected[m]).cwiseAbs().maxCoeff() < 1e-12;
  return {mesh_ok && same, fmt("%zu vertices, worst radial error %.4g vs diagonal %.4g; extract_points %zu nodes, "
                               "brute force %zu, identical: %s",
                               mesh.vertices.size(), worst, diag, got.size(), expected.size(), same ? "yes" : "no")};
}

double brute_nearest(const Vec3& p, const PointCloud& b) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& q : b) best = std::min(best, (p - q).norm());
  return best;
}

double brute_chamfer(const PointCloud& a, const PointCloud& b) {
  double ab = 0.0, ba = 0.0;
  for (const Vec3& p : a) ab += brute_nearest(p, b);
  for (const Vec3& q : b) ba += brute_nearest(q, a);
  return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

Outcome metric_oracles() {
  Engine rng(31);
  std::normal_distribution<double> g;
  auto cloud = [&](std::size_t n, double spread) {
    PointCloud c;
    for (std::size_t m = 0; m < n; ++m) c.emplace_back(spread * g(rng), spread * g(rng), spread * g(rng));
    return c;
  };
  double worst = 0.0;
  for (std::size_t n : {1u, 17u, 120u, 500u}) {
    const PointCloud a = cloud(n, 1.0), b = cloud(500 - n / 2, 0.4), c = cloud(n, 0.7);
    worst = std::max(worst, std::abs(chamfer(a, b) - brute_chamfer(a, b)));
    double h = 0.0;
    for (const Vec3& p : a) h = std::max(h, brute_nearest(p, b));
    worst = std::max(worst, std::abs(uhd(a, b) - h));
    const double t = (brute_chamfer(a, b) + brute_chamfer(a, c) + brute_chamfer(b, c)) / 3.0;
    worst = std::max(worst, std::abs(tmd({a, b, c}) - t));
    const double m = 0.5 * (std::min(brute_chamfer(a, b), brute_chamfer(c, b)) + brute_chamfer(b, a));
    worst = std::max(worst, std::abs(mmd({{a, c}, {b}}, {b, a}) - m));
  }
  const PointCloud a = cloud(200, 1.0), b = cloud(200, 1.0);
  const PointCloud part(a.begin(), a.begin() + 50);
  const bool zeros = chamfer(a, a) == 0.0 && uhd(part, a) == 0.0 && tmd({a, a, a}) == 0.0 &&
                     mmd({{b, a}}, {a}) == 0.0 && chamfer(a, b) == chamfer(b, a);
  return {worst < 1e-12 && zeros, fmt("max deviation from brute force %.3g over n <= 500; zero cases exact: %s", worst,
                                      zeros ? "yes" : "no")};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    files[fs::relative(entry.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

bool run_cli(const std::string& args) {
  const std::string cmd = std::string(CGCA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "cgca_acceptance_repro";
  // Desk profile with a shortened budget; the full budget is exercised above.
  const std::string cfg =
      " --set seed=5 --set train_per_kind=1 --set test_per_kind=1 --set ae_epochs=20 --set kernel_epochs=2"
      " --set completions=3";
  auto pipeline = [&]() {
    fs::remove_all(root);
    const std::string r = root.string();
    bool ok = run_cli("verify --set seed=5 --out " + r + "/verify");
    ok = ok && run_cli("gen-data" + cfg + " --out " + r + "/data");
    ok = ok && run_cli("train-ae" + cfg + " --dataset " + r + "/data --out " + r + "/ae");
    ok = ok && run_cli("train-kernel" + cfg + " --dataset " + r + "/data --ae " + r + "/ae/ae.ckpt --out " + r + "/kernel");
    ok = ok && run_cli("complete" + cfg + " --dataset " + r + "/data --ae " + r + "/ae/ae.ckpt --kernel " + r +
                       "/kernel/kernel.ckpt --input-id 5 --out " + r + "/complete");
    return ok;
  };
  if (!pipeline()) return {false, "a CLI command failed on the first run"};
  const auto first = snapshot(root);
  if (!pipeline()) return {false, "a CLI command failed on the second run"};
  const auto second = snapshot(root);
  fs::remove_all(root);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) ++differing;
  }
  const bool ok = differing == 0 && first.size() == second.size() && first.count("complete/completion_2.xyz") &&
                  first.count("kernel/kernel.ckpt") && first.count("verify/verify.txt");
  return {ok, fmt("verify, gen-data, train-ae, train-kernel, complete: %zu files, %zu differ between runs",
                  first.size(), differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"convergence", convergence},
      {"KL factorization", kl_factorization},
      {"final-step loss", final_loss},
      {"gradient integrity", gradients},
      {"sampling statistics", sampling_statistics},
      {"reduction identities", reductions},
      {"desk-scale learning", desk_learning},
      {"surface fidelity", surface_fidelity},
      {"metric oracles", metric_oracles},
      {"reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t n = 0; n < criteria.size(); ++n) {
    Outcome o;
    try {
      o = criteria[n].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << n + 1 << " " << criteria[n].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
