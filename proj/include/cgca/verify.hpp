#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cgca {

/// Outcome of one property check, named by module and invariant.
struct CheckResult {
  std::string module;
  std::string invariant;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int convergence_pairs = 50;  // per shape kind
  int kl_trials = 100;
  int final_trials = 20;
  int gradient_seeds = 5;
};

inline const std::vector<std::string> kVerifySuites{"convergence", "kl", "final", "gradients"};

/// G_x recursion reaches x within default_max_steps for random (s0, x) pairs
/// of every shape kind.
std::vector<CheckResult> verify_convergence_suite(const VerifyOptions& options);

/// Per-cell closed-form transition loss against the KL enumerated over all
/// joint occupancy configurations of up to three cells.
std::vector<CheckResult> verify_kl_suite(const VerifyOptions& options);

/// Gradient of the final-step loss against forward-mode derivatives of the
/// reweighted final log-likelihood, and the constant between them.
std::vector<CheckResult> verify_final_suite(const VerifyOptions& options);

/// Analytic gradients of the transition loss and the autoencoder loss
/// through the full networks against central differences.
std::vector<CheckResult> verify_gradient_suite(const VerifyOptions& options);

std::vector<CheckResult> run_verification(const VerifyOptions& options, const std::vector<std::string>& suites);

void print_results(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace cgca
