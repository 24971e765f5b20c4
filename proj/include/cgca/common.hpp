#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cgca {

using Vec3 = Eigen::Vector3d;
using PointList = std::vector<Vec3>;

enum class ErrorCode {
  EmptyState,
  OutOfBounds,
  ShapeMismatch,
  StaleTape,
  NonFiniteGradient,
  ChainDied,
  DomainMismatch,
  DomainError,
  NotSaturated,
  EmptyQuerySet,
  SequenceNotConverged,
  NoSurfaceCells,
  IoError,
  FormatError,
  TrainingDiverged,
  NonFiniteLoss,
  EmptyCloud,
  NeedTwo,
  Misaligned,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, long step = -1)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), step_(step) {}

  ErrorCode code() const { return code_; }
  // Step index for ChainDied, -1 otherwise.
  long step() const { return step_; }

 private:
  ErrorCode code_;
  long step_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what, long step = -1) {
  throw Error(code, what, step);
}

using Engine = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0);

/// Independent RNG streams for one Markov chain: occupancy draws and latent
/// draws never share an engine, so either can be replayed on its own.
struct ChainRng {
  Engine occupancy;
  Engine latent;

  ChainRng() = default;
  ChainRng(std::uint64_t master, std::uint64_t chain)
      : occupancy(derive_seed(master, "occupancy", chain)),
        latent(derive_seed(master, "latent", chain)) {}
};

}  // namespace cgca
