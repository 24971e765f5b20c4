#include "cgca/common.hpp"

namespace cgca {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyState: return "EmptyState";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StaleTape: return "StaleTape";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ChainDied: return "ChainDied";
    case ErrorCode::DomainMismatch: return "DomainMismatch";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NotSaturated: return "NotSaturated";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::SequenceNotConverged: return "SequenceNotConverged";
    case ErrorCode::NoSurfaceCells: return "NoSurfaceCells";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NeedTwo: return "NeedTwo";
    case ErrorCode::Misaligned: return "Misaligned";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index) {
  // FNV-1a over the purpose tag, then mixed with the master seed and index.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : purpose) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return mix_seed(mix_seed(master ^ h) + index);
}

}  // namespace cgca
