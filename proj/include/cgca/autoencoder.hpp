#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "cgca/common.hpp"
#include "cgca/grid.hpp"
#include "cgca/net.hpp"

namespace cgca {

enum class FieldMode { Signed, Unsigned };

/// A world-space position with its distance to the surface.
struct PointSample {
  Vec3 p = Vec3::Zero();
  double d = 0.0;
};

struct AutoencoderSpec {
  int latent_dim = 32;
  int feature_dim = 32;
  int levels = 3;
  std::vector<int> encoder_hidden{32, 32, 32, 32};
  int decoder_hidden = 64;
  int decoder_blocks = 2;
  FieldMode mode = FieldMode::Signed;
};

/// Encoder g_phi (local PointNet), pyramid MLPs f_omega1 and decoder tail f_omega2.
class Autoencoder {
 public:
  explicit Autoencoder(AutoencoderSpec spec);

  const AutoencoderSpec& spec() const { return spec_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& level_mlp(int level) const { return levels_.at(static_cast<std::size_t>(level)); }
  const Mlp& tail() const { return tail_; }

  void init(ParamStore& params, Engine& rng) const;
  void init_zero(ParamStore& params) const;

 private:
  AutoencoderSpec spec_;
  Mlp encoder_;
  std::vector<Mlp> levels_;
  Mlp tail_;
};

struct EncodeTape {
  std::vector<Coord> cells;        // occupied cells of the result, key order
  std::vector<int> sample_cell;    // row of `cells` for each kept sample
  Eigen::VectorXd inverse_count;   // 1 / samples per cell
  MlpTape mlp;
};

/// Maps samples to a sparse voxel embedding over the cells that contain the
/// surface (at least one sample with |d| <= eps/2). Codes are the mean of the
/// per-sample MLP outputs on [local coordinate in [-1,1]^3, d/eps].
SparseState encode(const ParamStore& params, const Autoencoder& ae, std::span<const PointSample> samples,
                   const GridSpec& grid, EncodeTape* tape = nullptr);

/// code_grad rows follow tape.cells.
void encode_backward(ParamStore& params, const Autoencoder& ae, const EncodeTape& tape,
                     const Eigen::MatrixXd& code_grad);

/// Sparse multi-resolution features. Level k has cells of size eps * 2^k and
/// stores features only for downsampled occupied cells. Feature nodes sit on
/// cell corners: node c of level k is at origin + c * eps * 2^k.
struct FeaturePyramid {
  struct Level {
    std::vector<Coord> cells;
    Eigen::MatrixXd features;  // rows follow cells
    std::unordered_map<std::uint64_t, int> index;

    /// Row of c in features, or -1 when the node carries no feature.
    int row_of(const Coord& c) const;
  };

  GridSpec grid;
  int feature_dim = 0;
  std::vector<Level> levels;
};

struct PyramidTape {
  std::vector<MlpTape> mlp;
  std::vector<std::vector<int>> parent;  // per level >= 1: parent row of each child row of level-1
  std::vector<Eigen::VectorXd> inverse_count;
};

FeaturePyramid build_pyramid(const ParamStore& params, const Autoencoder& ae, const SparseState& state,
                             PyramidTape* tape = nullptr);

/// Trilinear blend of the 8 surrounding nodes per level, summed over levels.
Eigen::VectorXd interpolate(const FeaturePyramid& pyramid, const Vec3& q);
Eigen::MatrixXd interpolate_batch(const FeaturePyramid& pyramid, std::span<const Vec3> queries);

struct DecodeTape {
  std::vector<Vec3> queries;
  MlpTape mlp;
};

Eigen::VectorXd decode_batch(const ParamStore& params, const Autoencoder& ae, const FeaturePyramid& pyramid,
                             std::span<const Vec3> queries, DecodeTape* tape = nullptr);
double decode(const ParamStore& params, const Autoencoder& ae, const SparseState& state, const Vec3& q);

/// Backpropagates d(loss)/d(decoded values) into the tail and pyramid
/// parameters; returns d(loss)/d(codes) with rows in the state's key order.
Eigen::MatrixXd decode_backward(ParamStore& params, const Autoencoder& ae, const FeaturePyramid& pyramid,
                                const PyramidTape& pyramid_tape, const DecodeTape& decode_tape,
                                const Eigen::VectorXd& value_grad);

}  // namespace cgca
