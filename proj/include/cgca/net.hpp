#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cgca/common.hpp"
#include "cgca/grid.hpp"

namespace cgca {

/// One trainable array and its gradient buffer. Values are stored as a
/// matrix; rank-1 parameters are 1 x n.
struct Param {
  std::vector<int> shape;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

/// Named parameter arrays. Every mutable access to values bumps a version
/// counter so that tapes recorded before the mutation can be rejected.
class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Param& at(const std::string& name) const;

  const Eigen::MatrixXd& value(const std::string& name) const { return at(name).value; }
  Eigen::MatrixXd& mutable_value(const std::string& name);
  Eigen::MatrixXd& grad(const std::string& name);
  const Eigen::MatrixXd& grad(const std::string& name) const { return at(name).grad; }

  const std::map<std::string, Param>& entries() const { return entries_; }
  std::map<std::string, Param>& mutable_entries() {
    ++version_;
    return entries_;
  }

  void zero_grad();
  std::uint64_t version() const { return version_; }
  std::size_t scalar_count() const;

  /// Copies every entry of `other` into this store (names must not collide).
  void merge(const ParamStore& other);
  /// Entries whose names start with prefix.
  ParamStore subset(const std::string& prefix) const;

  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Param> entries_;
  std::uint64_t version_ = 0;
};

enum class Activation { Relu, Tanh, Sigmoid, None };

struct MlpSpec {
  /// Input width, hidden widths..., output width.
  std::vector<int> widths;
  Activation activation = Activation::Relu;
  Activation output_activation = Activation::None;
  /// Residual blocks h <- h + W2 act(W1 h + b1) + b2 appended after the last hidden layer.
  int residual_blocks = 0;
};

/// Tape of one batched forward pass.
struct MlpTape {
  std::uint64_t version = 0;
  bool external_first = false;  // first-layer weights handled by the caller
  std::vector<Eigen::MatrixXd> inputs;  // input to each linear op
  std::vector<Eigen::MatrixXd> outputs;  // post-activation output of each linear op
  Eigen::MatrixXd result;
};

/// Multi-layer perceptron over a batch: rows are samples.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  int input_width() const { return spec_.widths.front(); }
  int output_width() const { return spec_.widths.back(); }
  const std::string& first_weight() const { return ops_.front().weight; }

  /// Registers parameters with uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)); zero biases.
  void init(ParamStore& params, Engine& rng) const;
  void init_zero(ParamStore& params) const;

  Eigen::MatrixXd forward(const ParamStore& params, const Eigen::MatrixXd& input, MlpTape* tape = nullptr) const;
  /// Runs the network from a first-layer product computed by the caller
  /// (input * W0, bias not yet added).
  Eigen::MatrixXd forward_from_product(const ParamStore& params, Eigen::MatrixXd first_product,
                                       MlpTape* tape = nullptr) const;

  /// Accumulates parameter gradients and returns d(loss)/d(input). For tapes
  /// from forward_from_product it returns d(loss)/d(first_product) and leaves
  /// the first weight gradient to the caller.
  Eigen::MatrixXd backward(ParamStore& params, const MlpTape& tape, const Eigen::MatrixXd& output_grad) const;

 private:
  struct Op {
    std::string weight;
    std::string bias;
    int in = 0;
    int out = 0;
    Activation act = Activation::None;
    int residual_from = -1;  // index of the op whose input is added to this op's output
  };

  Eigen::MatrixXd run(const ParamStore& params, Eigen::MatrixXd first_pre, MlpTape* tape,
                      std::vector<Eigen::MatrixXd>& local) const;

  std::string prefix_;
  MlpSpec spec_;
  std::vector<Op> ops_;
};

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& x);

/// Per-offset [occupancy, code] features around center. With cond, each
/// offset contributes [occ_state OR occ_cond, z_cond, z_state] (width 2K+1).
Eigen::VectorXd gather_features(const SparseState& state, const Coord& center, std::span<const Coord> offsets,
                                const SparseState* cond = nullptr);
Eigen::MatrixXd gather_feature_matrix(const SparseState& state, std::span<const Coord> centers,
                                      std::span<const Coord> offsets, const SparseState* cond = nullptr);

/// The window features of gather_feature_matrix in factored form. Every
/// occupied cell holds one feature row; pairs[o] lists (center row, source)
/// for offset o. input * W then costs one small product per offset.
struct WindowGather {
  Eigen::Index rows = 0;
  int per = 0;                  // feature width per offset
  Eigen::MatrixXd sources;      // per x sources, one column per occupied cell
  std::vector<std::vector<std::pair<int, int>>> pairs;
};

WindowGather gather_window(const SparseState& state, std::span<const Coord> centers, std::span<const Coord> offsets,
                           const SparseState* cond = nullptr);
/// Equals gather_feature_matrix(...) * weight.
Eigen::MatrixXd window_product(const WindowGather& gather, const Eigen::MatrixXd& weight);
/// Adds d(loss)/d(weight) given d(loss)/d(window_product).
void window_product_backward(const WindowGather& gather, const Eigen::MatrixXd& product_grad,
                             Eigen::MatrixXd& weight_grad);
int feature_width(std::size_t window_size, int latent_dim, bool conditioned);

/// Plain gradient descent; grads are zeroed afterwards.
void sgd_step(ParamStore& params, double lr);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Bias-corrected Adam update; grads are zeroed afterwards.
  void step(ParamStore& params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> moments_;
};

/// Checkpoint layout: "CGCA1", then per entry: u32 name length, name bytes,
/// u32 rank, u32 dims, float32 values in row-major order. Little-endian.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

}  // namespace cgca
