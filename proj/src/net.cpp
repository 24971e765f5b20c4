#include "cgca/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <unordered_map>

namespace cgca {

Param& ParamStore::add(const std::string& name, int rows, int cols) {
  if (entries_.count(name)) fail(ErrorCode::InvalidArgument, "duplicate parameter " + name);
  Param p;
  p.shape = rows == 1 ? std::vector<int>{cols} : std::vector<int>{rows, cols};
  p.value = Eigen::MatrixXd::Zero(rows, cols);
  p.grad = Eigen::MatrixXd::Zero(rows, cols);
  ++version_;
  return entries_.emplace(name, std::move(p)).first->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

Eigen::MatrixXd& ParamStore::mutable_value(const std::string& name) {
  ++version_;
  return const_cast<Param&>(at(name)).value;
}

Eigen::MatrixXd& ParamStore::grad(const std::string& name) { return const_cast<Param&>(at(name)).grad; }

void ParamStore::zero_grad() {
  for (auto& [name, p] : entries_) p.grad.setZero();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::merge(const ParamStore& other) {
  for (const auto& [name, p] : other.entries_) {
    if (entries_.count(name)) fail(ErrorCode::InvalidArgument, "duplicate parameter " + name);
    entries_.emplace(name, p);
  }
  ++version_;
}

ParamStore ParamStore::subset(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, p] : entries_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.entries_.emplace(name, p);
  }
  return out;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape != b->second.shape) return false;
    if (!(a->second.value.array() == b->second.value.array()).all()) return false;
  }
  return true;
}

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& x) {
  switch (act) {
    case Activation::Relu: return x.cwiseMax(0.0);
    case Activation::Tanh: return x.array().tanh().matrix();
    case Activation::Sigmoid: return (1.0 / (1.0 + (-x.array()).exp())).matrix();
    case Activation::None: return x;
  }
  return x;
}

namespace {

// Derivative expressed through the activation output y.
void scale_by_derivative(Activation act, const Eigen::MatrixXd& y, Eigen::MatrixXd& g) {
  switch (act) {
    case Activation::Relu: g.array() *= (y.array() > 0.0).cast<double>(); break;
    case Activation::Tanh: g.array() *= 1.0 - y.array().square(); break;
    case Activation::Sigmoid: g.array() *= y.array() * (1.0 - y.array()); break;
    case Activation::None: break;
  }
}

}  // namespace

Mlp::Mlp(std::string prefix, MlpSpec spec) : prefix_(std::move(prefix)), spec_(std::move(spec)) {
  const auto& w = spec_.widths;
  if (w.size() < 2) fail(ErrorCode::InvalidArgument, "MLP needs at least input and output widths");
  for (int v : w) {
    if (v <= 0) fail(ErrorCode::InvalidArgument, "MLP widths must be positive");
  }
  const std::size_t hidden = w.size() - 2;
  if (spec_.residual_blocks > 0 && hidden == 0) {
    fail(ErrorCode::InvalidArgument, "residual blocks need a hidden layer");
  }
  auto linear = [&](const std::string& tag, int in, int out, Activation act) {
    ops_.push_back({prefix_ + "." + tag + ".W", prefix_ + "." + tag + ".b", in, out, act, -1});
  };
  for (std::size_t l = 0; l < hidden; ++l) linear("l" + std::to_string(l), w[l], w[l + 1], spec_.activation);
  const int width = w[hidden];
  for (int b = 0; b < spec_.residual_blocks; ++b) {
    const int first = static_cast<int>(ops_.size());
    linear("res" + std::to_string(b) + ".a", width, width, spec_.activation);
    linear("res" + std::to_string(b) + ".b", width, width, Activation::None);
    ops_.back().residual_from = first;
  }
  linear("out", width, w.back(), spec_.output_activation);
}

void Mlp::init(ParamStore& params, Engine& rng) const {
  for (const Op& op : ops_) {
    Param& W = params.add(op.weight, op.in, op.out);
    params.add(op.bias, 1, op.out);
    const double a = std::sqrt(6.0 / (op.in + op.out));
    std::uniform_real_distribution<double> U(-a, a);
    for (Eigen::Index c = 0; c < W.value.cols(); ++c)
      for (Eigen::Index r = 0; r < W.value.rows(); ++r) W.value(r, c) = U(rng);
  }
}

void Mlp::init_zero(ParamStore& params) const {
  for (const Op& op : ops_) {
    params.add(op.weight, op.in, op.out);
    params.add(op.bias, 1, op.out);
  }
}

Eigen::MatrixXd Mlp::forward(const ParamStore& params, const Eigen::MatrixXd& input, MlpTape* tape) const {
  if (input.cols() != input_width()) {
    fail(ErrorCode::ShapeMismatch, prefix_ + ": input width " + std::to_string(input.cols()) + " != " +
                                       std::to_string(input_width()));
  }
  std::vector<Eigen::MatrixXd> local;
  Eigen::MatrixXd pre = input * params.value(ops_.front().weight);
  if (tape) {
    tape->external_first = false;
    tape->inputs.assign(ops_.size(), {});
    tape->inputs.front() = input;
  } else {
    local.resize(ops_.size());
  }
  return run(params, std::move(pre), tape, local);
}

Eigen::MatrixXd Mlp::forward_from_product(const ParamStore& params, Eigen::MatrixXd first_product,
                                          MlpTape* tape) const {
  if (first_product.cols() != ops_.front().out) fail(ErrorCode::ShapeMismatch, prefix_ + ": first product width");
  std::vector<Eigen::MatrixXd> local;
  if (tape) {
    tape->external_first = true;
    tape->inputs.assign(ops_.size(), {});
  } else {
    local.resize(ops_.size());
  }
  return run(params, std::move(first_product), tape, local);
}

Eigen::MatrixXd Mlp::run(const ParamStore& params, Eigen::MatrixXd first_pre, MlpTape* tape,
                         std::vector<Eigen::MatrixXd>& local) const {
  if (tape) {
    tape->version = params.version();
    tape->outputs.assign(ops_.size(), {});
  }
  Eigen::MatrixXd x;
  for (std::size_t idx = 0; idx < ops_.size(); ++idx) {
    const Op& op = ops_[idx];
    Eigen::MatrixXd pre;
    if (idx == 0) {
      pre = std::move(first_pre);
    } else {
      Eigen::MatrixXd& stored = tape ? tape->inputs[idx] : local[idx];
      stored = std::move(x);
      pre = stored * params.value(op.weight);
    }
    pre.rowwise() += params.value(op.bias).row(0);
    Eigen::MatrixXd y = apply_activation(op.act, pre);
    if (op.residual_from >= 0) y += tape ? tape->inputs[op.residual_from] : local[op.residual_from];
    if (tape) tape->outputs[idx] = y;
    x = std::move(y);
  }
  if (tape) tape->result = x;
  return x;
}

Eigen::MatrixXd Mlp::backward(ParamStore& params, const MlpTape& tape, const Eigen::MatrixXd& output_grad) const {
  if (tape.version != params.version()) fail(ErrorCode::StaleTape, prefix_ + ": parameters changed since forward");
  if (tape.inputs.size() != ops_.size()) fail(ErrorCode::StaleTape, prefix_ + ": tape does not belong to this MLP");
  if (output_grad.rows() != tape.result.rows() || output_grad.cols() != tape.result.cols()) {
    fail(ErrorCode::ShapeMismatch, prefix_ + ": output gradient shape");
  }
  std::vector<Eigen::MatrixXd> skip(ops_.size());
  Eigen::MatrixXd g = output_grad;
  for (std::size_t n = ops_.size(); n-- > 0;) {
    const Op& op = ops_[n];
    if (op.residual_from >= 0) {
      auto& s = skip[op.residual_from];
      if (s.size() == 0) s = g;
      else s += g;
    }
    scale_by_derivative(op.act, tape.outputs[n], g);
    params.grad(op.bias).row(0) += g.colwise().sum();
    if (n == 0 && tape.external_first) return g;
    params.grad(op.weight).noalias() += tape.inputs[n].transpose() * g;
    Eigen::MatrixXd next = g * params.value(op.weight).transpose();
    if (skip[n].size() != 0) next += skip[n];
    g = std::move(next);
  }
  return g;
}

int feature_width(std::size_t window_size, int latent_dim, bool conditioned) {
  return static_cast<int>(window_size) * (conditioned ? 2 * latent_dim + 1 : latent_dim + 1);
}

Eigen::MatrixXd gather_feature_matrix(const SparseState& state, std::span<const Coord> centers,
                                      std::span<const Coord> offsets, const SparseState* cond) {
  const int K = state.latent_dim();
  if (cond && cond->latent_dim() != K) fail(ErrorCode::ShapeMismatch, "conditioning state has a different K");
  const int per = cond ? 2 * K + 1 : K + 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(centers.size()),
                                              static_cast<Eigen::Index>(offsets.size()) * per);
  for (std::size_t r = 0; r < centers.size(); ++r) {
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      const Coord c = centers[r] + offsets[o];
      const Eigen::Index base = static_cast<Eigen::Index>(o) * per;
      const Eigen::VectorXd* z = state.find(c);
      const Eigen::VectorXd* zc = cond ? cond->find(c) : nullptr;
      if (!z && !zc) continue;
      out(r, base) = 1.0;
      if (cond) {
        if (zc) out.row(r).segment(base + 1, K) = zc->transpose();
        if (z) out.row(r).segment(base + 1 + K, K) = z->transpose();
      } else {
        out.row(r).segment(base + 1, K) = z->transpose();
      }
    }
  }
  return out;
}

WindowGather gather_window(const SparseState& state, std::span<const Coord> centers, std::span<const Coord> offsets,
                           const SparseState* cond) {
  const int K = state.latent_dim();
  if (cond && cond->latent_dim() != K) fail(ErrorCode::ShapeMismatch, "conditioning state has a different K");
  WindowGather out;
  out.rows = static_cast<Eigen::Index>(centers.size());
  out.per = cond ? 2 * K + 1 : K + 1;
  out.pairs.resize(offsets.size());

  std::unordered_map<std::uint64_t, int> row_of;
  row_of.reserve(centers.size() * 2);
  for (std::size_t r = 0; r < centers.size(); ++r) row_of.emplace(pack(centers[r]), static_cast<int>(r));

  std::vector<Coord> cells;
  for (const auto& [key, z] : state.storage()) cells.push_back(unpack(key));
  if (cond) {
    for (const auto& [key, z] : cond->storage())
      if (!state.contains(unpack(key))) cells.push_back(unpack(key));
    std::sort(cells.begin(), cells.end());
  }
  out.sources = Eigen::MatrixXd::Zero(out.per, static_cast<Eigen::Index>(cells.size()));
  for (std::size_t s = 0; s < cells.size(); ++s) {
    const auto col = static_cast<Eigen::Index>(s);
    out.sources(0, col) = 1.0;
    const Eigen::VectorXd* z = state.find(cells[s]);
    if (cond) {
      if (const Eigen::VectorXd* zc = cond->find(cells[s])) out.sources.col(col).segment(1, K) = *zc;
      if (z) out.sources.col(col).segment(1 + K, K) = *z;
    } else {
      out.sources.col(col).segment(1, K) = *z;
    }
    for (std::size_t o = 0; o < offsets.size(); ++o) {
      const auto it = row_of.find(pack(cells[s] - offsets[o]));
      if (it != row_of.end()) out.pairs[o].emplace_back(it->second, static_cast<int>(s));
    }
  }
  return out;
}

Eigen::MatrixXd window_product(const WindowGather& gather, const Eigen::MatrixXd& weight) {
  if (weight.rows() != static_cast<Eigen::Index>(gather.pairs.size()) * gather.per) {
    fail(ErrorCode::ShapeMismatch, "window weight rows do not match the gather");
  }
  // Column-per-row layout keeps the scatter contiguous.
  Eigen::MatrixXd out_t = Eigen::MatrixXd::Zero(weight.cols(), gather.rows);
  Eigen::MatrixXd part;
  for (std::size_t o = 0; o < gather.pairs.size(); ++o) {
    if (gather.pairs[o].empty()) continue;
    part.noalias() = weight.middleRows(static_cast<Eigen::Index>(o) * gather.per, gather.per).transpose() *
                     gather.sources;
    for (const auto& [row, src] : gather.pairs[o]) out_t.col(row) += part.col(src);
  }
  return out_t.transpose();
}

void window_product_backward(const WindowGather& gather, const Eigen::MatrixXd& product_grad,
                             Eigen::MatrixXd& weight_grad) {
  const Eigen::MatrixXd g_t = product_grad.transpose();
  Eigen::MatrixXd routed(g_t.rows(), gather.sources.cols());
  for (std::size_t o = 0; o < gather.pairs.size(); ++o) {
    if (gather.pairs[o].empty()) continue;
    routed.setZero();
    for (const auto& [row, src] : gather.pairs[o]) routed.col(src) = g_t.col(row);
    weight_grad.middleRows(static_cast<Eigen::Index>(o) * gather.per, gather.per).noalias() +=
        gather.sources * routed.transpose();
  }
}

Eigen::VectorXd gather_features(const SparseState& state, const Coord& center, std::span<const Coord> offsets,
                                const SparseState* cond) {
  const Coord centers[1] = {center};
  return gather_feature_matrix(state, centers, offsets, cond).row(0).transpose();
}

namespace {

void check_finite_grads(const ParamStore& params) {
  for (const auto& [name, p] : params.entries()) {
    if (!p.grad.allFinite()) fail(ErrorCode::NonFiniteGradient, "parameter " + name);
  }
}

}  // namespace

void sgd_step(ParamStore& params, double lr) {
  check_finite_grads(params);
  for (auto& [name, p] : params.mutable_entries()) {
    p.value -= lr * p.grad;
    p.grad.setZero();
  }
}

void Adam::step(ParamStore& params, double lr) {
  check_finite_grads(params);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params.mutable_entries()) {
    auto [it, inserted] = moments_.try_emplace(name);
    auto& [m, v] = it->second;
    if (inserted) {
      m = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
      v = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
    }
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    p.grad.setZero();
  }
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
  return true;
}

constexpr char kMagic[5] = {'C', 'G', 'C', 'A', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path);
  os.write(kMagic, sizeof kMagic);
  for (const auto& [name, p] : params.entries()) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const float f = static_cast<float>(p.value(r, c));
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
      }
  }
  if (!os) fail(ErrorCode::IoError, "write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot read " + path);
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) fail(ErrorCode::FormatError, "bad checkpoint magic");
  ParamStore params;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    if (name_len > 4096) fail(ErrorCode::FormatError, "implausible name length");
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !get_u32(is, rank) || rank < 1 || rank > 2) {
      fail(ErrorCode::FormatError, "truncated checkpoint entry");
    }
    std::uint32_t dims[2] = {1, 1};
    for (std::uint32_t d = 0; d < rank; ++d) {
      if (!get_u32(is, dims[d])) fail(ErrorCode::FormatError, "truncated dims");
    }
    const int rows = rank == 1 ? 1 : static_cast<int>(dims[0]);
    const int cols = rank == 1 ? static_cast<int>(dims[0]) : static_cast<int>(dims[1]);
    Param& p = params.add(name, rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        std::uint32_t bits;
        if (!get_u32(is, bits)) fail(ErrorCode::FormatError, "truncated values for " + name);
        float f;
        std::memcpy(&f, &bits, 4);
        p.value(r, c) = f;
      }
  }
  return params;
}

}  // namespace cgca
