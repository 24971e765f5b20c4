#include "cgca/autoencoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <tuple>

namespace cgca {

Autoencoder::Autoencoder(AutoencoderSpec spec) : spec_(std::move(spec)) {
  std::vector<int> enc{4};
  enc.insert(enc.end(), spec_.encoder_hidden.begin(), spec_.encoder_hidden.end());
  enc.push_back(spec_.latent_dim);
  encoder_ = Mlp("enc", MlpSpec{enc, Activation::Relu, Activation::None, 0});

  const int L = spec_.feature_dim;
  if (spec_.levels < 1) fail(ErrorCode::InvalidArgument, "pyramid needs at least one level");
  for (int k = 0; k < spec_.levels; ++k) {
    const int in = k == 0 ? spec_.latent_dim : L;
    levels_.emplace_back("pyr" + std::to_string(k), MlpSpec{{in, L, L}, Activation::Relu, Activation::None, 0});
  }
  const Activation out = spec_.mode == FieldMode::Signed ? Activation::Tanh : Activation::Sigmoid;
  tail_ = Mlp("dec", MlpSpec{{L, spec_.decoder_hidden, 1}, Activation::Relu, out, spec_.decoder_blocks});
}

void Autoencoder::init(ParamStore& params, Engine& rng) const {
  encoder_.init(params, rng);
  for (const Mlp& m : levels_) m.init(params, rng);
  tail_.init(params, rng);
}

void Autoencoder::init_zero(ParamStore& params) const {
  encoder_.init_zero(params);
  for (const Mlp& m : levels_) m.init_zero(params);
  tail_.init_zero(params);
}

SparseState encode(const ParamStore& params, const Autoencoder& ae, std::span<const PointSample> samples,
                   const GridSpec& grid, EncodeTape* tape) {
  const int K = ae.spec().latent_dim;
  const double eps = grid.voxel_size;
  if (samples.empty()) fail(ErrorCode::NoSurfaceCells, "no samples to encode");

  // Canonical order makes the result independent of the input order, bit for bit.
  struct Keyed {
    std::uint64_t key;
    const PointSample* s;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(samples.size());
  for (const PointSample& s : samples) {
    const Coord c = grid.cell_of(s.p);
    if (!GridSpec{grid.resolution, grid.voxel_size, true}.in_bounds(c)) continue;
    keyed.push_back({pack(c), &s});
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return std::make_tuple(a.key, a.s->p.x(), a.s->p.y(), a.s->p.z(), a.s->d) <
           std::make_tuple(b.key, b.s->p.x(), b.s->p.y(), b.s->p.z(), b.s->d);
  });

  std::vector<std::uint64_t> surface;
  for (const Keyed& k : keyed) {
    if (std::abs(k.s->d) <= 0.5 * eps && (surface.empty() || surface.back() != k.key)) surface.push_back(k.key);
  }
  if (surface.empty()) fail(ErrorCode::NoSurfaceCells, "no cell contains the surface");

  std::vector<int> sample_cell;
  std::vector<const PointSample*> kept;
  std::size_t cursor = 0;
  for (const Keyed& k : keyed) {
    while (cursor < surface.size() && surface[cursor] < k.key) ++cursor;
    if (cursor < surface.size() && surface[cursor] == k.key) {
      sample_cell.push_back(static_cast<int>(cursor));
      kept.push_back(k.s);
    }
  }

  Eigen::MatrixXd input(static_cast<Eigen::Index>(kept.size()), 4);
  for (std::size_t n = 0; n < kept.size(); ++n) {
    const Coord c = unpack(surface[static_cast<std::size_t>(sample_cell[n])]);
    const Vec3 local = (kept[n]->p - grid.cell_center(c)) / (0.5 * eps);
    input.row(static_cast<Eigen::Index>(n)) << local.transpose(), kept[n]->d / eps;
  }
  MlpTape local_tape;
  const Eigen::MatrixXd per_sample = ae.encoder().forward(params, input, tape ? &tape->mlp : &local_tape);

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(surface.size()), K);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(surface.size()));
  for (std::size_t n = 0; n < kept.size(); ++n) {
    sums.row(sample_cell[n]) += per_sample.row(static_cast<Eigen::Index>(n));
    counts[sample_cell[n]] += 1.0;
  }
  SparseState state(K, grid);
  for (std::size_t c = 0; c < surface.size(); ++c) {
    const auto row = static_cast<Eigen::Index>(c);
    state.set(unpack(surface[c]), (sums.row(row) / counts[row]).transpose());
  }
  if (tape) {
    tape->cells.clear();
    for (auto key : surface) tape->cells.push_back(unpack(key));
    tape->sample_cell = std::move(sample_cell);
    tape->inverse_count = counts.cwiseInverse();
  }
  return state;
}

void encode_backward(ParamStore& params, const Autoencoder& ae, const EncodeTape& tape,
                     const Eigen::MatrixXd& code_grad) {
  if (code_grad.rows() != static_cast<Eigen::Index>(tape.cells.size())) {
    fail(ErrorCode::ShapeMismatch, "code gradient rows differ from encoded cells");
  }
  Eigen::MatrixXd per_sample(static_cast<Eigen::Index>(tape.sample_cell.size()), code_grad.cols());
  for (std::size_t n = 0; n < tape.sample_cell.size(); ++n) {
    const int c = tape.sample_cell[n];
    per_sample.row(static_cast<Eigen::Index>(n)) = code_grad.row(c) * tape.inverse_count[c];
  }
  ae.encoder().backward(params, tape.mlp, per_sample);
}

int FeaturePyramid::Level::row_of(const Coord& c) const {
  auto it = index.find(pack(c));
  return it == index.end() ? -1 : it->second;
}

namespace {

Coord half(const Coord& c) { return {c.i >> 1, c.j >> 1, c.k >> 1}; }

}  // namespace

FeaturePyramid build_pyramid(const ParamStore& params, const Autoencoder& ae, const SparseState& state,
                             PyramidTape* tape) {
  if (state.empty()) fail(ErrorCode::EmptyState, "cannot build a pyramid from an empty state");
  const int n_levels = ae.spec().levels;
  const int L = ae.spec().feature_dim;
  FeaturePyramid pyr;
  pyr.grid = state.grid();
  pyr.feature_dim = L;
  pyr.levels.resize(static_cast<std::size_t>(n_levels));
  if (tape) {
    tape->mlp.assign(static_cast<std::size_t>(n_levels), {});
    tape->parent.assign(static_cast<std::size_t>(n_levels), {});
    tape->inverse_count.assign(static_cast<std::size_t>(n_levels), {});
  }

  Eigen::MatrixXd input(static_cast<Eigen::Index>(state.size()), state.latent_dim());
  {
    auto& lvl = pyr.levels[0];
    lvl.cells = state.coords();
    Eigen::Index r = 0;
    for (const auto& [key, z] : state.storage()) input.row(r++) = z.transpose();
  }
  for (int k = 0; k < n_levels; ++k) {
    auto& lvl = pyr.levels[static_cast<std::size_t>(k)];
    if (k > 0) {
      const auto& child = pyr.levels[static_cast<std::size_t>(k - 1)];
      std::vector<std::uint64_t> keys;
      keys.reserve(child.cells.size());
      for (const Coord& c : child.cells) keys.push_back(pack(half(c)));
      std::vector<std::uint64_t> uniq = keys;
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      std::vector<int> parent(keys.size());
      for (std::size_t n = 0; n < keys.size(); ++n) {
        parent[n] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), keys[n]) - uniq.begin());
      }
      lvl.cells.clear();
      for (auto key : uniq) lvl.cells.push_back(unpack(key));
      input = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(uniq.size()), L);
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(uniq.size()));
      for (std::size_t n = 0; n < parent.size(); ++n) {
        input.row(parent[n]) += child.features.row(static_cast<Eigen::Index>(n));
        counts[parent[n]] += 1.0;
      }
      input.array().colwise() /= counts.array();
      if (tape) {
        tape->parent[static_cast<std::size_t>(k)] = std::move(parent);
        tape->inverse_count[static_cast<std::size_t>(k)] = counts.cwiseInverse();
      }
    }
    lvl.features = ae.level_mlp(k).forward(params, input, tape ? &tape->mlp[static_cast<std::size_t>(k)] : nullptr);
    lvl.index.reserve(lvl.cells.size() * 2);
    for (std::size_t n = 0; n < lvl.cells.size(); ++n) lvl.index.emplace(pack(lvl.cells[n]), static_cast<int>(n));
  }
  return pyr;
}

namespace {

struct Corner {
  Coord node;
  double weight;
};

// Trilinear stencil for level k; throws when q leaves the world box.
std::array<Corner, 8> stencil(const GridSpec& grid, int level, const Vec3& q) {
  const double lo = grid.origin();
  const double hi = lo + grid.resolution * grid.voxel_size;
  if ((q.array() < lo).any() || (q.array() > hi).any()) fail(ErrorCode::OutOfBounds, "query outside world box");
  const double h = grid.voxel_size * static_cast<double>(1 << level);
  const Vec3 u = (q.array() - lo) / h;
  const Eigen::Vector3d base = u.array().floor();
  const Vec3 f = u - base;
  const Coord b{static_cast<int>(base.x()), static_cast<int>(base.y()), static_cast<int>(base.z())};
  std::array<Corner, 8> out;
  for (int n = 0; n < 8; ++n) {
    const int dx = n & 1;
    const int dy = (n >> 1) & 1;
    const int dz = (n >> 2) & 1;
    const double w = (dx ? f.x() : 1.0 - f.x()) * (dy ? f.y() : 1.0 - f.y()) * (dz ? f.z() : 1.0 - f.z());
    out[static_cast<std::size_t>(n)] = {b + Coord{dx, dy, dz}, w};
  }
  return out;
}

}  // namespace

Eigen::VectorXd interpolate(const FeaturePyramid& pyramid, const Vec3& q) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(pyramid.feature_dim);
  for (std::size_t k = 0; k < pyramid.levels.size(); ++k) {
    for (const Corner& c : stencil(pyramid.grid, static_cast<int>(k), q)) {
      const int row = pyramid.levels[k].row_of(c.node);
      if (row >= 0) out += c.weight * pyramid.levels[k].features.row(row).transpose();
    }
  }
  return out;
}

Eigen::MatrixXd interpolate_batch(const FeaturePyramid& pyramid, std::span<const Vec3> queries) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(queries.size()), pyramid.feature_dim);
  for (std::size_t n = 0; n < queries.size(); ++n) {
    out.row(static_cast<Eigen::Index>(n)) = interpolate(pyramid, queries[n]).transpose();
  }
  return out;
}

Eigen::VectorXd decode_batch(const ParamStore& params, const Autoencoder& ae, const FeaturePyramid& pyramid,
                             std::span<const Vec3> queries, DecodeTape* tape) {
  const Eigen::MatrixXd features = interpolate_batch(pyramid, queries);
  if (tape) tape->queries.assign(queries.begin(), queries.end());
  return ae.tail().forward(params, features, tape ? &tape->mlp : nullptr).col(0);
}

double decode(const ParamStore& params, const Autoencoder& ae, const SparseState& state, const Vec3& q) {
  const FeaturePyramid pyr = build_pyramid(params, ae, state);
  const Vec3 qs[1] = {q};
  return decode_batch(params, ae, pyr, qs)[0];
}

Eigen::MatrixXd decode_backward(ParamStore& params, const Autoencoder& ae, const FeaturePyramid& pyramid,
                                const PyramidTape& pyramid_tape, const DecodeTape& decode_tape,
                                const Eigen::VectorXd& value_grad) {
  const Eigen::MatrixXd feature_grad = ae.tail().backward(params, decode_tape.mlp, value_grad);
  const int L = pyramid.feature_dim;
  const std::size_t n_levels = pyramid.levels.size();
  std::vector<Eigen::MatrixXd> level_grad(n_levels);
  for (std::size_t k = 0; k < n_levels; ++k) {
    level_grad[k] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pyramid.levels[k].cells.size()), L);
  }
  for (std::size_t n = 0; n < decode_tape.queries.size(); ++n) {
    for (std::size_t k = 0; k < n_levels; ++k) {
      for (const Corner& c : stencil(pyramid.grid, static_cast<int>(k), decode_tape.queries[n])) {
        auto it = pyramid.levels[k].index.find(pack(c.node));
        if (it != pyramid.levels[k].index.end()) {
          level_grad[k].row(it->second) += c.weight * feature_grad.row(static_cast<Eigen::Index>(n));
        }
      }
    }
  }
  for (std::size_t k = n_levels; k-- > 0;) {
    Eigen::MatrixXd input_grad =
        ae.level_mlp(static_cast<int>(k)).backward(params, pyramid_tape.mlp[k], level_grad[k]);
    if (k == 0) return input_grad;
    const auto& parent = pyramid_tape.parent[k];
    const auto& inv = pyramid_tape.inverse_count[k];
    for (std::size_t child = 0; child < parent.size(); ++child) {
      level_grad[k - 1].row(static_cast<Eigen::Index>(child)) += input_grad.row(parent[child]) * inv[parent[child]];
    }
  }
  return {};
}

}  // namespace cgca
