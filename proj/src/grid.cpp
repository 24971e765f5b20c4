#include "cgca/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace cgca {

namespace {

constexpr int kBits = 21;
constexpr std::int64_t kBias = std::int64_t{1} << (kBits - 1);
constexpr std::uint64_t kMask = (std::uint64_t{1} << kBits) - 1;

std::uint64_t pack_axis(int v) {
  const std::int64_t shifted = static_cast<std::int64_t>(v) + kBias;
  if (shifted < 0 || shifted > static_cast<std::int64_t>(kMask)) {
    fail(ErrorCode::OutOfBounds, "coordinate component outside packable range");
  }
  return static_cast<std::uint64_t>(shifted);
}

}  // namespace

std::ostream& operator<<(std::ostream& os, const Coord& c) {
  return os << '(' << c.i << ',' << c.j << ',' << c.k << ')';
}

std::uint64_t pack(const Coord& c) {
  return (pack_axis(c.i) << (2 * kBits)) | (pack_axis(c.j) << kBits) | pack_axis(c.k);
}

Coord unpack(std::uint64_t key) {
  auto axis = [](std::uint64_t v) { return static_cast<int>(static_cast<std::int64_t>(v & kMask) - kBias); };
  return {axis(key >> (2 * kBits)), axis(key >> kBits), axis(key)};
}

int distance(const Coord& a, const Coord& b, Metric metric) {
  const int di = std::abs(a.i - b.i);
  const int dj = std::abs(a.j - b.j);
  const int dk = std::abs(a.k - b.k);
  if (metric == Metric::L1) return di + dj + dk;
  return std::max({di, dj, dk});
}

std::vector<Coord> window_offsets(const NeighborhoodSpec& spec) {
  if (spec.radius < 1) fail(ErrorCode::InvalidArgument, "neighborhood radius must be >= 1");
  std::vector<Coord> out;
  const int r = spec.radius;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j)
      for (int k = -r; k <= r; ++k) {
        const Coord d{i, j, k};
        if (distance(d, Coord{}, spec.metric) <= r) out.push_back(d);
      }
  return out;
}

bool GridSpec::in_bounds(const Coord& c) const {
  if (!bounded) return true;
  return c.i >= 0 && c.j >= 0 && c.k >= 0 && c.i < resolution && c.j < resolution && c.k < resolution;
}

Vec3 GridSpec::cell_corner(const Coord& c) const {
  const double o = origin();
  return {o + c.i * voxel_size, o + c.j * voxel_size, o + c.k * voxel_size};
}

Vec3 GridSpec::cell_center(const Coord& c) const {
  return cell_corner(c) + Vec3::Constant(0.5 * voxel_size);
}

Coord GridSpec::cell_of(const Vec3& p) const {
  const Vec3 u = (p.array() - origin()) / voxel_size;
  return {static_cast<int>(std::floor(u.x())), static_cast<int>(std::floor(u.y())),
          static_cast<int>(std::floor(u.z()))};
}

void SparseState::set(const Coord& c, const Eigen::VectorXd& z) {
  if (z.size() != latent_dim_) fail(ErrorCode::ShapeMismatch, "latent code length differs from K");
  cells_[pack(c)] = z;
}

const Eigen::VectorXd* SparseState::find(const Coord& c) const {
  auto it = cells_.find(pack(c));
  return it == cells_.end() ? nullptr : &it->second;
}

Eigen::VectorXd SparseState::code_or_zero(const Coord& c) const {
  if (const auto* z = find(c)) return *z;
  return Eigen::VectorXd::Zero(latent_dim_);
}

std::vector<Coord> SparseState::coords() const {
  std::vector<Coord> out;
  out.reserve(cells_.size());
  for (const auto& [key, z] : cells_) out.push_back(unpack(key));
  return out;
}

bool SparseState::same_occupancy(const SparseState& other) const {
  if (cells_.size() != other.cells_.size()) return false;
  return std::equal(cells_.begin(), cells_.end(), other.cells_.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; });
}

bool SparseState::operator==(const SparseState& other) const {
  if (latent_dim_ != other.latent_dim_ || !(grid_ == other.grid_)) return false;
  if (cells_.size() != other.cells_.size()) return false;
  auto a = cells_.begin();
  auto b = other.cells_.begin();
  for (; a != cells_.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    if (!(a->second.array() == b->second.array()).all()) return false;
  }
  return true;
}

std::vector<Coord> neighborhood(const SparseState& state, const NeighborhoodSpec& spec) {
  const auto offsets = window_offsets(spec);
  std::vector<std::uint64_t> keys;
  keys.reserve(state.size() * offsets.size());
  const GridSpec& grid = state.grid();
  for (const auto& [key, z] : state.storage()) {
    const Coord c = unpack(key);
    for (const Coord& d : offsets) {
      const Coord n = c + d;
      if (grid.in_bounds(n)) keys.push_back(pack(n));
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::vector<Coord> out;
  out.reserve(keys.size());
  for (auto key : keys) out.push_back(unpack(key));
  return out;
}

namespace {

/// Cells at exactly distance d from the origin.
void shell(int d, Metric metric, std::vector<Coord>& out) {
  out.clear();
  if (d == 0) {
    out.push_back({0, 0, 0});
    return;
  }
  if (metric == Metric::L1) {
    for (int a = -d; a <= d; ++a) {
      const int ra = d - std::abs(a);
      for (int b = -ra; b <= ra; ++b) {
        const int rest = ra - std::abs(b);
        out.push_back({a, b, -rest});
        if (rest != 0) out.push_back({a, b, rest});
      }
    }
    return;
  }
  for (int a = -d; a <= d; ++a)
    for (int b = -d; b <= d; ++b) {
      const bool face = std::abs(a) == d || std::abs(b) == d;
      for (int c = -d; c <= d; c += face ? 1 : 2 * d) out.push_back({a, b, c});
    }
}

/// Nearest domain cell found by growing shells around goal, ties to the
/// lexicographically smallest. Gives up once the searched volume exceeds
/// the domain size, where a linear scan is cheaper.
std::optional<Coord> nearest_by_shells(const Coord& goal, const std::unordered_set<std::uint64_t>& domain,
                                       Metric metric, std::size_t budget) {
  std::vector<Coord> cells;
  std::size_t visited = 0;
  for (int d = 1; visited < budget; ++d) {
    shell(d, metric, cells);
    visited += cells.size();
    std::optional<Coord> best;
    for (const Coord& off : cells) {
      const Coord c = goal + off;
      if (domain.count(pack(c)) && (!best || c < *best)) best = c;
    }
    if (best) return best;
  }
  return std::nullopt;
}

}  // namespace

std::vector<Coord> nearest_target_cells(const SparseState& state, const SparseState& target,
                                        const NeighborhoodSpec& spec) {
  if (state.empty()) fail(ErrorCode::EmptyState, "G_x needs a non-empty state");
  const auto domain = neighborhood(state, spec);
  std::unordered_set<std::uint64_t> in_domain;
  in_domain.reserve(domain.size() * 2);
  for (const Coord& c : domain) in_domain.insert(pack(c));

  std::vector<std::uint64_t> picked;
  picked.reserve(target.size());
  for (const auto& [key, z] : target.storage()) {
    if (in_domain.count(key)) {
      picked.push_back(key);
      continue;
    }
    const Coord goal = unpack(key);
    if (auto hit = nearest_by_shells(goal, in_domain, spec.metric, domain.size())) {
      picked.push_back(pack(*hit));
      continue;
    }
    int best = std::numeric_limits<int>::max();
    Coord best_cell{};
    // domain is sorted, so strict < keeps the lexicographically smallest tie.
    for (const Coord& c : domain) {
      const int d = distance(c, goal, spec.metric);
      if (d < best) {
        best = d;
        best_cell = c;
      }
    }
    picked.push_back(pack(best_cell));
  }
  std::sort(picked.begin(), picked.end());
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  std::vector<Coord> out;
  out.reserve(picked.size());
  for (auto key : picked) out.push_back(unpack(key));
  return out;
}

SparseState voxelize(std::span<const Vec3> points, const GridSpec& grid, int latent_dim) {
  SparseState state(latent_dim, grid);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(latent_dim);
  for (const Vec3& p : points) {
    const Coord c = grid.cell_of(p);
    if (!GridSpec{grid.resolution, grid.voxel_size, true}.in_bounds(c)) {
      fail(ErrorCode::OutOfBounds, "point maps outside the grid");
    }
    if (!state.contains(c)) state.set(c, zero);
  }
  return state;
}

PointList cell_centers(const SparseState& state) {
  PointList out;
  out.reserve(state.size());
  for (const auto& [key, z] : state.storage()) out.push_back(state.grid().cell_center(unpack(key)));
  return out;
}

void write_state_csv(std::ostream& os, const SparseState& state) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", state.grid().voxel_size);
  os << "# cgca-state K=" << state.latent_dim() << " R=" << state.grid().resolution << " eps=" << buf << '\n';
  for (const auto& [key, z] : state.storage()) {
    const Coord c = unpack(key);
    os << c.i << ',' << c.j << ',' << c.k;
    for (Eigen::Index d = 0; d < z.size(); ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", z[d]);
      os << ',' << buf;
    }
    os << '\n';
  }
}

SparseState read_state_csv(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) fail(ErrorCode::FormatError, "missing state header");
  int K = 0;
  int R = 0;
  double eps = 0.0;
  if (std::sscanf(header.c_str(), "# cgca-state K=%d R=%d eps=%lf", &K, &R, &eps) != 3 || K < 0 || R <= 0 ||
      !(eps > 0.0)) {
    fail(ErrorCode::FormatError, "bad state header: " + header);
  }
  SparseState state(K, GridSpec{R, eps, true});
  std::string line;
  Eigen::VectorXd z(K);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != static_cast<std::size_t>(3 + K)) fail(ErrorCode::FormatError, "bad state row: " + line);
    try {
      const Coord c{std::stoi(fields[0]), std::stoi(fields[1]), std::stoi(fields[2])};
      for (int d = 0; d < K; ++d) z[d] = std::strtod(fields[3 + d].c_str(), nullptr);
      state.set(c, z);
    } catch (const std::logic_error&) {
      fail(ErrorCode::FormatError, "bad state row: " + line);
    }
  }
  return state;
}

void save_state(const std::string& path, const SparseState& state) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path);
  write_state_csv(os, state);
  if (!os) fail(ErrorCode::IoError, "write failed for " + path);
}

SparseState load_state(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot read " + path);
  return read_state_csv(is);
}

}  // namespace cgca
