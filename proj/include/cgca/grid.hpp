#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cgca/common.hpp"

namespace cgca {

/// Integer cell index on Z^3.
struct Coord {
  int i = 0;
  int j = 0;
  int k = 0;

  auto operator<=>(const Coord&) const = default;

  Coord operator+(const Coord& o) const { return {i + o.i, j + o.j, k + o.k}; }
  Coord operator-(const Coord& o) const { return {i - o.i, j - o.j, k - o.k}; }
};

std::ostream& operator<<(std::ostream& os, const Coord& c);

// Packed keys sort in the same order as lexicographic (i, j, k).
std::uint64_t pack(const Coord& c);
Coord unpack(std::uint64_t key);

enum class Metric { L1, Linf };

struct NeighborhoodSpec {
  int radius = 2;
  Metric metric = Metric::L1;
};

int distance(const Coord& a, const Coord& b, Metric metric);

/// All offsets within the spec's radius, sorted lexicographically.
std::vector<Coord> window_offsets(const NeighborhoodSpec& spec);

/// World placement of the cell lattice. The grid is centred on the origin:
/// cell c covers [origin + c*eps, origin + (c+1)*eps) with origin = -R*eps/2.
struct GridSpec {
  int resolution = 32;
  double voxel_size = 2.0 / 32.0;
  bool bounded = true;

  double origin() const { return -0.5 * resolution * voxel_size; }
  bool in_bounds(const Coord& c) const;
  Vec3 cell_center(const Coord& c) const;
  Vec3 cell_corner(const Coord& c) const;
  Coord cell_of(const Vec3& p) const;

  bool operator==(const GridSpec&) const = default;
};

/// Sparse voxel embedding: occupied cells with K-dimensional latent codes.
/// Absent cells have occupancy 0 and an implicit zero code.
class SparseState {
 public:
  using Storage = std::map<std::uint64_t, Eigen::VectorXd>;

  SparseState() = default;
  SparseState(int latent_dim, GridSpec grid) : latent_dim_(latent_dim), grid_(grid) {}

  int latent_dim() const { return latent_dim_; }
  const GridSpec& grid() const { return grid_; }

  bool empty() const { return cells_.empty(); }
  std::size_t size() const { return cells_.size(); }
  bool contains(const Coord& c) const { return cells_.count(pack(c)) != 0; }

  /// Inserts or overwrites; the code length must equal latent_dim().
  void set(const Coord& c, const Eigen::VectorXd& z);
  void erase(const Coord& c) { cells_.erase(pack(c)); }

  /// Code at c, or nullptr when c is unoccupied.
  const Eigen::VectorXd* find(const Coord& c) const;
  /// Code at c, or the zero vector when c is unoccupied.
  Eigen::VectorXd code_or_zero(const Coord& c) const;

  std::vector<Coord> coords() const;
  const Storage& storage() const { return cells_; }

  bool same_occupancy(const SparseState& other) const;
  bool operator==(const SparseState& other) const;

 private:
  int latent_dim_ = 0;
  GridSpec grid_{};
  Storage cells_;
};

/// Cells within the radius of any occupied cell, occupied cells included.
/// Sorted, deduplicated, clipped to the grid when bounded.
std::vector<Coord> neighborhood(const SparseState& state, const NeighborhoodSpec& spec);

/// G_x: for each target cell, the closest cell of N(state); ties go to the
/// lexicographically smallest coordinate. Returned sorted and deduplicated.
std::vector<Coord> nearest_target_cells(const SparseState& state, const SparseState& target,
                                        const NeighborhoodSpec& spec);

/// Occupies every cell that contains at least one point; codes are zero.
SparseState voxelize(std::span<const Vec3> points, const GridSpec& grid, int latent_dim);

/// Centres of the occupied cells, in key order.
PointList cell_centers(const SparseState& state);

void write_state_csv(std::ostream& os, const SparseState& state);
SparseState read_state_csv(std::istream& is);
void save_state(const std::string& path, const SparseState& state);
SparseState load_state(const std::string& path);

}  // namespace cgca
