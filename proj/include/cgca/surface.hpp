#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cgca/autoencoder.hpp"
#include "cgca/common.hpp"
#include "cgca/grid.hpp"
#include "cgca/net.hpp"

namespace cgca {

/// Implicit-field samples on the fine lattice of spacing eps / u. Fine node n
/// sits at the centre of fine cell n: origin + (n + 0.5) * eps / u.
struct ScalarField {
  GridSpec grid;
  int upsample = 4;
  FieldMode mode = FieldMode::Signed;
  std::map<std::uint64_t, double> samples;  // packed fine index -> value

  double spacing() const { return grid.voxel_size / upsample; }
  Vec3 node_position(const Coord& n) const;
  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

/// Batched field evaluator: one value per query position.
using FieldEvaluator = std::function<Eigen::VectorXd(std::span<const Vec3>)>;

/// Fine nodes inside the 3x3x3 dilation of the occupied cells, clipped to
/// the grid, u^3 nodes per coarse cell. Sorted by packed key.
std::vector<Coord> field_nodes(const SparseState& state, int upsample);

/// Every fine node of the grid.
std::vector<Coord> all_field_nodes(const GridSpec& grid, int upsample);

ScalarField sample_field(const GridSpec& grid, int upsample, FieldMode mode, std::span<const Coord> nodes,
                         const FieldEvaluator& evaluate);

/// Evaluates `evaluate` at every node of field_nodes(state, u).
ScalarField dense_query(const SparseState& state, int upsample, FieldMode mode, const FieldEvaluator& evaluate);

/// Decodes the state's implicit field near its occupied cells.
ScalarField dense_query(const ParamStore& params, const Autoencoder& ae, const SparseState& state,
                        int upsample = 4);

/// Node positions whose distance value is below tau (|value| for signed fields).
PointList extract_points(const ScalarField& field, double tau = 0.5);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

/// Marching cubes over every cube touching a sampled node. Missing nodes count
/// as outside (+1). Unsigned fields are meshed as the iso level of |value|,
/// which gives a shell around the surface rather than the surface itself.
Mesh marching_cubes(const ScalarField& field, double iso = 0.0);

double mesh_area(const Mesh& mesh);

void export_obj(const Mesh& mesh, const std::string& path);
void export_xyz(std::span<const Vec3> points, const std::string& path);
PointList import_xyz(const std::string& path);

}  // namespace cgca
